import numpy as np
import pytest

from name_demand.core.errors import ContractionError, DataValidationError
from name_demand.core.types import MarketData, SimplexVector, ThetaPoint
from name_demand.logit_engine import (
    QuadratureRule,
    blp_contraction,
    contract,
    heterogeneity,
    individual_probabilities,
    invert_logit,
    logit_shares,
    mixture_shares,
    rc_shares,
)


def _market(rng, J, k=1):
    X = rng.standard_normal((J, k))
    P = np.abs(rng.standard_normal(J)) + 0.5
    return MarketData(0, X, P, [], np.full(J + 1, 1.0 / (J + 1)))


def test_logit_shares_match_closed_form():
    market = MarketData(0, [[1.0], [0.0]], [1.0, 0.5], [], [0.4, 0.3, 0.3])
    theta = ThetaPoint([2.0], 1.0)
    shares = logit_shares(theta, np.array([0.0, 0.5]), market)
    e = np.exp([1.0, 0.0])
    np.testing.assert_allclose(shares.probs, np.concatenate([[1.0], e]) / (1.0 + e.sum()), rtol=1e-12)


def test_logit_inversion_round_trip(rng):
    worst = 0.0
    for _ in range(1000):
        J = int(rng.integers(1, 7))
        shares = SimplexVector(rng.dirichlet(np.full(J + 1, 2.0)))
        delta = invert_logit(shares)
        forward = individual_probabilities(delta, np.zeros((1, J)))[0]
        worst = max(worst, float(np.max(np.abs(forward - shares.probs))))
    assert worst < 1e-12


def test_individual_probabilities_stable_for_large_utilities():
    probs = individual_probabilities(np.array([800.0, 799.0]), np.zeros((1, 2)))[0]
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0)
    assert probs[1] > probs[2] > probs[0]


@pytest.mark.parametrize("instances", [100, pytest.param(1000, marks=pytest.mark.slow)])
def test_blp_contraction_round_trip(rng, instances):
    quad = QuadratureRule.draws(k=2, R=200, seed=1)
    worst = 0.0
    for _ in range(instances):
        J = int(rng.integers(1, 7))
        market = _market(rng, J, k=2)
        theta = ThetaPoint(rng.normal(size=2), 1.0, rng.uniform(0.0, 1.0, size=2))
        xi = rng.normal(0.0, 0.5, J)
        target = rc_shares(theta, xi, market, quad)
        result = blp_contraction(target, theta, market, quad)
        implied = mixture_shares(result.delta, heterogeneity(theta, market, quad), quad.weights)
        worst = max(worst, float(np.max(np.abs(implied - target.probs))))
        np.testing.assert_allclose(result.xi, xi, atol=1e-8)
    assert worst < 1e-8


def test_contraction_without_heterogeneity_is_logit_inversion():
    target = SimplexVector([0.5, 0.3, 0.2])
    result = contract(target, np.zeros((3, 2)), np.full(3, 1 / 3))
    assert result.iterations == 0
    np.testing.assert_allclose(result.delta, invert_logit(target))


def test_contraction_reports_failure():
    target = SimplexVector([0.2, 0.5, 0.3])
    mu = np.array([[3.0, -3.0], [-3.0, 3.0]])
    with pytest.raises(ContractionError) as info:
        contract(target, mu, np.array([0.5, 0.5]), delta0=np.zeros(2), max_iter=1)
    assert info.value.iterations == 1
    assert info.value.residual > 0.0


def test_contraction_residuals_never_increase(rng):
    quad = QuadratureRule.draws(k=1, R=50, seed=0)
    for _ in range(50):
        J = int(rng.integers(1, 7))
        market = _market(rng, J)
        theta = ThetaPoint(rng.normal(size=1), 1.0, rng.uniform(0.1, 1.0, size=1))
        target = rc_shares(theta, rng.normal(0.0, 0.5, J), market, quad)
        history = np.asarray(blp_contraction(target, theta, market, quad).residual_history)
        assert history[-1] < 1e-12
        # rounding can leave the last steps flat, never rising
        assert np.all(np.diff(history) <= 1e-14)


class TestQuadratureRule:
    def test_draws_are_reproducible(self):
        a = QuadratureRule.draws(2, 100, seed=4)
        b = QuadratureRule.draws(2, 100, seed=4)
        np.testing.assert_array_equal(a.nodes, b.nodes)
        assert a.weights.sum() == pytest.approx(1.0)
        assert a.seed == 4

    def test_halton_nodes(self):
        rule = QuadratureRule.draws(3, 64, seed=0, distribution="halton")
        assert rule.nodes.shape == (64, 3)
        assert np.all(np.isfinite(rule.nodes))
        assert abs(rule.nodes.mean()) < 0.2

    def test_unknown_distribution(self):
        with pytest.raises(DataValidationError):
            QuadratureRule.draws(1, 10, distribution="sobol")

    def test_weights_must_sum_to_one(self):
        with pytest.raises(DataValidationError):
            QuadratureRule(np.zeros((2, 1)), np.array([0.5, 0.6]))


def test_heterogeneity_without_sigma_is_zero(rng):
    market = _market(rng, 2)
    quad = QuadratureRule.draws(1, 10)
    np.testing.assert_array_equal(heterogeneity(ThetaPoint([1.0], 1.0), market, quad), np.zeros((10, 2)))
