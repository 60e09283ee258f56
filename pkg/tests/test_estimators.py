import numpy as np
import pytest

from name_demand.core.config_manager import MisspecConfig, OptimizerConfig
from name_demand.core.dataset import Dataset, IndividualSample, validate_dataset
from name_demand.core.errors import DataValidationError, EmptyRegionError
from name_demand.core.types import MarketData, MomentSpec, SimplexVector
from name_demand.estimators import (
    Box,
    BunchingSpec,
    ParameterLayout,
    ParametricObjective,
    ParametricSpec,
    default_name_moments,
    estimate_bunching,
    estimate_homogeneous,
    estimate_name,
    estimate_parametric,
    floor_shares,
    implied_probabilities,
    logit_start,
    predicted_targets,
    prices_vary,
)
from name_demand.first_stage import default_z0, fit
from name_demand.logit_engine import QuadratureRule, invert_logit
from name_demand.moments import build_moments, spec_loss
from name_demand.simulation.dgp import exact_share_source, gen_misspec


class TestParameterLayout:
    def test_pack_unpack(self):
        layout = ParameterLayout(k=2, free_alpha=True, random_coefficients=True)
        x = layout.pack([1.0, 2.0], 0.5, [0.1, -0.3])
        assert layout.size == x.size == 5
        theta = layout.unpack(x, np.array([0.0]))
        np.testing.assert_array_equal(theta.beta, [1.0, 2.0])
        assert theta.alpha == 0.5
        np.testing.assert_array_equal(theta.sigma, [0.1, 0.3])

    def test_fixed_alpha(self):
        layout = ParameterLayout(k=1, free_alpha=False)
        theta = layout.unpack(layout.pack([2.0], 9.0), np.array([0.0]))
        assert layout.size == 1
        assert theta.alpha == 0.0


def test_floor_shares_renormalises():
    shares, floored = floor_shares(np.array([0.5, 0.5, 0.0]), market_id=0)
    assert floored
    assert shares.is_interior()
    assert shares.probs.sum() == pytest.approx(1.0)
    _, untouched = floor_shares(np.array([0.5, 0.25, 0.25]), market_id=0)
    assert not untouched


class TestName:
    def test_exact_shares_recover_the_truth(self, noiseless_data):
        dataset, truth = noiseless_data
        z0 = np.array([0.3])
        result = estimate_name(dataset, exact_share_source(dataset, truth), z0)
        assert result.estimator == "name"
        assert result.converged
        assert result.alpha == pytest.approx(truth.alpha, abs=1e-5)
        np.testing.assert_allclose(result.theta.beta, truth.beta_at(0.3), atol=1e-5)
        np.testing.assert_array_equal(result.theta.eval_point, z0)
        np.testing.assert_allclose(result.xi.values, 0.0, atol=1e-4)

    def test_first_stage_estimate_is_close(self, misspec_data):
        dataset, truth = misspec_data
        predictor = fit(dataset, lam=1.0)
        result = estimate_name(dataset, predictor, np.array([0.0]))
        assert result.xi.shape == (dataset.M, dataset.J)
        assert abs(result.alpha - truth.alpha) < 0.5
        assert "floored_markets" in result.diagnostics

    def test_base_point_dimension_checked(self, misspec_data):
        dataset, truth = misspec_data
        with pytest.raises(DataValidationError, match="dimension mismatch"):
            estimate_name(dataset, exact_share_source(dataset, truth), np.array([0.0, 1.0]))

    def test_boundary_predictions_are_floored(self, misspec_data):
        dataset, truth = misspec_data
        exact = exact_share_source(dataset, truth)

        def source(z, market_id):
            if market_id == dataset.market_ids[0]:
                return SimplexVector([0.5, 0.5, 0.0])
            return exact(z, market_id)

        result = estimate_name(dataset, source, np.array([0.0]))
        assert result.diagnostics["floored_markets"] == 1

    def test_random_coefficients_join_the_search(self, noiseless_data):
        dataset, truth = noiseless_data
        quad = QuadratureRule.draws(dataset.k, 50, seed=2)
        result = estimate_name(dataset, exact_share_source(dataset, truth), np.array([0.0]), quad=quad,
                               optimizer=OptimizerConfig(max_iter=60))
        assert result.theta.sigma is not None
        assert result.quadrature_seed == 2
        assert np.isfinite(result.final_loss)


def test_homogeneous_logit_is_ols_on_observed_shares(misspec_data):
    dataset, _ = misspec_data
    result = estimate_homogeneous(dataset)
    delta = np.vstack([invert_logit(m.observed_shares) for m in dataset.markets])
    beta, alpha = logit_start(dataset, delta)
    assert result.alpha == pytest.approx(alpha, abs=1e-5)
    np.testing.assert_allclose(result.theta.beta, beta, atol=1e-5)


def test_zero_prices_fix_alpha(sparse_data):
    dataset, _ = sparse_data
    assert not prices_vary(dataset)
    result = estimate_homogeneous(dataset)
    assert result.alpha == 0.0
    assert result.diagnostics["moments"] == ["x_xi"]


class TestParametricSpec:
    def test_parse(self):
        spec = ParametricSpec.parse("1 + z + z^2")
        assert spec.n_gamma == 3
        assert spec.label == "1+z+z^2"
        np.testing.assert_allclose(spec.beta_at(np.array([[2.0]]), np.array([1.0, 0.5, 0.5])), [[4.0]])

    def test_one_block_per_coefficient(self):
        spec = ParametricSpec.parse("1+z[1];1", k=2)
        assert spec.k == 2
        assert spec.n_gamma == 3
        assert spec.label == "1+z[1];1"

    def test_single_block_is_reused(self):
        assert ParametricSpec.parse("1+z", k=3).n_gamma == 6

    @pytest.mark.parametrize("text", ["1+x", "z^", "", "1;1;1"])
    def test_rejects_bad_specs(self, text):
        with pytest.raises(DataValidationError):
            ParametricSpec.parse(text, k=2)

    def test_presets(self):
        assert ParametricSpec.oracle().default_moments() == ("x_xi", "p_xi", "z_xd", "z2_xd")
        assert ParametricSpec.misspecified().default_moments() == ("x_xi", "p_xi", "z2_xd")
        assert ParametricSpec.misspecified().default_moments(free_alpha=False) == ("x_xi", "z2_xd")


class TestNestedFixedPoint:
    def test_implied_probabilities_reproduce_observed_shares(self, misspec_data):
        dataset, _ = misspec_data
        probabilities = implied_probabilities(dataset, ParametricSpec.oracle(), np.array([1.0, 0.5, 0.5]))
        for market in dataset.markets:
            probs = probabilities[market.market_id]
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
            np.testing.assert_allclose(probs.mean(axis=0), market.observed_shares.probs, atol=1e-10)

    def test_inversions_are_cached(self, misspec_data):
        dataset, _ = misspec_data
        objective = ParametricObjective(dataset, ParametricSpec.misspecified(), MomentSpec(("x_xi", "p_xi")))
        x = np.array([1.0, 0.3, 1.0])
        assert objective(x) == objective(x)
        assert objective._invert.cache_info().hits >= 1

    def test_failed_inversion_scores_the_penalty(self, misspec_data):
        dataset, _ = misspec_data
        objective = ParametricObjective(dataset, ParametricSpec.misspecified(), MomentSpec(("x_xi", "p_xi")))
        objective.contraction = objective.contraction.model_copy(update={"max_iter": 1})
        assert objective(np.array([1.0, 3.0, 1.0])) == 1e10
        assert objective.failures == 1

    def test_estimate(self):
        dataset, _ = gen_misspec(MisspecConfig(M=8, N=400), seed=1)
        result = estimate_parametric(dataset, ParametricSpec.misspecified(),
                                     optimizer=OptimizerConfig(max_iter=40), estimator="misspecified")
        assert result.estimator == "misspecified"
        assert len(result.diagnostics["gamma"]) == 2
        assert result.diagnostics["spec"] == "1+z^2"
        assert result.xi.shape == (dataset.M, dataset.J)
        assert np.isfinite(result.alpha)

    def test_spec_must_match_characteristics(self, misspec_data):
        dataset, _ = misspec_data
        with pytest.raises(DataValidationError):
            ParametricObjective(dataset, ParametricSpec.parse("1", k=2), MomentSpec())


class TestBunching:
    def test_boxes_are_half_open(self):
        box = Box([0.0], [1.0])
        np.testing.assert_array_equal(box.contains(np.array([[0.0], [0.5], [1.0]])), [True, True, False])

    def test_invalid_box(self):
        with pytest.raises(DataValidationError):
            Box([1.0], [1.0])

    def test_overlapping_regions_rejected(self):
        with pytest.raises(DataValidationError, match="disjoint"):
            BunchingSpec((Box([0.0], [2.0]), Box([1.0], [3.0])))

    def test_cuts_partition_the_line(self):
        spec = BunchingSpec.from_cuts(p=1, column=0, cuts=[0.0, 1.0])
        assert spec.K == 3
        np.testing.assert_array_equal(spec.assign(np.array([[-5.0], [0.0], [0.5], [1.0]])), [0, 1, 1, 2])

    def test_uncovered_points_rejected(self):
        spec = BunchingSpec((Box([0.0], [1.0]),))
        with pytest.raises(DataValidationError, match="cover"):
            spec.assign(np.array([[2.0]]))

    def test_one_result_per_region(self, misspec_data):
        dataset, _ = misspec_data
        results = estimate_bunching(dataset, BunchingSpec.from_quantiles(dataset, column=0, K=2))
        assert [r.diagnostics["region"] for r in results] == [0, 1]
        for r in results:
            assert r.estimator == "bunching"
            assert r.diagnostics["markets_used"] + r.diagnostics["markets_dropped"] == dataset.M

    def test_single_region_is_the_homogeneous_logit(self, misspec_data):
        dataset, _ = misspec_data
        (result,) = estimate_bunching(dataset, BunchingSpec.from_quantiles(dataset, K=1))
        assert result.alpha == pytest.approx(estimate_homogeneous(dataset).alpha, abs=1e-6)

    def test_empty_region(self, misspec_data):
        dataset, _ = misspec_data
        with pytest.raises(EmptyRegionError):
            estimate_bunching(dataset, BunchingSpec.from_cuts(1, 0, [100.0]))


def _piecewise_alpha_data(seed, alphas=(0.5, 1.5), M=60, N=2000, J=2):
    """alpha = alphas[0] for Z < 0 and alphas[1] above; beta = 1 and xi = 0"""
    rng = np.random.default_rng(seed)
    markets, samples = [], {}
    for m in range(M):
        X = rng.normal(0.0, 0.5, (J, 1))
        P = rng.uniform(0.5, 1.5, J)
        Z = rng.standard_normal(N)
        alpha = np.where(Z < 0.0, alphas[0], alphas[1])
        utility = np.zeros((N, J + 1))
        utility[:, 1:] = X[None, :, 0] - alpha[:, None] * P[None, :]
        d = np.argmax(utility + rng.gumbel(size=(N, J + 1)), axis=1)
        markets.append(MarketData(m, X, P, [], np.bincount(d, minlength=J + 1) / N))
        samples[m] = IndividualSample(m, Z[:, None], d)
    return validate_dataset(Dataset(tuple(markets), samples))


def test_bunching_recovers_piecewise_constant_alpha():
    dataset = _piecewise_alpha_data(seed=8)
    results = estimate_bunching(dataset, BunchingSpec.from_cuts(1, 0, [0.0]))
    assert [r.alpha for r in results] == pytest.approx([0.5, 1.5], abs=0.1)
    for r in results:
        assert r.theta.beta[0] == pytest.approx(1.0, abs=0.15)
        assert r.diagnostics["markets_dropped"] == 0


def test_name_matches_a_grid_search_of_its_loss(sparse_data):
    # one good and zero prices leave beta as the only free parameter
    dataset, _ = sparse_data
    predictor = fit(dataset)
    result = estimate_name(dataset, predictor)
    assert result.alpha == 0.0

    targets, _ = predicted_targets(dataset, predictor, default_z0(dataset))
    delta = np.vstack([invert_logit(targets[mid]) for mid in dataset.market_ids])
    X = np.vstack([m.X[:, 0] for m in dataset.markets])
    spec = MomentSpec(default_name_moments(dataset))

    def loss(beta):
        return spec_loss(build_moments(dataset, delta - beta * X, spec.moment_list, scale=spec.scale), spec)

    grid = np.arange(-5.0, 5.0 + 1e-9, 1e-3)
    best = grid[np.argmin([loss(b) for b in grid])]
    assert result.theta.beta[0] == pytest.approx(best, abs=1e-3)
    assert result.final_loss <= loss(best) + 1e-12
