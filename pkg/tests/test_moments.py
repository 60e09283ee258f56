import numpy as np
import pytest

from name_demand.core.errors import DataValidationError, MomentError
from name_demand.core.types import MomentSpec, ThetaPoint
from name_demand.logit_engine import QuadratureRule, blp_contraction
from name_demand.moments import MomentValue, build_moments, md_loss, moment_vector, spec_loss


def _cov(a, b):
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def test_zero_xi_gives_zero_product_moments(tiny_dataset):
    moments = build_moments(tiny_dataset, np.zeros((2, 2)), ("x_xi", "p_xi"))
    assert [m.identifier for m in moments] == ["x_xi[0]", "p_xi"]
    np.testing.assert_array_equal(moment_vector(moments), [0.0, 0.0])


def test_unscaled_moments_are_covariances(tiny_dataset):
    xi = np.array([[0.3, -0.1], [0.2, 0.5]])
    moments = build_moments(tiny_dataset, xi, ("x_xi", "p_xi"), scale=False)
    X = np.array([1.0, 2.0, 0.5, 1.5])
    P = np.array([1.0, 1.5, 0.8, 1.2])
    np.testing.assert_allclose(moment_vector(moments), [_cov(X, xi.ravel()), _cov(P, xi.ravel())])


def test_scaling_uses_data_ingredients_only(tiny_dataset):
    xi = np.array([[0.3, -0.1], [0.2, 0.5]])
    base = moment_vector(build_moments(tiny_dataset, xi))
    np.testing.assert_allclose(moment_vector(build_moments(tiny_dataset, 10.0 * xi)), 10.0 * base)


def test_xi_shape_checked(tiny_dataset):
    with pytest.raises(MomentError):
        build_moments(tiny_dataset, np.zeros((3, 2)))


def test_instrument_moment_needs_instruments(tiny_dataset):
    with pytest.raises(MomentError, match="no instruments"):
        build_moments(tiny_dataset, np.zeros((2, 2)), ("w_xi",))


def test_choice_moment_needs_probabilities(tiny_dataset):
    with pytest.raises(MomentError, match="predictor"):
        build_moments(tiny_dataset, np.zeros((2, 2)), ("z_xd",))


def test_choice_moments_vanish_at_the_observed_choices(tiny_dataset):
    probabilities = {}
    for mid in tiny_dataset.market_ids:
        d = tiny_dataset.sample(mid).d
        probabilities[mid] = np.eye(3)[d]
    moments = build_moments(tiny_dataset, np.zeros((2, 2)), ("z_xd", "z2_xd"), probabilities=probabilities)
    assert [m.identifier for m in moments] == ["z_xd[0,0]", "z2_xd[0,0]"]
    np.testing.assert_allclose(moment_vector(moments), 0.0, atol=1e-15)


def test_choice_probabilities_shape_checked(tiny_dataset):
    probabilities = {mid: np.full((2, 3), 1 / 3) for mid in tiny_dataset.market_ids}
    with pytest.raises(MomentError, match="probabilities are"):
        build_moments(tiny_dataset, np.zeros((2, 2)), ("z_xd",), probabilities=probabilities)


def test_moment_value_must_be_finite():
    with pytest.raises(MomentError):
        MomentValue("x_xi[0]", float("inf"))
    assert MomentValue("p_xi", 1.5, target=0.5).deviation == 1.0


class TestLoss:
    def test_quadratic_form(self):
        R = np.array([[2.0, 0.5], [0.5, 1.0]])
        H = np.array([1.0, -2.0])
        assert md_loss(H, R) == pytest.approx(H @ R @ H)

    def test_identity_by_default(self):
        assert md_loss([3.0, 4.0]) == pytest.approx(25.0)

    def test_aggregate_block(self):
        assert md_loss([1.0], aggregate=[2.0], h=0.5) == pytest.approx(1.0 + 0.5 * 4.0)
        assert md_loss([1.0], aggregate=[2.0], h=0.0) == pytest.approx(1.0)

    def test_negative_aggregate_weight(self):
        with pytest.raises(MomentError):
            md_loss([1.0], aggregate=[1.0], h=-1.0)

    def test_weight_size_checked(self):
        with pytest.raises(MomentError):
            md_loss([1.0, 2.0], np.eye(3))

    def test_weight_must_be_positive_definite(self):
        with pytest.raises(DataValidationError):
            md_loss([1.0, 2.0], np.array([[1.0, 0.0], [0.0, -1.0]]))

    def test_spec_loss_uses_spec_weights(self):
        spec = MomentSpec(("x_xi", "p_xi"), R=np.diag([4.0, 1.0]))
        moments = [MomentValue("x_xi[0]", 1.0), MomentValue("p_xi", 1.0)]
        assert spec_loss(moments, spec) == pytest.approx(5.0)


def test_loss_is_bit_identical_across_evaluations(misspec_data):
    dataset, truth = misspec_data
    spec = MomentSpec(("x_xi", "p_xi"))
    values = [
        md_loss(build_moments(dataset, truth.xi + 0.1, spec.moment_list), spec.weight_matrix(2))
        for _ in range(5)
    ]
    assert len({v.hex() for v in values}) == 1


def test_random_coefficient_loss_is_bit_identical_with_fixed_draws(misspec_data):
    dataset, _ = misspec_data
    theta = ThetaPoint([1.0], 1.0, [0.5])

    def loss():
        quad = QuadratureRule.draws(1, 100, seed=9)
        delta = np.vstack([blp_contraction(m.observed_shares, theta, m, quad).delta for m in dataset.markets])
        X = np.stack([m.X for m in dataset.markets])
        P = np.vstack([m.P for m in dataset.markets])
        xi = delta - X[:, :, 0] * theta.beta[0] + theta.alpha * P
        return md_loss(build_moments(dataset, xi, ("x_xi", "p_xi")))

    assert loss().hex() == loss().hex()
