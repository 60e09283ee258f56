"""Reference-scale Monte Carlo checks; run with --runslow."""

import numpy as np
import pytest

from name_demand.core.config_manager import MisspecConfig, RunConfig
from name_demand.core.types import EstimationResult, ThetaPoint, XiMatrix
from name_demand.extension import beta_curve
from name_demand.first_stage import fit
from name_demand.simulation import run_benchmark
from name_demand.simulation.benchmark import paired_differences
from name_demand.simulation.dgp import exact_share_source, gen_misspec

pytestmark = pytest.mark.slow


def _misspec(**overrides):
    return RunConfig(misspec={"B": 50, "seed": 0, **overrides})


def test_reference_table_ordering():
    result = run_benchmark(_misspec(), n_jobs=-1)
    summary = result.summary.set_index("estimator")
    name_bias = abs(summary.loc["name", "bias"])
    assert name_bias <= 0.10
    assert summary.loc["name", "rmse"] < summary.loc["oracle", "rmse"] < summary.loc["misspecified", "rmse"]
    assert abs(summary.loc["misspecified", "bias"]) >= 3 * name_bias


def test_timing_ordering_single_threaded():
    config = _misspec(B=5)
    timing = run_benchmark(config, n_jobs=1).tables["timing_summary.csv"].set_index("estimator")
    seconds = timing["mean_seconds"]
    assert seconds["name"] < seconds["misspecified"] < seconds["oracle"]


def test_rmse_shrinks_with_more_markets():
    small = run_benchmark(RunConfig(misspec={"B": 50, "M": 25}, benchmark={"estimators": ["name"]}), n_jobs=-1)
    large = run_benchmark(RunConfig(misspec={"B": 50, "M": 200}, benchmark={"estimators": ["name"]}), n_jobs=-1)
    assert large.summary["rmse"].iloc[0] < small.summary["rmse"].iloc[0]


def test_name_matches_the_oracle_at_scale():
    config = RunConfig(misspec={"B": 50, "M": 200}, benchmark={"estimators": ["name", "oracle"]})
    reps = run_benchmark(config, n_jobs=-1).replications
    diff = paired_differences(reps, "name", "oracle")
    se = diff.std(ddof=1) / np.sqrt(diff.size)
    assert abs(diff.mean()) <= 2 * se

    converged = reps[reps["converged"].astype(bool)]
    wide = converged.pivot(index="replication", columns="estimator", values="alpha").dropna()
    ratio = wide["name"].var(ddof=1) / wide["oracle"].var(ddof=1)
    assert 0.5 <= ratio <= 2.0


def test_support_recovery_with_two_relevant_covariates():
    config = RunConfig(experiment="sparse", sparse={"p": 1000, "p0": 2, "B": 200})
    reps = run_benchmark(config, n_jobs=-1).replications
    assert (reps["outcome"] == "exact").mean() >= 0.97
    assert (reps["outcome"] == "under").sum() == 0


def test_support_recovery_with_twenty_relevant_covariates():
    config = RunConfig(experiment="sparse", sparse={"p": 1000, "p0": 20, "active_per_market": 5, "B": 200})
    reps = run_benchmark(config, n_jobs=-1).replications
    assert (reps["outcome"] == "exact").mean() >= 0.93
    under = reps[reps["outcome"] == "under"]
    assert (under["size"] <= 2).all()


def test_extension_with_estimated_shares_is_within_noise():
    grid = np.linspace(-2.0, 2.0, 9)
    errors = []
    for b in range(20):
        dataset, truth = gen_misspec(MisspecConfig(N=1000), seed=100 + b)
        predictor = fit(dataset, lam=1.0)
        at_z0 = EstimationResult(ThetaPoint(truth.beta_at(0.0), truth.alpha, None, [0.0]),
                                 XiMatrix(truth.xi), True, 0, 0.0, 0.0)
        curve = beta_curve(dataset, predictor, at_z0, grid)
        errors.append(curve["beta_0"].to_numpy() - truth.beta_at(grid))
    errors = np.vstack(errors)
    se = errors.std(axis=0, ddof=1) / np.sqrt(errors.shape[0])
    bias = np.abs(errors.mean(axis=0))
    assert np.max(bias) < 3 * np.max(se) + 1e-12


def test_extension_with_exact_shares():
    dataset, truth = gen_misspec(MisspecConfig(N=1000), seed=0)
    at_z0 = EstimationResult(ThetaPoint(truth.beta_at(0.0), truth.alpha, None, [0.0]),
                             XiMatrix(truth.xi), True, 0, 0.0, 0.0)
    grid = np.linspace(-2.0, 2.0, 9)
    curve = beta_curve(dataset, exact_share_source(dataset, truth), at_z0, grid)
    np.testing.assert_allclose(curve["beta_0"], truth.beta_at(grid), atol=1e-10)
