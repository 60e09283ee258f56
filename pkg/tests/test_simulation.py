import numpy as np
import pandas as pd
import pytest

from name_demand.core.config_manager import MisspecConfig, RunConfig, SparseConfig
from name_demand.core.run_store import RunStore
from name_demand.simulation import (
    alpha_histogram,
    gen_misspec,
    gen_sparse,
    recovery_table,
    run_benchmark,
    summarize,
    timing_summary,
    true_shares_at,
)
from name_demand.simulation.benchmark import paired_differences


class TestMisspecDesign:
    def test_shapes(self, misspec_config, misspec_data):
        dataset, truth = misspec_data
        assert (dataset.M, dataset.J, dataset.k, dataset.p) == (20, 2, 1, 1)
        assert truth.xi.shape == (20, 2)
        assert all(dataset.sample(mid).N == misspec_config.N for mid in dataset.market_ids)

    def test_same_seed_same_data(self):
        config = MisspecConfig(M=3, N=100)
        first, _ = gen_misspec(config, seed=4)
        second, _ = gen_misspec(config, seed=4)
        for a, b in zip(first.markets, second.markets):
            np.testing.assert_array_equal(a.observed_shares.probs, b.observed_shares.probs)
            np.testing.assert_array_equal(a.P, b.P)
        np.testing.assert_array_equal(first.sample(0).Z, second.sample(0).Z)

    def test_observed_shares_are_counts(self, misspec_data):
        dataset, _ = misspec_data
        for mid in dataset.market_ids:
            np.testing.assert_allclose(dataset.market(mid).observed_shares.probs, dataset.counted_shares(mid))

    def test_true_shares_follow_the_quadratic(self, misspec_data):
        dataset, truth = misspec_data
        market = dataset.markets[0]
        shares = true_shares_at(1.0, market, truth.xi[0], truth)
        delta = 2.0 * market.X[:, 0] - truth.alpha * market.P + truth.xi[0]
        expected = np.exp(delta) / (1.0 + np.exp(delta).sum())
        np.testing.assert_allclose(shares.inside, expected, rtol=1e-12)

    def test_choice_frequencies_match_the_logit_probabilities(self):
        dataset, truth = gen_misspec(MisspecConfig(M=1, N=20000), seed=12)
        market, sample = dataset.markets[0], dataset.sample(0)
        z = sample.Z[:, 0]
        utility = np.zeros((z.size, dataset.J + 1))
        utility[:, 1:] = (truth.beta_at(z)[:, None] * market.X[None, :, 0] - truth.alpha * market.P[None, :]
                          + truth.xi[0][None, :])
        analytic = np.exp(utility) / np.exp(utility).sum(axis=1, keepdims=True)
        errors = []
        for center in (-1.0, -0.5, 0.0, 0.5, 1.0):
            near = np.abs(z - center) < 0.25
            counted = np.bincount(sample.d[near], minlength=dataset.J + 1) / near.sum()
            errors.append(float(np.max(np.abs(counted - analytic[near].mean(axis=0)))))
        assert np.mean(errors) < 0.02


class TestSparseDesign:
    def test_zero_prices_and_one_good(self, sparse_data):
        dataset, _ = sparse_data
        assert dataset.J == 1
        assert all(m.P[0] == 0.0 for m in dataset.markets)

    def test_active_sets_lie_in_the_first_columns(self, sparse_config, sparse_data):
        _, truth = sparse_data
        assert len(truth.active) == sparse_config.M
        for active in truth.active.values():
            assert len(active) == sparse_config.active_per_market
            assert all(0 <= u < sparse_config.p0 for u in active)
        assert truth.support == tuple(sorted(set().union(*truth.active.values())))

    def test_same_seed_same_data(self, sparse_config):
        first, _ = gen_sparse(sparse_config, seed=2)
        second, _ = gen_sparse(sparse_config, seed=2)
        np.testing.assert_array_equal(first.sample(3).Z, second.sample(3).Z)
        np.testing.assert_array_equal(first.sample(3).d, second.sample(3).d)

    def test_active_covariate_is_drawn_evenly(self):
        config = SparseConfig(M=1000, N=50, p=3, p0=2, active_per_market=1)
        _, truth = gen_sparse(config, seed=6)
        first = np.mean([active == (0,) for active in truth.active.values()])
        assert 0.45 <= first <= 0.55


def _replications():
    return pd.DataFrame({
        "replication": [0, 0, 1, 1, 2, 2],
        "estimator": ["name", "oracle"] * 3,
        "alpha": [1.1, 1.0, 0.9, np.nan, 1.3, 1.2],
        "converged": [True, True, True, False, False, True],
    })


class TestTables:
    def test_summarize(self):
        summary = summarize(_replications(), alpha_true=1.0).set_index("estimator")
        assert summary.loc["name", "n"] == 3
        assert summary.loc["name", "n_converged"] == 2
        assert summary.loc["name", "bias"] == pytest.approx(0.0)
        assert summary.loc["name", "rmse"] == pytest.approx(0.1)
        assert summary.loc["name", "bias_all"] == pytest.approx(0.1)
        assert summary.loc["oracle", "n_failed"] == 1
        assert summary.loc["oracle", "rmse"] == pytest.approx(np.sqrt(0.02))

    def test_histogram_counts_every_finite_estimate(self):
        hist = alpha_histogram(_replications(), bins=4)
        assert len(hist) == 8
        counts = hist.groupby("estimator")["count"].sum()
        assert counts["name"] == 3
        assert counts["oracle"] == 2
        assert hist["bin_left"].min() == pytest.approx(0.9)
        assert hist["bin_right"].max() == pytest.approx(1.3)

    def test_paired_differences(self):
        diff = paired_differences(_replications(), "name", "oracle")
        np.testing.assert_allclose(diff, [0.1])
        np.testing.assert_allclose(np.sort(paired_differences(_replications(), "name", "oracle", False)),
                                   [0.1, 0.1])

    def test_recovery_table_orders_outcomes(self):
        reps = pd.DataFrame({"outcome": ["over", "exact", "exact", "under"], "size": [1, 0, 0, 1]})
        table = recovery_table(reps)
        assert table["outcome"].tolist() == ["exact", "over", "under"]
        assert table["count"].tolist() == [2, 1, 1]
        assert table["share"].sum() == pytest.approx(1.0)

    def test_timing_summary(self):
        timing = pd.DataFrame({"estimator": ["a", "a", "b"], "seconds": [1.0, 3.0, 2.0]})
        table = timing_summary(timing).set_index("estimator")
        assert table.loc["a", "n"] == 2
        assert table.loc["a", "mean_seconds"] == pytest.approx(2.0)


def _small_misspec():
    return RunConfig(
        misspec={"M": 5, "N": 200, "B": 2, "seed": 3},
        benchmark={"estimators": ["name"]},
        optimizer={"max_iter": 200},
    )


class TestBenchmark:
    def test_misspec_tables(self, tmp_path):
        result = run_benchmark(_small_misspec(), RunStore(tmp_path), n_jobs=1)
        reps = result.replications
        assert reps["replication"].tolist() == [0, 1]
        assert reps["seed"].tolist() == [3, 4]
        assert set(result.summary["estimator"]) == {"name"}
        for name in ("replications.csv", "summary.csv", "alpha_hist.csv", "timing.csv", "timing_summary.csv"):
            assert (tmp_path / name).exists()

    def test_reruns_are_byte_identical(self, tmp_path):
        run_benchmark(_small_misspec(), RunStore(tmp_path / "a"), n_jobs=1)
        run_benchmark(_small_misspec(), RunStore(tmp_path / "b"), n_jobs=1)
        for name in ("replications.csv", "summary.csv", "alpha_hist.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_sparse_recovery_rows(self, tmp_path):
        config = RunConfig(experiment="sparse", sparse={"M": 10, "N": 400, "p": 5, "p0": 2, "B": 2})
        result = run_benchmark(config, RunStore(tmp_path), n_jobs=1)
        assert len(result.replications) == 2
        assert set(result.replications["outcome"]) <= {"exact", "over", "under", "mixed"}
        assert result.summary["count"].sum() == 2
        assert (tmp_path / "summary.csv").exists()


    def test_failed_data_generation_still_yields_rows(self, tmp_path):
        # two individuals cannot choose all three alternatives
        config = RunConfig(
            misspec={"M": 2, "N": 2, "B": 3, "seed": 0},
            benchmark={"estimators": ["name", "oracle"]},
        )
        result = run_benchmark(config, RunStore(tmp_path), n_jobs=1)
        reps = result.replications
        assert len(reps) == 6
        assert sorted(reps["replication"].unique().tolist()) == [0, 1, 2]
        assert set(reps["error"]) == {"BoundaryShareError"}
        assert not reps["converged"].any()
        assert reps["alpha"].isna().all()
        assert len(result.tables["timing.csv"]) == 6
        summary = result.summary.set_index("estimator")
        assert summary.loc["name", "n_failed"] == 3
        for name in ("replications.csv", "summary.csv", "alpha_hist.csv", "timing.csv"):
            assert (tmp_path / name).exists()

    def test_failed_replication_does_not_stop_the_others(self, monkeypatch):
        from name_demand.core.errors import BoundaryShareError
        from name_demand.simulation import benchmark

        real = benchmark.gen_misspec

        def flaky(config, seed):
            if seed == 4:
                raise BoundaryShareError("unchosen good")
            return real(config, seed)

        monkeypatch.setattr(benchmark, "gen_misspec", flaky)
        rows, timing = benchmark.run_misspec_replication(_small_misspec(), 1)
        assert [r["error"] for r in rows] == ["BoundaryShareError"]
        assert timing[0]["seconds"] == 0.0
        rows, _ = benchmark.run_misspec_replication(_small_misspec(), 0)
        assert rows[0]["error"] == ""
