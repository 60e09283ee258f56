"""
Benchmark - Monte Carlo replications, summaries and output tables.

Replication b uses seed + b, so every estimator sees the same data in the
same replication. Replications run in joblib workers whose numeric
libraries are pinned to one thread. Wall-clock figures go to the timing
tables only; every other table is a pure function of (config, seed).
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed, parallel_config

from ..constants import (
    ALPHA_HIST_FILE,
    REPLICATIONS_FILE,
    SUMMARY_FILE,
    TIMING_FILE,
    TIMING_SUMMARY_FILE,
)
from ..core.config_manager import RunConfig
from ..core.dataset import Dataset
from ..core.errors import NameDemandError
from ..core.run_store import RunStore
from ..core.types import EstimationResult
from ..estimators import ParametricSpec, estimate_name, estimate_parametric
from ..first_stage import KernelDescriptor, fit
from ..sparse_recovery import classify_recovery, recover_support_stream
from .dgp import gen_misspec, iter_sparse_markets

logger = logging.getLogger(__name__)

OUTCOME_ORDER = ("exact", "over", "under", "mixed")


@dataclass
class BenchmarkResult:
    experiment: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)

    @property
    def replications(self) -> pd.DataFrame:
        return self.tables[REPLICATIONS_FILE]

    @property
    def summary(self) -> pd.DataFrame:
        return self.tables[SUMMARY_FILE]


def run_estimator(name: str, dataset: Dataset, config: RunConfig) -> EstimationResult:
    """One benchmark estimator: "name", "oracle" or "misspecified" """
    if name == "name":
        kernel = KernelDescriptor(bandwidth=config.first_stage.bandwidth)
        predictor = fit(dataset, kernel, config.first_stage.lam)
        return estimate_name(dataset, predictor, optimizer=config.optimizer, contraction=config.contraction)
    if name == "oracle":
        spec = ParametricSpec.oracle(dataset.k)
    elif name == "misspecified":
        spec = ParametricSpec.misspecified(dataset.k)
    else:
        raise NameDemandError(f"unknown benchmark estimator '{name}'")
    return estimate_parametric(dataset, spec, optimizer=config.optimizer, contraction=config.contraction,
                               estimator=name)


def _failure_row(name: str, error: Exception) -> Dict[str, Any]:
    return {"estimator": name, "alpha": np.nan, "converged": False, "iterations": 0,
            "final_loss": np.nan, "error": type(error).__name__}


def run_misspec_replication(config: RunConfig, b: int) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """Estimate every configured estimator on replication ``b``: (result rows, timing rows)

    A replication whose data cannot be generated still yields one failure row per
    estimator.
    """
    seed = config.misspec.seed + b
    rows, timing = [], []
    try:
        dataset, _ = gen_misspec(config.misspec, seed)
    except NameDemandError as e:
        logger.warning("Replication %d: data generation failed (%s)", b, e)
        for name in config.benchmark.estimators:
            rows.append({"replication": b, "seed": seed, **_failure_row(name, e)})
            timing.append({"replication": b, "seed": seed, "estimator": name, "seconds": 0.0})
        return rows, timing
    for name in config.benchmark.estimators:
        started = time.perf_counter()
        try:
            row = run_estimator(name, dataset, config).to_row()
            row["error"] = ""
        except NameDemandError as e:
            row = _failure_row(name, e)
        seconds = time.perf_counter() - started
        rows.append({"replication": b, "seed": seed, **row})
        timing.append({"replication": b, "seed": seed, "estimator": name, "seconds": seconds})
        logger.info("Replication %d %-12s alpha=%.4f converged=%s %.2fs",
                    b, name, row["alpha"], row["converged"], seconds)
    return rows, timing


def run_sparse_replication(config: RunConfig, b: int) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """Stream one replication of the sparse design through support recovery"""
    seed = config.sparse.seed + b
    started = time.perf_counter()
    active: Dict[int, Tuple[int, ...]] = {}

    def samples():
        for market, sample, act in iter_sparse_markets(config.sparse, seed):
            active[market.market_id] = act
            yield sample

    estimate = recover_support_stream(samples(), config.sparse.p)
    truth = sorted(set().union(*active.values()))
    outcome, size = classify_recovery(estimate, truth)
    seconds = time.perf_counter() - started
    row = {
        "replication": b,
        "seed": seed,
        "outcome": outcome,
        "size": size,
        "n_selected": len(estimate.union),
        "support": ";".join(str(u) for u in estimate.union),
        "truth": ";".join(str(u) for u in truth),
    }
    logger.info("Replication %d support=%s truth=%s -> %s(%d) %.2fs",
                b, row["support"], row["truth"], outcome, size, seconds)
    return [row], [{"replication": b, "seed": seed, "estimator": "support", "seconds": seconds}]


def summarize(replications: pd.DataFrame, alpha_true: float) -> pd.DataFrame:
    """Bias and RMSE of alpha per estimator, over converged and over all replications"""
    rows = []
    for name, group in replications.groupby("estimator", sort=False):
        alpha = group["alpha"].astype(float)
        converged = group["converged"].astype(bool)
        good = alpha[converged & alpha.notna()]
        every = alpha[alpha.notna()]
        rows.append({
            "estimator": name,
            "n": len(group),
            "n_converged": int(converged.sum()),
            "n_diverged": int((~converged).sum()),
            "n_failed": int(alpha.isna().sum()),
            "bias": float(good.mean() - alpha_true) if len(good) else np.nan,
            "rmse": float(np.sqrt(np.mean((good - alpha_true) ** 2))) if len(good) else np.nan,
            "bias_all": float(every.mean() - alpha_true) if len(every) else np.nan,
            "rmse_all": float(np.sqrt(np.mean((every - alpha_true) ** 2))) if len(every) else np.nan,
        })
    return pd.DataFrame(rows)


def timing_summary(timing: pd.DataFrame) -> pd.DataFrame:
    grouped = timing.groupby("estimator", sort=False)["seconds"]
    return grouped.agg(n="size", mean_seconds="mean", sd_seconds="std").reset_index()


def alpha_histogram(replications: pd.DataFrame, bins: int = 30) -> pd.DataFrame:
    """Equal-width bins over the pooled range of finite alpha estimates, counts per estimator"""
    alpha = replications["alpha"].astype(float)
    pooled = alpha[np.isfinite(alpha)].to_numpy()
    columns = ["estimator", "bin", "bin_left", "bin_right", "count"]
    if pooled.size == 0:
        return pd.DataFrame(columns=columns)
    edges = np.histogram_bin_edges(pooled, bins=bins)
    rows = []
    for name, group in replications.groupby("estimator", sort=False):
        values = group["alpha"].astype(float).to_numpy()
        counts, _ = np.histogram(values[np.isfinite(values)], bins=edges)
        for i, count in enumerate(counts):
            rows.append({"estimator": name, "bin": i, "bin_left": edges[i], "bin_right": edges[i + 1],
                         "count": int(count)})
    return pd.DataFrame(rows, columns=columns)


def recovery_table(replications: pd.DataFrame) -> pd.DataFrame:
    """Counts of recovery outcomes by discrepancy size"""
    counts = replications.groupby(["outcome", "size"]).size().reset_index(name="count")
    counts["order"] = counts["outcome"].map({o: i for i, o in enumerate(OUTCOME_ORDER)})
    counts = counts.sort_values(["order", "size"]).drop(columns="order").reset_index(drop=True)
    counts["share"] = counts["count"] / len(replications)
    return counts


def run_benchmark(config: RunConfig, store: Optional[RunStore] = None,
                  n_jobs: Optional[int] = None) -> BenchmarkResult:
    """Run every replication of the configured experiment and tabulate.

    Args:
        config: Validated run configuration.
        store: Output directory; tables are written when given.
        n_jobs: joblib parallelism over replications (config.jobs, else 1).

    Returns:
        BenchmarkResult keyed by output file name.
    """
    experiment = config.experiment
    B = config.experiment_config.B
    n_jobs = n_jobs if n_jobs is not None else (config.jobs if config.jobs is not None else 1)
    worker = run_misspec_replication if experiment == "misspec" else run_sparse_replication
    logger.info("Running %s benchmark: B=%d jobs=%d", experiment, B, n_jobs)

    with parallel_config(backend="loky", inner_max_num_threads=1):
        outputs = Parallel(n_jobs=n_jobs)(delayed(worker)(config, b) for b in range(B))

    replications = pd.DataFrame([row for rows, _ in outputs for row in rows])
    timing = pd.DataFrame([row for _, rows in outputs for row in rows])
    result = BenchmarkResult(experiment)
    result.tables[REPLICATIONS_FILE] = replications
    if experiment == "misspec":
        result.tables[SUMMARY_FILE] = summarize(replications, config.misspec.alpha_true)
        result.tables[ALPHA_HIST_FILE] = alpha_histogram(replications, config.benchmark.histogram_bins)
    else:
        result.tables[SUMMARY_FILE] = recovery_table(replications)
    result.tables[TIMING_FILE] = timing
    result.tables[TIMING_SUMMARY_FILE] = timing_summary(timing)

    if store is not None:
        for name, table in result.tables.items():
            store.write_csv(name, table)
    return result


def paired_differences(replications: pd.DataFrame, first: str, second: str,
                       converged_only: bool = True) -> np.ndarray:
    """alpha_first - alpha_second over replications where both produced estimates"""
    wide = replications.pivot(index="replication", columns="estimator", values="alpha")
    if converged_only:
        flags = replications.pivot(index="replication", columns="estimator", values="converged").astype(bool)
        wide = wide[flags[first] & flags[second]]
    diff = (wide[first] - wide[second]).astype(float)
    return diff[np.isfinite(diff)].to_numpy()

