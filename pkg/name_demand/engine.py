"""
Main Engine - Pipeline entry points shared by every outer surface
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .constants import (
    BETA_CURVE_FILE,
    DATASET_FILE,
    PREDICTOR_FILE,
    RESULT_FILE,
    SUPPORT_DIAGNOSTICS_FILE,
    SUPPORT_FILE,
    TRUTH_FILE,
)
from .core.config_manager import ConfigManager, EstimationConfig, RunConfig
from .core.dataset import Dataset, dump_dataset, load_dataset
from .core.errors import ConfigError, DataValidationError
from .core.run_store import RunStore
from .core.types import EstimationResult, MomentSpec
from .estimators import BunchingSpec, ParametricSpec, estimate_bunching, estimate_name, estimate_parametric
from .extension import beta_curve
from .first_stage import KernelDescriptor, SharePredictor, fit, select_lambda
from .logit_engine import QuadratureRule
from .simulation import benchmark
from .simulation.dgp import gen_misspec, gen_sparse
from .sparse_recovery import (
    SupportEstimate,
    fit_on_support,
    name_on_support,
    recover_support,
    support_diagnostics,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def run_simulate(config: RunConfig, out_dir: PathLike) -> Dict[str, Path]:
    """Generate one dataset of the configured experiment with its truth"""
    store = RunStore(out_dir)
    if config.experiment == "misspec":
        dataset, truth = gen_misspec(config.misspec, config.misspec.seed)
    else:
        dataset, truth = gen_sparse(config.sparse, config.sparse.seed)

    paths = {
        "dataset": dump_dataset(dataset, store.path(DATASET_FILE)),
        "truth": store.write_json(TRUTH_FILE, truth.to_dict()),
        "config": ConfigManager().save_config(config, store.out_dir),
    }
    logger.info("Simulated %s data: M=%d J=%d p=%d -> %s",
                config.experiment, dataset.M, dataset.J, dataset.p, store.out_dir)
    return paths


def read_dataset(path: PathLike) -> Dataset:
    """load_dataset with file errors mapped into the package hierarchy"""
    try:
        return load_dataset(path)
    except FileNotFoundError as e:
        raise DataValidationError(f"dataset file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataValidationError(f"malformed dataset JSON in {path}: {e.msg} (line {e.lineno})") from e


def moment_spec_from(estimation: EstimationConfig) -> Optional[MomentSpec]:
    """MomentSpec from config; None leaves each estimator on its defaults"""
    if estimation.moments is None:
        if estimation.weight_matrix is not None:
            raise ConfigError("a weight matrix needs an explicit moment list", field="estimation.weight_matrix")
        if estimation.scale_moments:
            return None
        raise ConfigError("unscaled moments need an explicit moment list", field="estimation.moments")
    R = None if estimation.weight_matrix is None else np.asarray(estimation.weight_matrix, dtype=float)
    return MomentSpec(tuple(estimation.moments), R, scale=estimation.scale_moments)


def resolve_z0(estimation: EstimationConfig) -> Optional[np.ndarray]:
    if estimation.z0 == "median":
        return None
    return np.asarray(estimation.z0, dtype=float)


def fit_first_stage(dataset: Dataset, config: RunConfig, n_jobs: int = 1) -> Tuple[SharePredictor, float]:
    """Fit the kernel first stage; lambda is cross-validated when a grid is configured"""
    settings = config.first_stage
    kernel = KernelDescriptor(bandwidth=settings.bandwidth)
    lam = settings.lam
    if settings.lambda_grid:
        lam = select_lambda(dataset, kernel, settings.lambda_grid, settings.cv_folds)
    return fit(dataset, kernel, lam, n_jobs), lam


def _quadrature(dataset: Dataset, config: RunConfig) -> Optional[QuadratureRule]:
    q = config.quadrature
    if not q.enabled:
        return None
    return QuadratureRule.draws(dataset.k, q.draws, q.seed, q.distribution)


def _write_support(store: RunStore, estimate: SupportEstimate) -> Dict[str, Path]:
    return {
        "support_diagnostics": store.write_csv(SUPPORT_DIAGNOSTICS_FILE, support_diagnostics(estimate)),
        "support": store.write_json(SUPPORT_FILE, estimate.to_dict()),
    }


def run_estimate(config: RunConfig, dataset_path: PathLike, out_dir: PathLike,
                 n_jobs: int = 1) -> Tuple[List[EstimationResult], Dict[str, Path]]:
    """Run the configured estimator on a stored dataset.

    Writes estimates.csv and run_config.json. NAME and sparse-name runs add
    predictor.json; NAME writes beta_curve.csv for a z grid while
    sparse-name writes the support files.
    """
    dataset = read_dataset(dataset_path)
    store = RunStore(out_dir)
    estimation = config.estimation
    moment_spec = moment_spec_from(estimation)
    z0 = resolve_z0(estimation)
    paths: Dict[str, Path] = {}
    logger.info("Estimating with %s on %s (M=%d J=%d p=%d)",
                estimation.estimator, dataset_path, dataset.M, dataset.J, dataset.p)

    if estimation.estimator == "name":
        predictor, lam = fit_first_stage(dataset, config, n_jobs)
        quad = _quadrature(dataset, config)
        result = estimate_name(dataset, predictor, z0, moment_spec, config.optimizer, quad, config.contraction)
        results = [result]
        paths["predictor"] = predictor.to_json(store.path(PREDICTOR_FILE))
        if estimation.z_grid:
            curve = beta_curve(dataset, predictor, result, estimation.z_grid, quad)
            paths["beta_curve"] = store.write_csv(BETA_CURVE_FILE, curve)
    elif estimation.estimator == "parametric":
        spec = ParametricSpec.parse(estimation.spec, dataset.k)
        results = [estimate_parametric(dataset, spec, moment_spec, config.optimizer, config.contraction, z0)]
    elif estimation.estimator == "bunching":
        bunching = estimation.bunching
        if bunching.column >= dataset.p:
            raise ConfigError(f"bunching column {bunching.column} outside 0..{dataset.p - 1}",
                              field="estimation.bunching.column")
        spec = BunchingSpec.from_quantiles(dataset, bunching.column, bunching.regions)
        results = estimate_bunching(dataset, spec, moment_spec, config.optimizer)
    else:
        support = recover_support(dataset)
        paths.update(_write_support(store, support))
        kernel = KernelDescriptor(bandwidth=config.first_stage.bandwidth)
        _, predictor = fit_on_support(dataset, support, config.first_stage.lam, kernel, n_jobs)
        paths["predictor"] = predictor.to_json(store.path(PREDICTOR_FILE))
        results = [name_on_support(dataset, support, z0, moment_spec, config.optimizer,
                                   contraction=config.contraction, predictor=predictor)]

    paths["estimates"] = store.write_csv(RESULT_FILE, [r.to_row() for r in results])
    paths["config"] = ConfigManager().save_config(config, store.out_dir)
    return results, paths


def run_benchmark(config: RunConfig, out_dir: PathLike, n_jobs: Optional[int] = None) -> benchmark.BenchmarkResult:
    store = RunStore(out_dir)
    ConfigManager().save_config(config, store.out_dir)
    return benchmark.run_benchmark(config, store, n_jobs)


def run_recover_support(dataset_path: PathLike, out_dir: PathLike,
                        config: Optional[RunConfig] = None) -> Tuple[SupportEstimate, Dict[str, Path]]:
    """Support recovery alone: support_diagnostics.csv and support.json"""
    dataset = read_dataset(dataset_path)
    store = RunStore(out_dir)
    estimate = recover_support(dataset)
    paths = _write_support(store, estimate)
    paths["config"] = ConfigManager().save_config(config or RunConfig(), store.out_dir)
    logger.info("Recovered support %s from %d markets", list(estimate.union), dataset.M)
    return estimate, paths
