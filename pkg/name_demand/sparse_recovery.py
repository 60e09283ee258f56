"""
Sparse Recovery - Thresholded per-market scores select the covariates that shift preferences.

For market m and covariate u, with b_i = 1[d_i > 0]:

    score(m, u) = |sum_i b_i Z_iu| / sqrt(V_mu N_m)

where V_mu is the sample variance of b_i Z_iu. Covariate u is selected in
market m when score >= sqrt(2 (log p + log N_m)); the support is the union
over markets. Covariate indices are 0-based.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from .core.config_manager import ContractionConfig, OptimizerConfig
from .core.dataset import Dataset, IndividualSample, validate_dataset
from .core.errors import DataValidationError, EmptySupportError
from .core.types import EstimationResult, MomentSpec
from .estimators import estimate_name
from .first_stage import KernelDescriptor, SharePredictor, fit

logger = logging.getLogger(__name__)

MarketRecord = Union[IndividualSample, Tuple[int, np.ndarray, np.ndarray]]


def _scores(Z: np.ndarray, d: np.ndarray) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = Z.shape[0]
    if n < 2:
        raise DataValidationError(f"scores need at least 2 individuals, got {n}")
    bought = (np.asarray(d) > 0).astype(float)
    products = bought[:, None] * Z
    total = products.sum(axis=0)
    variance = products.var(axis=0, ddof=1)
    out = np.zeros(Z.shape[1])
    positive = variance > 0.0
    out[positive] = np.abs(total[positive]) / np.sqrt(variance[positive] * n)
    return out


def score(sample: IndividualSample, u: int) -> float:
    """Standardised score of covariate ``u``; 0 when the summand has no variance"""
    if not 0 <= u < sample.p:
        raise DataValidationError(f"covariate index {u} outside 0..{sample.p - 1}")
    return float(_scores(sample.Z[:, [u]], sample.d)[0])


def threshold(p: int, N: int) -> float:
    if p < 1 or N < 1:
        raise DataValidationError("threshold needs p >= 1 and N >= 1")
    return float(np.sqrt(2.0 * (np.log(p) + np.log(N))))


@dataclass(frozen=True, eq=False)
class SupportEstimate:
    """Selected covariates per market and their union, with the statistics behind them"""

    per_market: Mapping[int, Tuple[int, ...]]
    union: Tuple[int, ...]
    scores: Mapping[int, np.ndarray]
    thresholds: Mapping[int, float]
    p: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "p": self.p,
            "union": list(self.union),
            "per_market": {str(mid): list(sel) for mid, sel in sorted(self.per_market.items())},
            "thresholds": {str(mid): t for mid, t in sorted(self.thresholds.items())},
        }


def _as_record(record: MarketRecord) -> Tuple[int, np.ndarray, np.ndarray]:
    if isinstance(record, IndividualSample):
        return record.market_id, record.Z, record.d
    market_id, Z, d = record
    return int(market_id), np.atleast_2d(np.asarray(Z, dtype=float)), np.asarray(d)


def recover_support_stream(samples: Iterable[MarketRecord], p: int, threshold_scale: float = 1.0) -> SupportEstimate:
    """Support recovery over markets arriving one at a time; only scores are kept.

    ``threshold_scale`` multiplies every market's threshold.
    """
    if not threshold_scale > 0.0:
        raise DataValidationError(f"threshold scale must be positive, got {threshold_scale}")
    per_market: Dict[int, Tuple[int, ...]] = {}
    scores: Dict[int, np.ndarray] = {}
    thresholds: Dict[int, float] = {}
    for record in samples:
        market_id, Z, d = _as_record(record)
        if Z.shape[1] != p:
            raise DataValidationError(f"dimension mismatch: market {market_id} has {Z.shape[1]} covariates, p={p}")
        market_scores = _scores(Z, d)
        c0 = threshold_scale * threshold(p, Z.shape[0])
        per_market[market_id] = tuple(int(u) for u in np.flatnonzero(market_scores >= c0))
        scores[market_id] = market_scores
        thresholds[market_id] = c0
    union = tuple(sorted(set().union(*per_market.values()))) if per_market else ()
    logger.debug("Recovered support %s from %d markets", union, len(per_market))
    return SupportEstimate(per_market, union, scores, thresholds, p)


def recover_support(dataset: Dataset, p: Optional[int] = None, threshold_scale: float = 1.0) -> SupportEstimate:
    dataset = validate_dataset(dataset)
    p = dataset.p if p is None else p
    return recover_support_stream((dataset.sample(mid) for mid in dataset.market_ids), p, threshold_scale)


def classify_recovery(estimate: Union[SupportEstimate, Iterable[int]], truth: Iterable[int]) -> Tuple[str, int]:
    """("exact" | "over" | "under" | "mixed", size of the discrepancy)"""
    selected: Set[int] = set(estimate.union if isinstance(estimate, SupportEstimate) else estimate)
    true_set = set(truth)
    if selected == true_set:
        return "exact", 0
    if true_set < selected:
        return "over", len(selected - true_set)
    if selected < true_set:
        return "under", len(true_set - selected)
    return "mixed", len(selected ^ true_set)


def support_diagnostics(estimate: SupportEstimate) -> pd.DataFrame:
    """Long table of (market, variable, score, threshold, selected)"""
    frames = []
    for mid in sorted(estimate.scores):
        s = estimate.scores[mid]
        frames.append(pd.DataFrame({
            "market": mid,
            "variable": np.arange(s.size),
            "score": s,
            "threshold": estimate.thresholds[mid],
            "selected": s >= estimate.thresholds[mid],
        }))
    if not frames:
        return pd.DataFrame(columns=["market", "variable", "score", "threshold", "selected"])
    return pd.concat(frames, ignore_index=True)


def _support_columns(support: Union[SupportEstimate, Sequence[int]]) -> List[int]:
    columns = list(support.union if isinstance(support, SupportEstimate) else support)
    if not columns:
        raise EmptySupportError(
            "support recovery selected no covariate; inspect the score diagnostics and thresholds"
        )
    return columns


def fit_on_support(dataset: Dataset, support: Union[SupportEstimate, Sequence[int]], lam: float = 1.0,
                   kernel: Optional[KernelDescriptor] = None, n_jobs: int = 1) -> Tuple[Dataset, SharePredictor]:
    """Project Z onto the support and fit the first stage there: (projected dataset, predictor)

    Raises:
        EmptySupportError: nothing was selected.
    """
    projected = validate_dataset(dataset).project(_support_columns(support))
    return projected, fit(projected, kernel or KernelDescriptor(), lam, n_jobs)


def name_on_support(dataset: Dataset, support: Union[SupportEstimate, Sequence[int]],
                    z0: Optional[np.ndarray] = None, moment_spec: Optional[MomentSpec] = None,
                    optimizer: Optional[OptimizerConfig] = None, lam: float = 1.0,
                    kernel: Optional[KernelDescriptor] = None, n_jobs: int = 1,
                    contraction: Optional[ContractionConfig] = None,
                    predictor: Optional[SharePredictor] = None) -> EstimationResult:
    """Project Z onto the recovered support, fit the first stage there and run NAME.

    ``z0`` is given in the projected coordinates. A ``predictor`` from
    :func:`fit_on_support` on the same support skips the refit.

    Raises:
        EmptySupportError: nothing was selected.
    """
    columns = _support_columns(support)
    if predictor is None:
        projected, predictor = fit_on_support(dataset, columns, lam, kernel, n_jobs)
    else:
        projected = validate_dataset(dataset).project(columns)
    result = estimate_name(projected, predictor, z0, moment_spec, optimizer, contraction=contraction)
    return replace(result, diagnostics=dict(result.diagnostics, support=columns))
