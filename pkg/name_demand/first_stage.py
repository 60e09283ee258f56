"""
First Stage - Kernel ridge prediction of choice probabilities.

For every market, one-vs-rest kernel ridge regressions of the choice
indicators 1[d = j], j = 0..J, on Z. Indicators are centred on their
empirical frequency, which is added back as an intercept, so a large ridge
penalty shrinks predictions toward the frequencies. Raw outputs are
clamped to [0, 1] and renormalised onto the simplex.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import pdist
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.model_selection import KFold

from .constants import CV_FOLDS
from .core.dataset import Dataset, IndividualSample
from .core.errors import DataValidationError, NumericalFailureError
from .core.types import SimplexVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelDescriptor:
    """Kernel family and bandwidth; ``bandwidth=None`` means median heuristic"""

    kind: str = "rbf"
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind != "rbf":
            raise DataValidationError(f"unsupported kernel '{self.kind}'")
        if self.bandwidth is not None and self.bandwidth <= 0.0:
            raise DataValidationError("kernel bandwidth must be positive")


def median_heuristic(Z: np.ndarray) -> float:
    """Median pairwise Euclidean distance, 1.0 when undefined"""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] < 2:
        return 1.0
    distances = pdist(Z)
    median = float(np.median(distances))
    return median if median > 0.0 else 1.0


def _gram(A: np.ndarray, B: np.ndarray, bandwidth: float) -> np.ndarray:
    return rbf_kernel(A, B, gamma=1.0 / (2.0 * bandwidth ** 2))


def _to_simplex(raw: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Clamp rows to [0, 1] and renormalise; all-zero rows take ``fallback``"""
    clamped = np.clip(raw, 0.0, 1.0)
    totals = clamped.sum(axis=-1, keepdims=True)
    empty = totals[..., 0] <= 0.0
    if np.any(empty):
        clamped[empty] = fallback
        totals[empty] = 1.0
    return clamped / totals


@dataclass(frozen=True, eq=False)
class MarketPredictor:
    """Fitted kernel ridge regressions of one market"""

    market_id: int
    Z_train: np.ndarray
    dual_coef: np.ndarray
    intercept: np.ndarray
    bandwidth: float
    lam: float

    @property
    def J(self) -> int:
        return self.intercept.size - 1

    def raw(self, Z: np.ndarray) -> np.ndarray:
        """Unclamped regression outputs, N x (J+1)"""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.Z_train.shape[1]:
            raise DataValidationError(f"z has {Z.shape[1]} columns, predictor was fit on {self.Z_train.shape[1]}")
        return self.intercept[None, :] + _gram(Z, self.Z_train, self.bandwidth) @ self.dual_coef

    def probabilities(self, Z: np.ndarray) -> np.ndarray:
        return _to_simplex(self.raw(Z), self.intercept)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "market_id": self.market_id,
            "Z_train": self.Z_train.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "intercept": self.intercept.tolist(),
            "bandwidth": self.bandwidth,
            "lam": self.lam,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MarketPredictor":
        return cls(
            int(data["market_id"]),
            np.asarray(data["Z_train"], dtype=float),
            np.asarray(data["dual_coef"], dtype=float),
            np.asarray(data["intercept"], dtype=float),
            float(data["bandwidth"]),
            float(data["lam"]),
        )


@dataclass(frozen=True, eq=False)
class SharePredictor:
    """Per-market first-stage models; immutable after fitting"""

    markets: Mapping[int, MarketPredictor]
    kernel: KernelDescriptor
    lam: float

    def market(self, market_id: int) -> MarketPredictor:
        try:
            return self.markets[market_id]
        except KeyError:
            raise DataValidationError(f"unknown market {market_id}: predictor was not fitted for it") from None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kernel": {"kind": self.kernel.kind, "bandwidth": self.kernel.bandwidth},
            "lam": self.lam,
            "markets": [self.markets[mid].to_dict() for mid in sorted(self.markets)],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SharePredictor":
        kernel = KernelDescriptor(**data["kernel"])
        markets = {int(rec["market_id"]): MarketPredictor.from_dict(rec) for rec in data["markets"]}
        return cls(markets, kernel, float(data["lam"]))

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, sort_keys=True)
        return path

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "SharePredictor":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def fit_market(sample: IndividualSample, J: int, kernel: KernelDescriptor = KernelDescriptor(),
               lam: float = 1.0) -> MarketPredictor:
    """Fit one market's J+1 indicator regressions.

    Raises:
        DataValidationError: ``lam`` is not positive or the market is empty.
        NumericalFailureError: the regularised kernel system is singular.
    """
    if not lam > 0.0:
        raise DataValidationError(f"ridge penalty must be positive, got {lam}")
    if sample.N < 1:
        raise DataValidationError(f"market {sample.market_id} has no individuals")

    Z = np.asarray(sample.Z, dtype=float)
    bandwidth = kernel.bandwidth or median_heuristic(Z)
    Y = np.zeros((sample.N, J + 1))
    Y[np.arange(sample.N), sample.d] = 1.0
    intercept = Y.mean(axis=0)

    system = _gram(Z, Z, bandwidth) + lam * np.eye(sample.N)
    try:
        factor = cho_factor(system, lower=True, check_finite=False)
        dual_coef = cho_solve(factor, Y - intercept[None, :], check_finite=False)
    except LinAlgError as e:
        raise NumericalFailureError(
            f"kernel system of market {sample.market_id} is singular at lambda={lam}", np.linalg.cond(system)
        ) from e
    if not np.all(np.isfinite(dual_coef)):
        raise NumericalFailureError(
            f"kernel system of market {sample.market_id} produced non-finite coefficients", np.linalg.cond(system)
        )
    return MarketPredictor(sample.market_id, Z.copy(), dual_coef, intercept, float(bandwidth), float(lam))


def fit(dataset: Dataset, kernel: KernelDescriptor = KernelDescriptor(), lam: float = 1.0,
        n_jobs: int = 1) -> SharePredictor:
    """Fit every market independently"""
    J = dataset.J
    ids = dataset.market_ids
    if n_jobs == 1:
        fitted = [fit_market(dataset.sample(mid), J, kernel, lam) for mid in ids]
    else:
        fitted = Parallel(n_jobs=n_jobs)(delayed(fit_market)(dataset.sample(mid), J, kernel, lam) for mid in ids)
    logger.debug("Fitted first stage for %d markets (lambda=%g)", len(fitted), lam)
    return SharePredictor({p.market_id: p for p in fitted}, kernel, float(lam))


def predict(predictor: SharePredictor, z: np.ndarray, market_id: int) -> SimplexVector:
    """Predicted choice probabilities at ``z`` in ``market_id``"""
    probs = predictor.market(market_id).probabilities(np.atleast_1d(z)[None, :])[0]
    return SimplexVector(probs)


def predict_many(predictor: SharePredictor, Z: np.ndarray, market_id: int) -> np.ndarray:
    """Predicted probabilities for every row of ``Z``, N x (J+1)"""
    return predictor.market(market_id).probabilities(Z)


def default_z0(dataset: Dataset) -> np.ndarray:
    """Coordinatewise median of the pooled covariates"""
    return np.median(dataset.pooled_Z(), axis=0)


def _cv_error(sample: IndividualSample, J: int, kernel: KernelDescriptor, lam: float,
              n_folds: int, seed: int) -> float:
    if sample.N < 2:
        return 0.0
    folds = KFold(n_splits=min(n_folds, sample.N), shuffle=True, random_state=seed)
    error = 0.0
    for train, test in folds.split(sample.Z):
        model = fit_market(sample.subset(train), J, kernel, lam)
        truth = np.zeros((test.size, J + 1))
        truth[np.arange(test.size), sample.d[test]] = 1.0
        error += float(np.sum((model.probabilities(sample.Z[test]) - truth) ** 2))
    return error


def select_lambda(dataset: Dataset, kernel: KernelDescriptor, candidate_grid: Sequence[float],
                  n_folds: int = CV_FOLDS, seed: int = 0) -> float:
    """Cross-validated ridge penalty; folds are drawn within each market.

    Ties are broken toward the middle of the (sorted) grid.
    """
    grid = sorted(float(g) for g in candidate_grid)
    if not grid:
        raise DataValidationError("lambda grid must not be empty")
    if len(grid) == 1:
        return grid[0]

    errors = np.array([
        sum(_cv_error(dataset.sample(mid), dataset.J, kernel, lam, n_folds, seed) for mid in dataset.market_ids)
        for lam in grid
    ])
    best = np.flatnonzero(errors <= errors.min() * (1.0 + 1e-12))
    middle = (len(grid) - 1) / 2.0
    choice = int(best[np.argmin(np.abs(best - middle))])
    logger.info("Selected lambda=%g (CV errors %s)", grid[choice], np.array2string(errors, precision=4))
    return grid[choice]
