"""
Domain types shared by every module.

All types are frozen dataclasses over read-only numpy arrays, so instances
can be shared across threads and worker processes by reference.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from ..constants import MOMENT_IDS, SIMPLEX_TOL
from .errors import BoundaryShareError, DataValidationError


def frozen_array(values: Any, ndim: Optional[int] = None, name: str = "array") -> np.ndarray:
    """Return a read-only float64 copy of ``values``"""
    arr = np.array(values, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise DataValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SimplexVector:
    """Probabilities over the outside good (index 0) and J inside goods"""

    probs: np.ndarray

    def __post_init__(self):
        probs = frozen_array(self.probs, ndim=1, name="probs")
        if probs.size < 2:
            raise DataValidationError("a simplex needs the outside good and at least one inside good")
        if not np.all(np.isfinite(probs)):
            raise DataValidationError("simplex entries must be finite")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise DataValidationError("simplex entries must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > SIMPLEX_TOL:
            raise DataValidationError(f"simplex must sum to 1, got {probs.sum():.16g}")
        object.__setattr__(self, "probs", probs)

    @property
    def J(self) -> int:
        return self.probs.size - 1

    @property
    def outside(self) -> float:
        return float(self.probs[0])

    @property
    def inside(self) -> np.ndarray:
        return self.probs[1:]

    def is_interior(self) -> bool:
        return bool(np.all(self.probs > 0.0) and np.all(self.probs < 1.0))

    def require_interior(self, context: str = "shares") -> "SimplexVector":
        if not self.is_interior():
            raise BoundaryShareError(f"{context} must be strictly inside (0, 1): {self.probs.tolist()}")
        return self


@dataclass(frozen=True, eq=False)
class MarketData:
    """Product-level data of one market"""

    market_id: int
    X: np.ndarray
    P: np.ndarray
    W: np.ndarray
    observed_shares: SimplexVector

    def __post_init__(self):
        X = frozen_array(self.X, name="X")
        if X.ndim == 1:
            X = frozen_array(X.reshape(-1, 1), name="X")
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataValidationError(f"market {self.market_id}: X must be J x k with J, k >= 1")
        J = X.shape[0]

        P = frozen_array(self.P, ndim=1, name="P")
        if P.size != J:
            raise DataValidationError(f"market {self.market_id}: P has {P.size} entries, expected {J}")

        W = np.asarray(self.W, dtype=float)
        if W.size == 0:
            W = np.zeros((J, 0))
        elif W.ndim == 1:
            W = W.reshape(-1, 1)
        if W.shape[0] != J:
            raise DataValidationError(f"market {self.market_id}: W has {W.shape[0]} rows, expected {J}")
        W = frozen_array(W, name="W")

        shares = self.observed_shares
        if not isinstance(shares, SimplexVector):
            shares = SimplexVector(shares)
        if shares.J != J:
            raise DataValidationError(
                f"market {self.market_id}: shares have {shares.J} inside goods, expected {J}"
            )
        shares.require_interior(f"market {self.market_id} observed shares")

        for name, arr in (("X", X), ("P", P), ("W", W)):
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"market {self.market_id}: {name} has non-finite entries")

        object.__setattr__(self, "market_id", int(self.market_id))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "observed_shares", shares)

    @property
    def J(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def l(self) -> int:
        return self.W.shape[1]

    def with_shares(self, shares: Any) -> "MarketData":
        return MarketData(self.market_id, self.X, self.P, self.W, shares)


@dataclass(frozen=True, eq=False)
class IndividualData:
    """One consumer: covariates Z and the chosen good d (0 = outside)"""

    market_id: int
    Z: np.ndarray
    d: int

    def __post_init__(self):
        Z = frozen_array(np.atleast_1d(self.Z), ndim=1, name="Z")
        if not np.all(np.isfinite(Z)):
            raise DataValidationError(f"individual in market {self.market_id}: Z has non-finite entries")
        d = int(self.d)
        if d < 0:
            raise DataValidationError(f"choice index out of range: {d}")
        object.__setattr__(self, "market_id", int(self.market_id))
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "d", d)


@dataclass(frozen=True, eq=False)
class ThetaPoint:
    """Structural coefficients holding at the covariate value ``eval_point``"""

    beta: np.ndarray
    alpha: float
    sigma: Optional[np.ndarray] = None
    eval_point: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        beta = frozen_array(np.atleast_1d(self.beta), ndim=1, name="beta")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "eval_point", frozen_array(np.atleast_1d(self.eval_point), ndim=1,
                                                            name="eval_point"))
        if self.sigma is not None:
            sigma = frozen_array(np.atleast_1d(self.sigma), ndim=1, name="sigma")
            if sigma.size != beta.size:
                raise DataValidationError("sigma must have one entry per characteristic")
            if np.any(sigma < 0.0):
                raise DataValidationError("sigma entries must be >= 0")
            object.__setattr__(self, "sigma", sigma)

    @property
    def has_random_coefficients(self) -> bool:
        return self.sigma is not None and bool(np.any(self.sigma > 0.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "beta": self.beta.tolist(),
            "alpha": self.alpha,
            "sigma": None if self.sigma is None else self.sigma.tolist(),
            "eval_point": self.eval_point.tolist(),
        }


@dataclass(frozen=True, eq=False)
class XiMatrix:
    """Unobserved qualities, M x J, at one evaluation point"""

    values: np.ndarray

    def __post_init__(self):
        values = frozen_array(np.atleast_2d(self.values), ndim=2, name="xi")
        if not np.all(np.isfinite(values)):
            raise DataValidationError("xi entries must be finite")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class MomentSpec:
    """Which moments enter the loss and how they are weighted"""

    moment_list: Tuple[str, ...] = ("x_xi", "p_xi")
    R: Optional[np.ndarray] = None
    h: float = 0.0
    scale: bool = True

    def __post_init__(self):
        moments = tuple(self.moment_list)
        unknown = [m for m in moments if m not in MOMENT_IDS]
        if unknown:
            raise DataValidationError(f"unknown moment identifiers: {unknown}")
        if not moments:
            raise DataValidationError("moment list must not be empty")
        object.__setattr__(self, "moment_list", moments)
        if self.h < 0.0:
            raise DataValidationError("aggregate weight h must be >= 0")
        if self.R is not None:
            R = frozen_array(self.R, ndim=2, name="R")
            check_weight_matrix(R)
            object.__setattr__(self, "R", R)

    def weight_matrix(self, size: int) -> np.ndarray:
        """R sized to ``size`` stacked moments (identity when unset)"""
        if self.R is None:
            return np.eye(size)
        if self.R.shape != (size, size):
            raise DataValidationError(f"weight matrix is {self.R.shape}, moments need {(size, size)}")
        return self.R


def check_weight_matrix(R: np.ndarray) -> None:
    """Raise unless ``R`` is symmetric positive definite"""
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise DataValidationError(f"weight matrix must be square, got {R.shape}")
    if not np.allclose(R, R.T, rtol=0.0, atol=1e-12):
        raise DataValidationError("weight matrix must be symmetric")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as e:
        raise DataValidationError("weight matrix must be positive definite") from e


@dataclass(frozen=True, eq=False)
class EstimationResult:
    """Point estimates at one evaluation point with convergence diagnostics"""

    theta: ThetaPoint
    xi: XiMatrix
    converged: bool
    iterations: int
    final_loss: float
    elapsed_seconds: float
    estimator: str = "name"
    quadrature_seed: Optional[int] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.final_loss >= 0.0):
            raise DataValidationError(f"final loss must be >= 0, got {self.final_loss}")
        if self.elapsed_seconds < 0.0:
            raise DataValidationError("elapsed seconds must be >= 0")

    @property
    def alpha(self) -> float:
        return self.theta.alpha

    def to_row(self) -> Dict[str, Any]:
        """Flat record for CSV output (no wall-clock fields)"""
        row: Dict[str, Any] = {
            "estimator": self.estimator,
            "alpha": self.theta.alpha,
        }
        for i, b in enumerate(self.theta.beta):
            row[f"beta_{i}"] = float(b)
        if self.theta.sigma is not None:
            for i, s in enumerate(self.theta.sigma):
                row[f"sigma_{i}"] = float(s)
        for i, z in enumerate(self.theta.eval_point):
            row[f"z0_{i}"] = float(z)
        row.update({
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_loss": float(self.final_loss),
            "quadrature_seed": self.quadrature_seed,
        })
        return row


def stack_markets(markets: Sequence[MarketData]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack X (M x J x k), P (M x J) and W (M x J x l) across markets"""
    X = np.stack([m.X for m in markets])
    P = np.stack([m.P for m in markets])
    W = np.stack([m.W for m in markets])
    return X, P, W
