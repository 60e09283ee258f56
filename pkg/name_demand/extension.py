"""
Extension - Carry estimates from the base point z0 to other covariate values.

With plain logit, E_j = s_j(z0) / s_0(z0) pins down exp(theta'X_j + xi_j),
the weights w_j(z) solve a J x J linear system, and c_j(z) = log w_j(z) is
regressed on X_j to recover beta(z) - beta(z0). With random coefficients
c(z) comes from the BLP contraction instead. Any other quantity can be
interpolated between base points by kernel smoothing.
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from .constants import CONTRACTION_MAX_ITER, CONTRACTION_TOL
from .core.dataset import Dataset
from .core.errors import DataValidationError, NumericalFailureError, RankDeficientError
from .core.types import EstimationResult, MarketData, SimplexVector, ThetaPoint, XiMatrix, stack_markets
from .estimators import ShareSource, as_share_source, floor_shares
from .first_stage import median_heuristic
from .logit_engine import QuadratureRule, contract, heterogeneity, mean_utility

logger = logging.getLogger(__name__)


def recover_E(shares_at_z0: SimplexVector) -> np.ndarray:
    """E_j = s_j / s_0"""
    shares_at_z0.require_interior("shares at the base point")
    return shares_at_z0.inside / shares_at_z0.outside


def solve_weights_logit(shares_at_z: SimplexVector, E: np.ndarray) -> np.ndarray:
    """Solve (diag(E) - s E') w = s for the weights at z.

    One step of iterative refinement follows the LU solve. The closed form
    is w_j = (s_j / s_0) / E_j.

    Raises:
        NumericalFailureError: the system is singular or yields a
            nonpositive weight.
    """
    shares_at_z.require_interior("shares at z")
    E = np.asarray(E, dtype=float)
    if E.shape != (shares_at_z.J,) or np.any(E <= 0.0):
        raise DataValidationError(f"E must hold {shares_at_z.J} positive entries")
    s = shares_at_z.inside
    A = np.diag(E) - np.outer(s, E)
    try:
        factor = lu_factor(A, check_finite=False)
    except (LinAlgError, ValueError) as e:
        raise NumericalFailureError("weight system is singular", np.linalg.cond(A)) from e
    w = lu_solve(factor, s, check_finite=False)
    w = w + lu_solve(factor, s - A @ w, check_finite=False)
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise NumericalFailureError(f"weight system produced nonpositive weights {w.tolist()}",
                                    np.linalg.cond(A))
    return w


def solve_weights_rc(shares_at_z: SimplexVector, theta_hat: ThetaPoint, xi_hat: np.ndarray,
                     market: MarketData, quad: QuadratureRule, tol: float = CONTRACTION_TOL,
                     max_iter: int = CONTRACTION_MAX_ITER) -> np.ndarray:
    """Shift c(z) such that random-coefficient shares at delta(z0) + c match ``shares_at_z``.

    sigma stays at its base-point value.
    """
    base = mean_utility(theta_hat, xi_hat, market)
    result = contract(shares_at_z, heterogeneity(theta_hat, market, quad), quad.weights,
                      delta0=base, tol=tol, max_iter=max_iter)
    return result.delta - base


def recover_beta(c_values: np.ndarray, X: np.ndarray, beta_z0: Optional[np.ndarray] = None,
                 weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Pooled no-intercept regression of c_jm on X_jm.

    Args:
        c_values: M x J shifts.
        X: M x J x k characteristics.
        beta_z0: Base-point coefficients; zeros when omitted.
        weights: Optional M x J cell weights (equal by default).

    Returns:
        (delta_beta, beta_z) with beta_z = beta_z0 + delta_beta.
    """
    c = np.asarray(c_values, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    design = X.reshape(c.size, -1)
    k = design.shape[1]
    if c.size < k or np.linalg.matrix_rank(design) < k:
        raise RankDeficientError(f"stacked characteristics ({c.size} x {k}) do not have full column rank")
    if weights is not None:
        root = np.sqrt(np.asarray(weights, dtype=float).reshape(-1))
        design, c = design * root[:, None], c * root
    delta_beta, *_ = np.linalg.lstsq(design, c, rcond=None)
    base = np.zeros(k) if beta_z0 is None else np.asarray(beta_z0, dtype=float)
    return delta_beta, base + delta_beta


def interpolate_theta(base: Sequence[Tuple[np.ndarray, ThetaPoint, XiMatrix]], z: np.ndarray,
                      bandwidth: Optional[float] = None) -> Tuple[ThetaPoint, XiMatrix]:
    """Gaussian-kernel average of base-point values at ``z``.

    A query equal to a base point returns that point's values exactly, the
    lowest index winning ties. The bandwidth defaults to the median
    pairwise distance between base points.
    """
    if not base:
        raise DataValidationError("interpolation needs at least one base point")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    points = np.vstack([np.atleast_1d(np.asarray(p, dtype=float)) for p, _, _ in base])
    for i, point in enumerate(points):
        if np.array_equal(point, z):
            return base[i][1], base[i][2]

    h = bandwidth or median_heuristic(points)
    sq = np.sum((points - z[None, :]) ** 2, axis=1)
    logw = -sq / (2.0 * h ** 2)
    w = np.exp(logw - logw.max())
    w /= w.sum()

    thetas = [b[1] for b in base]
    beta = np.einsum("b,bk->k", w, np.vstack([t.beta for t in thetas]))
    alpha = float(w @ np.array([t.alpha for t in thetas]))
    sigma = None
    if all(t.sigma is not None for t in thetas):
        sigma = np.einsum("b,bk->k", w, np.vstack([t.sigma for t in thetas]))
    xi = np.einsum("b,bmj->mj", w, np.stack([b[2].values for b in base]))
    return ThetaPoint(beta, alpha, sigma, z), XiMatrix(xi)


def shifts_at(dataset: Dataset, share_at: Callable[[np.ndarray, int], SimplexVector], z: np.ndarray,
              base_shares: List[SimplexVector], result_at_z0: EstimationResult,
              quad: Optional[QuadratureRule] = None, tol: float = CONTRACTION_TOL) -> np.ndarray:
    """c(z) for every market, M x J"""
    rows = []
    for i, market in enumerate(dataset.markets):
        shares = share_at(z, market.market_id)
        probs = shares.probs if isinstance(shares, SimplexVector) else np.asarray(shares, dtype=float)
        target, _ = floor_shares(probs, market.market_id)
        if quad is not None and result_at_z0.theta.has_random_coefficients:
            rows.append(solve_weights_rc(target, result_at_z0.theta, result_at_z0.xi.values[i], market, quad, tol))
        else:
            rows.append(np.log(solve_weights_logit(target, recover_E(base_shares[i]))))
    return np.vstack(rows)


def beta_curve(dataset: Dataset, source: ShareSource, result_at_z0: EstimationResult,
               z_grid: Sequence, quad: Optional[QuadratureRule] = None,
               weights: Optional[np.ndarray] = None) -> pd.DataFrame:
    """beta(z) on a grid: one row per grid point with z, beta and delta_beta columns"""
    share_at = as_share_source(source)
    z0 = result_at_z0.theta.eval_point
    base_shares = []
    for market in dataset.markets:
        shares = share_at(z0, market.market_id)
        probs = shares.probs if isinstance(shares, SimplexVector) else np.asarray(shares, dtype=float)
        base_shares.append(floor_shares(probs, market.market_id)[0])
    X, _, _ = stack_markets(dataset.markets)

    rows = []
    for z in z_grid:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        c = shifts_at(dataset, share_at, z, base_shares, result_at_z0, quad)
        delta_beta, beta = recover_beta(c, X, result_at_z0.theta.beta, weights)
        row = {f"z_{u}": float(v) for u, v in enumerate(z)}
        row.update({f"beta_{i}": float(b) for i, b in enumerate(beta)})
        row.update({f"delta_beta_{i}": float(b) for i, b in enumerate(delta_beta)})
        rows.append(row)
    logger.info("Extended beta to %d grid points", len(rows))
    return pd.DataFrame(rows)
