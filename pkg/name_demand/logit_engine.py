"""
Logit Engine - Choice probabilities, market shares and share inversion.

Plain logit shares and their closed-form inversion, random-coefficient
shares averaged over a fixed quadrature rule, and the BLP contraction
that maps target shares back to mean utilities. Every function is pure.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.stats import norm, qmc

from .constants import (
    CONTRACTION_MAX_ITER,
    CONTRACTION_TOL,
    QUADRATURE_DISTRIBUTIONS,
    QUADRATURE_DRAWS,
    SIMPLEX_TOL,
)
from .core.errors import ContractionError, DataValidationError, NonFiniteUtilityError
from .core.types import MarketData, SimplexVector, ThetaPoint, frozen_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes (R x k) for the random-coefficient draws and their weights"""

    nodes: np.ndarray
    weights: np.ndarray
    seed: Optional[int] = None
    distribution: str = "normal"

    def __post_init__(self):
        nodes = frozen_array(np.atleast_2d(self.nodes), ndim=2, name="nodes")
        weights = frozen_array(self.weights, ndim=1, name="weights")
        if weights.size != nodes.shape[0]:
            raise DataValidationError(f"{weights.size} weights for {nodes.shape[0]} nodes")
        if np.any(weights < 0.0):
            raise DataValidationError("quadrature weights must be nonnegative")
        if abs(weights.sum() - 1.0) > SIMPLEX_TOL:
            raise DataValidationError(f"quadrature weights must sum to 1, got {weights.sum():.16g}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @classmethod
    def draws(cls, k: int, R: int = QUADRATURE_DRAWS, seed: int = 0,
              distribution: str = "normal") -> "QuadratureRule":
        """Equally weighted standard-normal draws, pseudo-random or scrambled Halton"""
        if distribution not in QUADRATURE_DISTRIBUTIONS:
            raise DataValidationError(f"unknown quadrature distribution '{distribution}'")
        if distribution == "halton":
            points = qmc.Halton(d=k, scramble=True, seed=seed).random(R)
            nodes = norm.ppf(np.clip(points, 1e-12, 1.0 - 1e-12))
        else:
            nodes = np.random.default_rng(seed).standard_normal((R, k))
        return cls(nodes, np.full(R, 1.0 / R), seed=seed, distribution=distribution)


@dataclass(frozen=True, eq=False)
class ContractionResult:
    """Mean utilities recovered by the contraction plus its diagnostics"""

    delta: np.ndarray
    xi: np.ndarray
    iterations: int
    residual: float
    residual_history: List[float] = field(default_factory=list)


def mean_utility(theta: ThetaPoint, xi_row: np.ndarray, market: MarketData,
                 z_shift: Optional[np.ndarray] = None) -> np.ndarray:
    """delta_j = beta'X_j - alpha P_j + xi_j (+ c_j)"""
    delta = market.X @ theta.beta - theta.alpha * market.P + np.asarray(xi_row, dtype=float)
    if z_shift is not None:
        delta = delta + np.asarray(z_shift, dtype=float)
    if not np.all(np.isfinite(delta)):
        raise NonFiniteUtilityError(f"non-finite utility index in market {market.market_id}")
    return delta


def individual_probabilities(delta: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Per-node logit probabilities, R x (J+1), outside good in column 0"""
    u = np.asarray(delta, dtype=float)[None, :] + mu
    shift = np.maximum(u.max(axis=1), 0.0)
    inside = np.exp(u - shift[:, None])
    outside = np.exp(-shift)
    denom = outside + inside.sum(axis=1)
    probs = np.empty((u.shape[0], u.shape[1] + 1))
    probs[:, 0] = outside / denom
    probs[:, 1:] = inside / denom[:, None]
    return probs


def mixture_shares(delta: np.ndarray, mu: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted average of per-node logit probabilities, length J+1"""
    return weights @ individual_probabilities(delta, mu)


def _as_simplex(probs: np.ndarray) -> SimplexVector:
    return SimplexVector(probs / probs.sum())


def logit_shares(theta: ThetaPoint, xi_row: np.ndarray, market: MarketData,
                 z_shift: Optional[np.ndarray] = None) -> SimplexVector:
    """Plain-logit simplex including the outside share 1 / (1 + sum exp(delta))"""
    delta = mean_utility(theta, xi_row, market, z_shift)
    return _as_simplex(individual_probabilities(delta, np.zeros((1, delta.size)))[0])


def invert_logit(shares: SimplexVector) -> np.ndarray:
    """delta_j = log(s_j / s_0)"""
    shares.require_interior("logit inversion target")
    return np.log(shares.inside) - np.log(shares.outside)


def heterogeneity(theta: ThetaPoint, market: MarketData, quad: QuadratureRule) -> np.ndarray:
    """Random-coefficient utility deviations, R x J"""
    if theta.sigma is None:
        return np.zeros((quad.size, market.J))
    if quad.nodes.shape[1] != market.k:
        raise DataValidationError(f"quadrature has {quad.nodes.shape[1]} columns, market has k={market.k}")
    return (quad.nodes * theta.sigma[None, :]) @ market.X.T


def rc_shares(theta: ThetaPoint, xi_row: np.ndarray, market: MarketData, quad: QuadratureRule,
              z_shift: Optional[np.ndarray] = None) -> SimplexVector:
    """Random-coefficient shares integrated over ``quad``"""
    delta = mean_utility(theta, xi_row, market, z_shift)
    return _as_simplex(mixture_shares(delta, heterogeneity(theta, market, quad), quad.weights))


def contract(target: SimplexVector, mu: np.ndarray, weights: np.ndarray,
             delta0: Optional[np.ndarray] = None, tol: float = CONTRACTION_TOL,
             max_iter: int = CONTRACTION_MAX_ITER) -> ContractionResult:
    """Iterate delta <- delta + log(target) - log(implied) until the sup-norm
    of the log-share residual drops below ``tol``.

    Raises:
        ContractionError: ``max_iter`` updates did not reach ``tol``.
    """
    if tol <= 0.0:
        raise DataValidationError("contraction tolerance must be positive")
    target.require_interior("contraction target")
    log_target = np.log(target.inside)
    delta = invert_logit(target) if delta0 is None else np.array(delta0, dtype=float)

    history: List[float] = []
    for iteration in range(max_iter + 1):
        implied = mixture_shares(delta, mu, weights)
        step = log_target - np.log(implied[1:])
        residual = float(np.max(np.abs(step)))
        if not np.isfinite(residual):
            raise NonFiniteUtilityError("contraction produced a non-finite residual")
        history.append(residual)
        if residual < tol:
            logger.debug("Contraction converged in %d iterations (residual %.3e)", iteration, residual)
            return ContractionResult(delta, delta.copy(), iteration, residual, history)
        if iteration == max_iter:
            break
        delta = delta + step
    raise ContractionError("share contraction did not converge", max_iter, history[-1])


def blp_contraction(target: SimplexVector, theta: ThetaPoint, market: MarketData, quad: QuadratureRule,
                    tol: float = CONTRACTION_TOL, max_iter: int = CONTRACTION_MAX_ITER) -> ContractionResult:
    """Invert random-coefficient shares; xi is reported with xi_0m = 0"""
    result = contract(target, heterogeneity(theta, market, quad), quad.weights, tol=tol, max_iter=max_iter)
    xi = result.delta - market.X @ theta.beta + theta.alpha * market.P
    return ContractionResult(result.delta, xi, result.iterations, result.residual, result.residual_history)
