"""
Aggregate - Joint estimation at several base points tied by an aggregate moment.

Parameters are theta_k = (alpha_k, beta_k) at base points Z_1..Z_K. The
loss is

    L = (1/K) sum_k H_k' R H_k + h G' R0 G

where H_k are the NAME moments at Z_k (depending on theta_k only) and G is
the mean own-price elasticity -alpha_k P (1 - s_hat(Z_k)) minus a target.
The vector is laid out as [alpha_1..alpha_K, beta_1..beta_K]: the alphas
form the block entering G, the betas the block that does not.
"""

import logging
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import FINITE_DIFF_STEP
from .core.config_manager import OptimizerConfig
from .core.dataset import Dataset, validate_dataset
from .core.errors import DataValidationError, MomentError
from .core.types import (
    EstimationResult,
    MomentSpec,
    SimplexVector,
    ThetaPoint,
    XiMatrix,
    check_weight_matrix,
    stack_markets,
)
from .estimators import ShareSource, logit_start, predicted_targets, prices_vary
from .logit_engine import invert_logit
from .moments import CHOICE_MOMENTS, build_moments, moment_vector
from .optimizer import minimize

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AggregateMomentProblem:
    dataset: Dataset
    base_points: np.ndarray
    targets: Tuple[Dict[int, SimplexVector], ...]
    moment_spec: MomentSpec
    elasticity_target: float = 0.0
    R0: Optional[np.ndarray] = None

    def __post_init__(self):
        if not prices_vary(self.dataset):
            raise DataValidationError("the aggregate elasticity moment needs varying prices")
        if any(m in CHOICE_MOMENTS for m in self.moment_spec.moment_list):
            raise MomentError("aggregate estimation uses product moments only")
        if self.R0 is not None:
            R0 = np.atleast_2d(np.asarray(self.R0, dtype=float))
            if R0.shape != (1, 1):
                raise DataValidationError(f"aggregate weight R0 is {R0.shape}, the aggregate moment needs (1, 1)")
            check_weight_matrix(R0)
            object.__setattr__(self, "R0", R0)
        base = np.atleast_2d(np.asarray(self.base_points, dtype=float))
        object.__setattr__(self, "base_points", base)
        X, P, _ = stack_markets(self.dataset.markets)
        deltas = np.stack([
            np.vstack([invert_logit(t[mid]) for mid in self.dataset.market_ids]) for t in self.targets
        ])
        inside = np.stack([
            np.vstack([t[mid].inside for mid in self.dataset.market_ids]) for t in self.targets
        ])
        object.__setattr__(self, "_X", X)
        object.__setattr__(self, "_P", P)
        object.__setattr__(self, "_deltas", deltas)
        object.__setattr__(self, "_inside", inside)

    @classmethod
    def build(cls, dataset: Dataset, source: ShareSource, base_points: Sequence[Sequence[float]],
              moment_spec: Optional[MomentSpec] = None, elasticity_target: float = 0.0,
              R0: Optional[np.ndarray] = None) -> "AggregateMomentProblem":
        """Predict shares at every base point once and assemble the problem"""
        dataset = validate_dataset(dataset)
        base = np.atleast_2d(np.asarray(base_points, dtype=float))
        if base.shape[1] != dataset.p:
            base = base.reshape(-1, dataset.p)
        targets = tuple(predicted_targets(dataset, source, z)[0] for z in base)
        spec = moment_spec or MomentSpec(("x_xi", "p_xi"), h=1.0)
        return cls(dataset, base, targets, spec, elasticity_target, R0)

    @property
    def K(self) -> int:
        return self.base_points.shape[0]

    @property
    def k(self) -> int:
        return self.dataset.k

    @property
    def size(self) -> int:
        return self.K * (1 + self.k)

    @property
    def alpha_index(self) -> np.ndarray:
        return np.arange(self.K)

    def beta_index(self, b: int) -> np.ndarray:
        start = self.K + b * self.k
        return np.arange(start, start + self.k)

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(alphas of length K, betas K x k)"""
        x = np.asarray(x, dtype=float)
        return x[: self.K], x[self.K:].reshape(self.K, self.k)

    def xi(self, b: int, alpha: float, beta: np.ndarray) -> np.ndarray:
        return self._deltas[b] - np.einsum("mjk,k->mj", self._X, beta) + alpha * self._P

    def H(self, b: int, alpha: float, beta: np.ndarray) -> np.ndarray:
        moments = build_moments(self.dataset, self.xi(b, alpha, beta), self.moment_spec.moment_list,
                                scale=self.moment_spec.scale)
        return moment_vector(moments)

    def G(self, alphas: np.ndarray) -> np.ndarray:
        elasticities = -alphas[:, None, None] * self._P[None, :, :] * (1.0 - self._inside)
        return np.array([float(np.mean(elasticities)) - self.elasticity_target])

    def weight(self, size: int) -> np.ndarray:
        return self.moment_spec.weight_matrix(size)

    def loss(self, x: np.ndarray) -> float:
        alphas, betas = self.split(x)
        total = 0.0
        for b in range(self.K):
            H = self.H(b, alphas[b], betas[b])
            total += float(H @ self.weight(H.size) @ H)
        total /= self.K
        h = self.moment_spec.h
        if h > 0.0:
            G = self.G(alphas)
            R0 = np.eye(G.size) if self.R0 is None else self.R0
            total += h * float(G @ R0 @ G)
        return total


def block_gradient(problem: AggregateMomentProblem, x: np.ndarray, step: float = FINITE_DIFF_STEP) -> np.ndarray:
    """Gradient of the aggregate loss.

    The beta block uses (2/K) J_k' R H_k with J_k from central differences
    of H_k alone; the alpha block differentiates the whole loss, aggregate
    term included.
    """
    x = np.asarray(x, dtype=float)
    alphas, betas = problem.split(x)
    grad = np.zeros_like(x)

    for b in range(problem.K):
        H = problem.H(b, alphas[b], betas[b])
        jac = np.empty((H.size, problem.k))
        for c in range(problem.k):
            e = np.zeros(problem.k)
            e[c] = step
            jac[:, c] = (problem.H(b, alphas[b], betas[b] + e) - problem.H(b, alphas[b], betas[b] - e)) / (2 * step)
        grad[problem.beta_index(b)] = (2.0 / problem.K) * jac.T @ problem.weight(H.size) @ H

    for i in problem.alpha_index:
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (problem.loss(x + e) - problem.loss(x - e)) / (2 * step)
    return grad


def starting_point(problem: AggregateMomentProblem) -> np.ndarray:
    alphas, betas = [], []
    for b in range(problem.K):
        beta, alpha = logit_start(problem.dataset, problem._deltas[b])
        alphas.append(alpha)
        betas.append(beta)
    return np.concatenate([np.array(alphas), np.concatenate(betas)])


def estimate_aggregate(problem: AggregateMomentProblem,
                       optimizer: Optional[OptimizerConfig] = None) -> List[EstimationResult]:
    """Minimise the aggregate loss by RMSprop driven by ``block_gradient``"""
    started = time.perf_counter()
    config = (optimizer or OptimizerConfig()).model_copy(update={"method": "rmsprop"})
    outcome = minimize(problem.loss, starting_point(problem), config,
                       grad=lambda x: block_gradient(problem, x, config.fd_step))
    alphas, betas = problem.split(outcome.x)
    G = float(problem.G(alphas)[0])
    elapsed = time.perf_counter() - started
    logger.info("Aggregate estimation over %d base points: loss=%.3e converged=%s",
                problem.K, outcome.fun, outcome.converged)
    return [
        EstimationResult(
            theta=ThetaPoint(betas[b], alphas[b], None, problem.base_points[b]),
            xi=XiMatrix(problem.xi(b, alphas[b], betas[b])),
            converged=bool(outcome.converged),
            iterations=outcome.iterations,
            final_loss=float(outcome.fun),
            elapsed_seconds=elapsed,
            estimator="aggregate",
            diagnostics={"base_point": b, "aggregate_moment": G, "h": problem.moment_spec.h,
                         "grad_norm": outcome.grad_norm},
        )
        for b in range(problem.K)
    ]
