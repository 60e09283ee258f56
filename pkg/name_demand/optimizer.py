"""
Optimizer - Nelder-Mead and RMSprop gradient descent behind one interface.

Small problems (at most six free parameters) go to scipy's Nelder-Mead;
larger ones use RMSprop with backtracking: a step that raises the loss is
rejected and the learning rate halved. Non-convergence is reported in the
outcome, never raised.

Stopping rules differ. RMSprop stops once the accepted step is below xtol
or the loss improvement is below ftol. Nelder-Mead passes both to scipy as
xatol/fatol and stops only when the simplex spread is within xtol and its
loss spread is within ftol at the same time.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .constants import NELDER_MEAD_MAX_PARAMS, RMSPROP_EPS
from .core.config_manager import OptimizerConfig

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]
Gradient = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class OptimizeOutcome:
    x: np.ndarray
    fun: float
    converged: bool
    iterations: int
    grad_norm: float
    method: str
    message: str = ""


def numerical_gradient(fun: Objective, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences, one coordinate at a time"""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return grad


def select_method(n_params: int, config: OptimizerConfig) -> str:
    if config.method != "auto":
        return config.method
    return "nelder-mead" if n_params <= NELDER_MEAD_MAX_PARAMS else "rmsprop"


def minimize(fun: Objective, x0: np.ndarray, config: Optional[OptimizerConfig] = None,
             grad: Optional[Gradient] = None) -> OptimizeOutcome:
    """Minimise ``fun`` from ``x0``.

    Args:
        fun: Scalar objective; may return ``inf`` or a large penalty where
            it cannot be evaluated.
        x0: Starting point.
        config: Method and tolerances; defaults to ``OptimizerConfig()``.
        grad: Gradient used by RMSprop; numerical when omitted.
    """
    config = config or OptimizerConfig()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    method = select_method(x0.size, config)
    if method == "nelder-mead":
        outcome = _nelder_mead(fun, x0, config)
    else:
        outcome = _rmsprop(fun, x0, config, grad)
    logger.debug(
        "%s finished: loss=%.6e iterations=%d converged=%s",
        outcome.method, outcome.fun, outcome.iterations, outcome.converged,
    )
    return outcome


def _nelder_mead(fun: Objective, x0: np.ndarray, config: OptimizerConfig) -> OptimizeOutcome:
    res = scipy_minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={"xatol": config.xtol, "fatol": config.ftol, "maxiter": config.max_iter,
                 "maxfev": 4 * config.max_iter},
    )
    x = np.asarray(res.x, dtype=float)
    value = float(res.fun)
    grad_norm = float(np.linalg.norm(numerical_gradient(fun, x, config.fd_step))) if np.isfinite(value) else np.inf
    return OptimizeOutcome(x, value, bool(res.success) and np.isfinite(value), int(res.nit), grad_norm,
                           "nelder-mead", str(res.message))


def _rmsprop(fun: Objective, x0: np.ndarray, config: OptimizerConfig,
             grad: Optional[Gradient]) -> OptimizeOutcome:
    gradient = grad or (lambda x: numerical_gradient(fun, x, config.fd_step))
    x = x0.copy()
    value = float(fun(x))
    if not np.isfinite(value):
        return OptimizeOutcome(x, value, False, 0, np.inf, "rmsprop", "non-finite loss at start")

    accumulator = np.zeros_like(x)
    learning_rate = config.learning_rate
    g = gradient(x)
    message = "maximum iterations reached"
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient"
            break
        accumulator = config.decay * accumulator + (1.0 - config.decay) * g ** 2
        step = learning_rate * g / (np.sqrt(accumulator) + RMSPROP_EPS)
        if np.max(np.abs(step)) < config.xtol:
            converged, message = True, "parameter step below xtol"
            break
        candidate = x - step
        candidate_value = float(fun(candidate))
        if not np.isfinite(candidate_value) or candidate_value > value:
            learning_rate *= 0.5
            continue
        improvement = value - candidate_value
        x, value = candidate, candidate_value
        if improvement < config.ftol:
            converged, message = True, "loss change below ftol"
            break
        g = gradient(x)

    grad_norm = float(np.linalg.norm(gradient(x)))
    return OptimizeOutcome(x, value, converged, iteration, grad_norm, "rmsprop", message)
