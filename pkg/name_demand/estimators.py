"""
Estimators - Second-stage structural estimation.

Four procedures share the moment library and optimizer:

    estimate_homogeneous  plain logit on observed aggregate shares
    estimate_name         invert first-stage shares predicted at z0 once,
                          then minimise the moment loss over theta(z0)
    estimate_parametric   nested fixed point with beta(Z) = g(Z, gamma)
    estimate_bunching     one homogeneous logit per region of Z
"""

import logging
import re
import time
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import FAILED_INVERSION_PENALTY, SHARE_FLOOR
from .core.config_manager import ContractionConfig, OptimizerConfig
from .core.dataset import Dataset, validate_dataset
from .core.errors import (
    ContractionError,
    DataValidationError,
    EmptyRegionError,
    MomentError,
    NonFiniteUtilityError,
)
from .core.types import EstimationResult, MomentSpec, SimplexVector, ThetaPoint, XiMatrix, stack_markets
from .first_stage import SharePredictor, default_z0, predict
from .logit_engine import QuadratureRule, blp_contraction, contract, individual_probabilities, invert_logit
from .moments import CHOICE_MOMENTS, build_moments, choice_probabilities, spec_loss
from .optimizer import minimize

logger = logging.getLogger(__name__)

ShareSource = Union[SharePredictor, Callable[[np.ndarray, int], SimplexVector]]


@dataclass(frozen=True)
class ParameterLayout:
    """Position of beta, alpha and sigma inside the optimizer's vector"""

    k: int
    free_alpha: bool = True
    random_coefficients: bool = False

    @property
    def size(self) -> int:
        return self.k + int(self.free_alpha) + (self.k if self.random_coefficients else 0)

    def pack(self, beta: np.ndarray, alpha: float, sigma: Optional[np.ndarray] = None) -> np.ndarray:
        parts = [np.atleast_1d(np.asarray(beta, dtype=float))]
        if self.free_alpha:
            parts.append(np.array([alpha], dtype=float))
        if self.random_coefficients:
            parts.append(np.full(self.k, 0.5) if sigma is None else np.asarray(sigma, dtype=float))
        return np.concatenate(parts)

    def unpack(self, x: np.ndarray, eval_point: np.ndarray) -> ThetaPoint:
        beta = x[: self.k]
        pos = self.k
        alpha = 0.0
        if self.free_alpha:
            alpha = float(x[pos])
            pos += 1
        # sigma enters through its absolute value so the search is unconstrained
        sigma = np.abs(x[pos: pos + self.k]) if self.random_coefficients else None
        return ThetaPoint(beta, alpha, sigma, eval_point)


def prices_vary(dataset: Dataset) -> bool:
    """False when every price is zero, which fixes alpha = 0"""
    return any(np.any(m.P != 0.0) for m in dataset.markets)


def logit_start(dataset: Dataset, delta: np.ndarray, free_alpha: bool = True) -> Tuple[np.ndarray, float]:
    """OLS of mean utilities on [1, X, -P]; the intercept is dropped"""
    X, P, _ = stack_markets(dataset.markets)
    columns = [np.ones(delta.size), X.reshape(-1, dataset.k)]
    if free_alpha:
        columns.append(-P.reshape(-1, 1))
    coef, *_ = np.linalg.lstsq(np.column_stack(columns), np.asarray(delta).reshape(-1), rcond=None)
    beta = coef[1: 1 + dataset.k]
    alpha = float(coef[1 + dataset.k]) if free_alpha else 0.0
    return beta, alpha


def floor_shares(probs: np.ndarray, market_id: int) -> Tuple[SimplexVector, bool]:
    """Floor boundary predictions at SHARE_FLOOR and renormalise"""
    probs = np.asarray(probs, dtype=float)
    if np.all(probs >= SHARE_FLOOR):
        return SimplexVector(probs), False
    logger.warning("Predicted shares in market %d touch the boundary; flooring at %g", market_id, SHARE_FLOOR)
    floored = np.maximum(probs, SHARE_FLOOR)
    return SimplexVector(floored / floored.sum()), True


def as_share_source(source: ShareSource) -> Callable[[np.ndarray, int], SimplexVector]:
    if isinstance(source, SharePredictor):
        return lambda z, market_id: predict(source, z, market_id)
    return source


def predicted_targets(dataset: Dataset, source: ShareSource, z: np.ndarray) -> Tuple[Dict[int, SimplexVector], int]:
    """Shares predicted at ``z`` for every market, floored; also the number floored"""
    share_at = as_share_source(source)
    targets: Dict[int, SimplexVector] = {}
    n_floored = 0
    for mid in dataset.market_ids:
        shares = share_at(np.atleast_1d(z), mid)
        probs = shares.probs if isinstance(shares, SimplexVector) else np.asarray(shares, dtype=float)
        targets[mid], floored = floor_shares(probs, mid)
        n_floored += int(floored)
    return targets, n_floored


def _source_probabilities(dataset: Dataset, source: ShareSource) -> Dict[int, np.ndarray]:
    if isinstance(source, SharePredictor):
        return choice_probabilities(dataset, source)
    return {
        mid: np.vstack([np.asarray(getattr(s, "probs", s), dtype=float)
                        for s in (source(z, mid) for z in dataset.sample(mid).Z)])
        for mid in dataset.market_ids
    }


def _needs_choice_moments(spec: MomentSpec) -> bool:
    return any(m in CHOICE_MOMENTS for m in spec.moment_list)


class _InvertedUtilityObjective:
    """Moment loss when xi = delta(sigma) - X beta + alpha P.

    ``delta_for`` maps sigma (``None`` for plain logit) to the M x J mean
    utilities that reproduce the target shares.
    """

    def __init__(self, dataset: Dataset, layout: ParameterLayout, spec: MomentSpec,
                 delta_for: Callable[[Optional[np.ndarray]], np.ndarray], eval_point: np.ndarray,
                 probabilities: Optional[Mapping[int, np.ndarray]] = None):
        self.dataset = dataset
        self.layout = layout
        self.spec = spec
        self.delta_for = delta_for
        self.eval_point = eval_point
        self.probabilities = probabilities
        self.X, self.P, _ = stack_markets(dataset.markets)
        self.failures = 0

    def xi(self, theta: ThetaPoint) -> np.ndarray:
        delta = self.delta_for(theta.sigma)
        return delta - np.einsum("mjk,k->mj", self.X, theta.beta) + theta.alpha * self.P

    def moments(self, theta: ThetaPoint):
        return build_moments(self.dataset, self.xi(theta), self.spec.moment_list,
                             probabilities=self.probabilities, scale=self.spec.scale)

    def __call__(self, x: np.ndarray) -> float:
        theta = self.layout.unpack(np.asarray(x, dtype=float), self.eval_point)
        try:
            return spec_loss(self.moments(theta), self.spec)
        except (ContractionError, NonFiniteUtilityError, MomentError) as e:
            self.failures += 1
            logger.debug("Loss evaluation failed at %s: %s", x, e)
            return FAILED_INVERSION_PENALTY


def _cached_contraction(dataset: Dataset, targets: Mapping[int, SimplexVector], quad: QuadratureRule,
                        contraction: ContractionConfig) -> Callable[[Optional[np.ndarray]], np.ndarray]:
    """delta(sigma) by the BLP contraction, memoised on sigma"""
    k = dataset.k

    @lru_cache(maxsize=1024)
    def _delta(sigma_key: Tuple[float, ...]) -> np.ndarray:
        theta = ThetaPoint(np.zeros(k), 0.0, np.array(sigma_key))
        rows = [
            blp_contraction(targets[m.market_id], theta, m, quad, contraction.tol, contraction.max_iter).delta
            for m in dataset.markets
        ]
        return np.vstack(rows)

    def delta_for(sigma: Optional[np.ndarray]) -> np.ndarray:
        key = tuple(np.zeros(k) if sigma is None else np.asarray(sigma, dtype=float))
        return _delta(key)

    return delta_for


def default_name_moments(dataset: Dataset, random_coefficients: bool = False) -> Tuple[str, ...]:
    moments = ["x_xi"]
    if prices_vary(dataset):
        moments.append("p_xi")
    if random_coefficients and dataset.l > 0:
        moments.append("w_xi")
    return tuple(moments)


def _finish(objective: _InvertedUtilityObjective, outcome, started: float, estimator: str,
            quad: Optional[QuadratureRule] = None, **diagnostics) -> EstimationResult:
    theta = objective.layout.unpack(outcome.x, objective.eval_point)
    xi = objective.xi(theta)
    converged = bool(outcome.converged) and outcome.fun < FAILED_INVERSION_PENALTY
    diagnostics.update({
        "method": outcome.method,
        "grad_norm": outcome.grad_norm,
        "moments": list(objective.spec.moment_list),
        "failed_evaluations": objective.failures,
    })
    return EstimationResult(
        theta=theta,
        xi=XiMatrix(xi),
        converged=converged,
        iterations=outcome.iterations,
        final_loss=float(outcome.fun),
        elapsed_seconds=time.perf_counter() - started,
        estimator=estimator,
        quadrature_seed=None if quad is None else quad.seed,
        diagnostics=diagnostics,
    )


def estimate_homogeneous(dataset: Dataset, moment_spec: Optional[MomentSpec] = None,
                         optimizer: Optional[OptimizerConfig] = None,
                         eval_point: Optional[np.ndarray] = None,
                         estimator: str = "homogeneous") -> EstimationResult:
    """Homogeneous logit on the observed aggregate shares.

    Choice moments, when requested, use the observed shares as every
    individual's probabilities.
    """
    started = time.perf_counter()
    dataset = validate_dataset(dataset)
    free_alpha = prices_vary(dataset)
    spec = moment_spec or MomentSpec(default_name_moments(dataset))
    eval_point = default_z0(dataset) if eval_point is None else np.atleast_1d(np.asarray(eval_point, dtype=float))

    delta = np.vstack([invert_logit(m.observed_shares) for m in dataset.markets])
    probabilities = None
    if _needs_choice_moments(spec):
        probabilities = {
            m.market_id: np.tile(m.observed_shares.probs, (dataset.sample(m.market_id).N, 1))
            for m in dataset.markets
        }
    layout = ParameterLayout(dataset.k, free_alpha)
    objective = _InvertedUtilityObjective(dataset, layout, spec, lambda sigma: delta, eval_point, probabilities)
    beta0, alpha0 = logit_start(dataset, delta, free_alpha)
    outcome = minimize(objective, layout.pack(beta0, alpha0), optimizer)
    return _finish(objective, outcome, started, estimator)


def estimate_name(dataset: Dataset, predictor: ShareSource, z0: Optional[np.ndarray] = None,
                  moment_spec: Optional[MomentSpec] = None, optimizer: Optional[OptimizerConfig] = None,
                  quad: Optional[QuadratureRule] = None,
                  contraction: Optional[ContractionConfig] = None) -> EstimationResult:
    """NAME second stage at the base point ``z0``.

    Shares are predicted at ``z0`` once, before the optimizer starts. For
    plain logit the inversion is closed form and xi is linear in theta;
    with ``quad`` the random-coefficient scales join the search and each
    new sigma triggers one BLP contraction per market.

    Args:
        dataset: Validated dataset.
        predictor: Fitted first stage, or any callable (z, market_id) ->
            SimplexVector such as exact shares.
        z0: Base point; coordinatewise median of pooled Z when omitted.
        moment_spec: Moments and weighting; x_xi, p_xi by default (plus
            w_xi with random coefficients).
        optimizer: Optimizer settings.
        quad: Quadrature rule; enables random coefficients.
        contraction: Tolerance and iteration cap of the BLP contraction.

    Returns:
        EstimationResult with ``eval_point = z0``. Optimizer failure is
        reported through ``converged``.
    """
    started = time.perf_counter()
    dataset = validate_dataset(dataset)
    contraction = contraction or ContractionConfig()
    z0 = default_z0(dataset) if z0 is None else np.atleast_1d(np.asarray(z0, dtype=float))
    if z0.size != dataset.p:
        raise DataValidationError(f"dimension mismatch: z0 has {z0.size} entries, Z has p={dataset.p}")

    free_alpha = prices_vary(dataset)
    rc = quad is not None
    spec = moment_spec or MomentSpec(default_name_moments(dataset, rc))
    if rc and "w_xi" not in spec.moment_list:
        logger.warning("Random coefficients without instrument moments are weakly identified")

    targets, n_floored = predicted_targets(dataset, predictor, z0)
    if rc:
        delta_for = _cached_contraction(dataset, targets, quad, contraction)
    else:
        delta = np.vstack([invert_logit(targets[mid]) for mid in dataset.market_ids])

        def delta_for(sigma: Optional[np.ndarray]) -> np.ndarray:
            return delta

    probabilities = _source_probabilities(dataset, predictor) if _needs_choice_moments(spec) else None
    layout = ParameterLayout(dataset.k, free_alpha, rc)
    objective = _InvertedUtilityObjective(dataset, layout, spec, delta_for, z0, probabilities)
    beta0, alpha0 = logit_start(dataset, delta_for(None), free_alpha)
    outcome = minimize(objective, layout.pack(beta0, alpha0), optimizer)
    return _finish(objective, outcome, started, "name", quad, floored_markets=n_floored)


# --------------------------------------------------------------------------
# Nested fixed point

_TERM = re.compile(r"^(?:(1)|z(?:\[(\d+)\])?(?:\^(\d+))?)$")


@dataclass(frozen=True)
class BasisTerm:
    """Z[column] ** power, or the constant when ``column`` is None"""

    column: Optional[int] = None
    power: int = 1

    def evaluate(self, Z: np.ndarray) -> np.ndarray:
        if self.column is None:
            return np.ones(Z.shape[0])
        return Z[:, self.column] ** self.power

    @property
    def label(self) -> str:
        if self.column is None:
            return "1"
        base = "z" if self.column == 0 else f"z[{self.column}]"
        return base if self.power == 1 else f"{base}^{self.power}"


@dataclass(frozen=True, eq=False)
class ParametricSpec:
    """g(Z, gamma): one list of basis terms per characteristic coefficient"""

    terms: Tuple[Tuple[BasisTerm, ...], ...]
    gamma0: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.terms or any(len(t) == 0 for t in self.terms):
            raise DataValidationError("every coefficient needs at least one basis term")
        if self.gamma0 is not None:
            gamma0 = np.asarray(self.gamma0, dtype=float)
            if gamma0.size != self.n_gamma:
                raise DataValidationError(f"gamma0 has {gamma0.size} entries, spec needs {self.n_gamma}")
            object.__setattr__(self, "gamma0", gamma0)

    @classmethod
    def parse(cls, text: str, k: int = 1, gamma0: Optional[Sequence[float]] = None) -> "ParametricSpec":
        """Parse ``"1+z+z^2"``; ``;`` separates coefficients, one list is reused for all k"""
        blocks = [b for b in text.replace(" ", "").split(";") if b]
        if not blocks:
            raise DataValidationError("empty parametric spec")
        parsed = []
        for block in blocks:
            terms = []
            for token in block.split("+"):
                match = _TERM.match(token)
                if not match:
                    raise DataValidationError(f"cannot parse basis term '{token}' in spec '{text}'")
                if match.group(1):
                    terms.append(BasisTerm(None, 0))
                else:
                    terms.append(BasisTerm(int(match.group(2) or 0), int(match.group(3) or 1)))
            parsed.append(tuple(terms))
        if len(parsed) == 1:
            parsed = parsed * k
        if len(parsed) != k:
            raise DataValidationError(f"spec lists {len(parsed)} coefficients, data has k={k}")
        return cls(tuple(parsed), None if gamma0 is None else np.asarray(gamma0, dtype=float))

    @classmethod
    def oracle(cls, k: int = 1) -> "ParametricSpec":
        return cls.parse("1+z+z^2", k)

    @classmethod
    def misspecified(cls, k: int = 1) -> "ParametricSpec":
        return cls.parse("1+z^2", k)

    @property
    def k(self) -> int:
        return len(self.terms)

    @property
    def n_gamma(self) -> int:
        return sum(len(t) for t in self.terms)

    @property
    def label(self) -> str:
        return ";".join("+".join(term.label for term in block) for block in self.terms)

    def default_moments(self, free_alpha: bool = True) -> Tuple[str, ...]:
        powers = {t.power for block in self.terms for t in block if t.column is not None}
        moments = ["x_xi"] + (["p_xi"] if free_alpha else [])
        if 1 in powers:
            moments.append("z_xd")
        if 2 in powers:
            moments.append("z2_xd")
        return tuple(moments)

    def design(self, Z: np.ndarray) -> List[np.ndarray]:
        """Per coefficient, the N x T_c matrix of basis values"""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return [np.column_stack([t.evaluate(Z) for t in block]) for block in self.terms]

    def split_gamma(self, gamma: np.ndarray) -> List[np.ndarray]:
        bounds = np.cumsum([0] + [len(t) for t in self.terms])
        return [gamma[bounds[c]: bounds[c + 1]] for c in range(self.k)]

    def beta_at(self, Z: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """beta(Z_i) for every row, N x k"""
        return np.column_stack([B @ g for B, g in zip(self.design(Z), self.split_gamma(gamma))])


class ParametricObjective:
    """Nested-fixed-point loss over (gamma, alpha).

    Each market's individuals are equally weighted integration nodes with
    heterogeneity mu_ij = g(Z_i, gamma)'X_j, so delta_j = -alpha P_j + xi_j
    and one contraction per market recovers delta. Every contraction starts
    from the logit inversion minus the mean of mu, which keeps the loss a
    deterministic function of gamma.
    """

    def __init__(self, dataset: Dataset, spec: ParametricSpec, moment_spec: MomentSpec,
                 contraction: Optional[ContractionConfig] = None, free_alpha: bool = True):
        if spec.k != dataset.k:
            raise DataValidationError(f"spec has {spec.k} coefficients, data has k={dataset.k}")
        self.dataset = dataset
        self.spec = spec
        self.moment_spec = moment_spec
        self.contraction = contraction or ContractionConfig()
        self.free_alpha = free_alpha
        self.designs = {mid: spec.design(dataset.sample(mid).Z) for mid in dataset.market_ids}
        self.X, self.P, _ = stack_markets(dataset.markets)
        self.failures = 0
        self._invert = lru_cache(maxsize=256)(self._invert_uncached)

    @property
    def n_params(self) -> int:
        return self.spec.n_gamma + int(self.free_alpha)

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, float]:
        gamma = np.asarray(x[: self.spec.n_gamma], dtype=float)
        alpha = float(x[self.spec.n_gamma]) if self.free_alpha else 0.0
        return gamma, alpha

    def heterogeneity(self, market_id: int, gamma: np.ndarray) -> np.ndarray:
        parts = self.spec.split_gamma(gamma)
        beta_i = np.column_stack([B @ g for B, g in zip(self.designs[market_id], parts)])
        return beta_i @ self.dataset.market(market_id).X.T

    def _invert_uncached(self, gamma_key: Tuple[float, ...]):
        gamma = np.array(gamma_key)
        deltas, mus = [], {}
        for market in self.dataset.markets:
            mu = self.heterogeneity(market.market_id, gamma)
            weights = np.full(mu.shape[0], 1.0 / mu.shape[0])
            start = invert_logit(market.observed_shares) - mu.mean(axis=0)
            result = contract(market.observed_shares, mu, weights, delta0=start,
                              tol=self.contraction.tol, max_iter=self.contraction.max_iter)
            deltas.append(result.delta)
            mus[market.market_id] = mu
        return np.vstack(deltas), mus

    def implied_probabilities(self, gamma: np.ndarray) -> Dict[int, np.ndarray]:
        deltas, mus = self._invert(tuple(np.asarray(gamma, dtype=float)))
        return {
            m.market_id: individual_probabilities(deltas[i], mus[m.market_id])
            for i, m in enumerate(self.dataset.markets)
        }

    def evaluate(self, x: np.ndarray):
        """(loss, xi, probabilities) at ``x``; raises on inversion failure"""
        gamma, alpha = self.split(x)
        deltas, _ = self._invert(tuple(gamma))
        xi = deltas + alpha * self.P
        probabilities = self.implied_probabilities(gamma)
        moments = build_moments(self.dataset, xi, self.moment_spec.moment_list,
                                probabilities=probabilities, scale=self.moment_spec.scale)
        return spec_loss(moments, self.moment_spec), xi, probabilities

    def __call__(self, x: np.ndarray) -> float:
        try:
            return self.evaluate(np.asarray(x, dtype=float))[0]
        except (ContractionError, NonFiniteUtilityError, MomentError) as e:
            self.failures += 1
            logger.debug("Nested fixed point failed at %s: %s", x, e)
            return FAILED_INVERSION_PENALTY


def implied_probabilities(dataset: Dataset, spec: ParametricSpec, gamma: np.ndarray,
                          contraction: Optional[ContractionConfig] = None) -> Dict[int, np.ndarray]:
    """Model choice probabilities of every individual at ``gamma``"""
    objective = ParametricObjective(dataset, spec, MomentSpec(("x_xi",)), contraction, prices_vary(dataset))
    return objective.implied_probabilities(gamma)


def estimate_parametric(dataset: Dataset, spec: ParametricSpec, moment_spec: Optional[MomentSpec] = None,
                        optimizer: Optional[OptimizerConfig] = None,
                        contraction: Optional[ContractionConfig] = None,
                        z0: Optional[np.ndarray] = None, estimator: str = "parametric") -> EstimationResult:
    """Nested fixed point: every loss evaluation re-inverts the observed shares.

    A failed inner inversion scores ``FAILED_INVERSION_PENALTY``; the
    count is reported in ``diagnostics["contraction_failures"]`` and the
    result is flagged non-converged when the final point itself fails.
    """
    started = time.perf_counter()
    dataset = validate_dataset(dataset)
    free_alpha = prices_vary(dataset)
    moment_spec = moment_spec or MomentSpec(spec.default_moments(free_alpha))
    z0 = default_z0(dataset) if z0 is None else np.atleast_1d(np.asarray(z0, dtype=float))
    objective = ParametricObjective(dataset, spec, moment_spec, contraction, free_alpha)

    delta = np.vstack([invert_logit(m.observed_shares) for m in dataset.markets])
    beta0, alpha0 = logit_start(dataset, delta, free_alpha)
    if spec.gamma0 is not None:
        gamma0 = spec.gamma0.copy()
    else:
        gamma0 = np.concatenate([
            np.array([beta0[c] if t.column is None else 0.0 for t in block])
            for c, block in enumerate(spec.terms)
        ])
    x0 = np.concatenate([gamma0, [alpha0]]) if free_alpha else gamma0
    outcome = minimize(objective, x0, optimizer)

    gamma, alpha = objective.split(outcome.x)
    converged = bool(outcome.converged)
    try:
        _, xi, _ = objective.evaluate(outcome.x)
    except (ContractionError, NonFiniteUtilityError, MomentError) as e:
        logger.warning("Final nested-fixed-point evaluation failed: %s", e)
        xi = np.zeros((dataset.M, dataset.J))
        converged = False
    beta = spec.beta_at(z0[None, :], gamma)[0]
    return EstimationResult(
        theta=ThetaPoint(beta, alpha, None, z0),
        xi=XiMatrix(xi),
        converged=converged and outcome.fun < FAILED_INVERSION_PENALTY,
        iterations=outcome.iterations,
        final_loss=float(outcome.fun),
        elapsed_seconds=time.perf_counter() - started,
        estimator=estimator,
        diagnostics={
            "gamma": gamma.tolist(),
            "spec": spec.label,
            "moments": list(moment_spec.moment_list),
            "contraction_failures": objective.failures,
            "method": outcome.method,
            "grad_norm": outcome.grad_norm,
        },
    )


# --------------------------------------------------------------------------
# Bunching


@dataclass(frozen=True, eq=False)
class Box:
    """Half-open box lower <= Z < upper"""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower >= upper):
            raise DataValidationError("box bounds must satisfy lower < upper coordinatewise")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, Z: np.ndarray) -> np.ndarray:
        Z = np.atleast_2d(Z)
        return np.all((Z >= self.lower) & (Z < self.upper), axis=1)

    def overlaps(self, other: "Box") -> bool:
        return bool(np.all(np.maximum(self.lower, other.lower) < np.minimum(self.upper, other.upper)))


@dataclass(frozen=True, eq=False)
class BunchingSpec:
    """Disjoint regions of Z, each with its own homogeneous logit"""

    regions: Tuple[Box, ...]

    def __post_init__(self):
        regions = tuple(self.regions)
        if not regions:
            raise DataValidationError("bunching needs at least one region")
        if len({r.lower.size for r in regions}) != 1:
            raise DataValidationError("dimension mismatch between bunching regions")
        for i, a in enumerate(regions):
            for b in regions[i + 1:]:
                if a.overlaps(b):
                    raise DataValidationError("bunching regions must be disjoint")
        object.__setattr__(self, "regions", regions)

    @property
    def K(self) -> int:
        return len(self.regions)

    @classmethod
    def from_cuts(cls, p: int, column: int, cuts: Sequence[float]) -> "BunchingSpec":
        """Slabs along one coordinate between consecutive cut points"""
        edges = [-np.inf, *sorted(float(c) for c in cuts), np.inf]
        boxes = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            lower, upper = np.full(p, -np.inf), np.full(p, np.inf)
            lower[column], upper[column] = lo, hi
            boxes.append(Box(lower, upper))
        return cls(tuple(boxes))

    @classmethod
    def from_quantiles(cls, dataset: Dataset, column: int = 0, K: int = 2) -> "BunchingSpec":
        if not 0 <= column < dataset.p:
            raise DataValidationError(f"column {column} outside 0..{dataset.p - 1}")
        values = dataset.pooled_Z()[:, column]
        cuts = np.unique(np.quantile(values, [i / K for i in range(1, K)])) if K > 1 else []
        if len(cuts) < K - 1:
            logger.warning("Tied quantiles: %d bunching regions instead of %d", len(cuts) + 1, K)
        return cls.from_cuts(dataset.p, column, cuts)

    def assign(self, Z: np.ndarray) -> np.ndarray:
        """Region index per row; every row must fall in exactly one region"""
        membership = np.column_stack([r.contains(Z) for r in self.regions])
        hits = membership.sum(axis=1)
        if np.any(hits != 1):
            raise DataValidationError("bunching regions do not cover the observed Z support")
        return np.argmax(membership, axis=1)


def estimate_bunching(dataset: Dataset, spec: BunchingSpec, moment_spec: Optional[MomentSpec] = None,
                      optimizer: Optional[OptimizerConfig] = None) -> List[EstimationResult]:
    """One homogeneous logit per region, on shares recounted from the region's individuals.

    Markets whose region subsample has boundary shares are dropped from
    that region.

    Raises:
        EmptyRegionError: no market leaves a usable subsample in a region.
    """
    dataset = validate_dataset(dataset)
    assignments = {mid: spec.assign(dataset.sample(mid).Z) for mid in dataset.market_ids}
    results = []
    for r in range(spec.K):
        markets, samples = [], {}
        dropped = 0
        for market in dataset.markets:
            mask = assignments[market.market_id] == r
            if not np.any(mask):
                continue
            sub = dataset.sample(market.market_id).subset(mask)
            counted = sub.counts(dataset.J) / sub.N
            if np.any(counted <= 0.0) or np.any(counted >= 1.0):
                dropped += 1
                continue
            markets.append(market.with_shares(counted))
            samples[market.market_id] = sub
        if not markets:
            raise EmptyRegionError(f"bunching region {r} holds no market with interior shares")
        region = Dataset(tuple(markets), samples, validated=True)
        result = estimate_homogeneous(region, moment_spec, optimizer, default_z0(region), "bunching")
        diagnostics = dict(result.diagnostics, region=r, markets_used=len(markets), markets_dropped=dropped)
        results.append(replace(result, diagnostics=diagnostics))
        logger.info("Bunching region %d: alpha=%.4f on %d markets (%d dropped)",
                    r, result.alpha, len(markets), dropped)
    return results
