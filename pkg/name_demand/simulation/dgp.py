"""
Data-generating processes for the Monte Carlo experiments.

Misspecification design: scalar Z ~ N(0, 1), one characteristic X ~ N(0, 1),
exogenous prices |N(0, 1)| + shift, xi ~ N(0, xi_sd^2) and
beta(Z) = g0 + g1 Z + g2 Z^2. Individuals pick the argmax of utilities
with type-I extreme value noise; shares are counted.

Sparse design: one good, no price, Z ~ N(0, I_p); in each market a few of
the first p0 covariates are active and u_1 = X_m sum_r Z_r + noise.

Every draw is a pure function of (config, seed). Sparse markets draw from
their own stream seeded by (seed, market), so streaming and batch
generation agree.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, Mapping, Tuple

import numpy as np

from ..core.config_manager import MisspecConfig, SparseConfig
from ..core.dataset import Dataset, IndividualSample, validate_dataset
from ..core.errors import BoundaryShareError
from ..core.types import MarketData, SimplexVector, ThetaPoint
from ..logit_engine import logit_shares

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MisspecTruth:
    gamma: np.ndarray
    alpha: float
    xi: np.ndarray

    def beta_at(self, z: Any) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.gamma[0] + self.gamma[1] * z + self.gamma[2] * z ** 2

    def to_dict(self) -> Dict[str, Any]:
        return {"gamma": self.gamma.tolist(), "alpha": self.alpha, "xi": self.xi.tolist()}


@dataclass(frozen=True)
class SparseTruth:
    active: Mapping[int, Tuple[int, ...]]

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(sorted(set().union(*self.active.values()))) if self.active else ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "support": list(self.support),
            "active": {str(mid): list(a) for mid, a in sorted(self.active.items())},
        }


def _counted_shares(d: np.ndarray, J: int, market_id: int) -> np.ndarray:
    counts = np.bincount(d, minlength=J + 1)
    if np.any(counts == 0):
        raise BoundaryShareError(
            f"degenerate market {market_id}: choice counts {counts.tolist()} leave a good unchosen"
        )
    return counts / d.size


def gen_misspec(config: MisspecConfig, seed: int) -> Tuple[Dataset, MisspecTruth]:
    """Simulate one replication of the misspecification design.

    Raises:
        BoundaryShareError: a good received no (or every) choice.
    """
    rng = np.random.default_rng(seed)
    gamma = np.asarray(config.gamma, dtype=float)
    J, N = config.J, config.N
    markets, samples, xis = [], {}, []
    for m in range(config.M):
        X = rng.standard_normal((J, 1))
        P = np.abs(rng.standard_normal(J)) + config.price_shift
        xi = rng.normal(0.0, config.xi_sd, J)
        Z = rng.standard_normal(N)
        beta = gamma[0] + gamma[1] * Z + gamma[2] * Z ** 2
        utility = np.zeros((N, J + 1))
        utility[:, 1:] = beta[:, None] * X[None, :, 0] - config.alpha_true * P[None, :] + xi[None, :]
        utility += rng.gumbel(size=(N, J + 1))
        d = np.argmax(utility, axis=1)
        markets.append(MarketData(m, X, P, np.zeros((J, 0)), _counted_shares(d, J, m)))
        samples[m] = IndividualSample(m, Z[:, None], d)
        xis.append(xi)
    dataset = validate_dataset(Dataset(tuple(markets), samples))
    logger.debug("Generated misspecification data: M=%d N=%d J=%d seed=%d", config.M, N, J, seed)
    return dataset, MisspecTruth(gamma, float(config.alpha_true), np.vstack(xis))


def true_shares_at(z: Any, market: MarketData, xi_row: np.ndarray, truth: MisspecTruth) -> SimplexVector:
    """Analytic logit shares of the misspecification design at covariate value z"""
    z = float(np.atleast_1d(z)[0])
    theta = ThetaPoint(np.atleast_1d(truth.beta_at(z)), truth.alpha)
    return logit_shares(theta, xi_row, market)


def exact_share_source(dataset: Dataset, truth: MisspecTruth) -> Callable[[np.ndarray, int], SimplexVector]:
    """(z, market_id) -> true shares; stands in for a fitted first stage"""
    rows = {mid: truth.xi[i] for i, mid in enumerate(dataset.market_ids)}

    def share_at(z: np.ndarray, market_id: int) -> SimplexVector:
        return true_shares_at(z, dataset.market(market_id), rows[market_id], truth)

    return share_at


def iter_sparse_markets(config: SparseConfig, seed: int) -> Iterator[Tuple[MarketData, IndividualSample, Tuple[int, ...]]]:
    """Yield (market, individuals, active covariates) one market at a time"""
    for m in range(config.M):
        rng = np.random.default_rng([seed, m])
        active = tuple(sorted(int(u) for u in rng.choice(config.p0, size=config.active_per_market, replace=False)))
        X = float(rng.standard_normal())
        Z = rng.standard_normal((config.N, config.p))
        inside = X * Z[:, list(active)].sum(axis=1) + rng.gumbel(size=config.N)
        outside = rng.gumbel(size=config.N)
        d = (inside > outside).astype(np.int64)
        market = MarketData(m, [[X]], [0.0], np.zeros((1, 0)), _counted_shares(d, 1, m))
        yield market, IndividualSample(m, Z, d), active


def gen_sparse(config: SparseConfig, seed: int) -> Tuple[Dataset, SparseTruth]:
    markets, samples, active = [], {}, {}
    for market, sample, act in iter_sparse_markets(config, seed):
        markets.append(market)
        samples[market.market_id] = sample
        active[market.market_id] = act
    dataset = validate_dataset(Dataset(tuple(markets), samples))
    return dataset, SparseTruth(active)
