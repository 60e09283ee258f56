"""
Moments - Sample moment library and the minimum-distance loss.

Moment identifiers:
    x_xi   cov(X_c, xi) for every characteristic column c
    p_xi   cov(P, xi)
    w_xi   cov(W_c, xi) for every instrument column c
    z_xd   cov(Z_u, X_{d,c}) - cov(Z_u, sum_j s_j(Z_i) X_{j,c})
    z2_xd  the same with Z_u squared

Product moments pool the (j, m) cells, choice moments pool the (i, m)
individuals. Covariances use the 1/n normalisation. With ``scale=True`` a
moment is divided by the standard deviations of its data ingredients
(X, P, W, Z), never by those of xi.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .core.dataset import Dataset
from .core.errors import MomentError
from .core.types import MomentSpec, XiMatrix, check_weight_matrix, stack_markets
from .first_stage import SharePredictor, predict_many

PRODUCT_MOMENTS = ("x_xi", "p_xi", "w_xi")
CHOICE_MOMENTS = ("z_xd", "z2_xd")


@dataclass(frozen=True)
class MomentValue:
    identifier: str
    value: float
    target: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.value) and np.isfinite(self.target)):
            raise MomentError(f"moment {self.identifier} is not finite")

    @property
    def deviation(self) -> float:
        return self.value - self.target


def _cov(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def _scale(*columns: np.ndarray) -> float:
    scale = 1.0
    for col in columns:
        sd = float(np.std(col))
        if sd > 0.0:
            scale *= sd
    return scale


def choice_probabilities(dataset: Dataset, predictor: SharePredictor) -> Dict[int, np.ndarray]:
    """First-stage probabilities at every individual's own Z"""
    return {mid: predict_many(predictor, dataset.sample(mid).Z, mid) for mid in dataset.market_ids}


def build_moments(
    dataset: Dataset,
    xi: Union[XiMatrix, np.ndarray],
    which: Sequence[str] = ("x_xi", "p_xi"),
    predictor: Optional[SharePredictor] = None,
    probabilities: Optional[Mapping[int, np.ndarray]] = None,
    scale: bool = True,
) -> List[MomentValue]:
    """Evaluate the requested moments.

    Args:
        dataset: Validated dataset.
        xi: M x J unobserved qualities in dataset market order.
        which: Moment identifiers, evaluated in canonical order per group.
        predictor: First-stage model supplying s_j(Z_i) for choice moments.
        probabilities: Per-market N_m x (J+1) choice probabilities; takes
            precedence over ``predictor`` (model-implied probabilities).
        scale: Divide by standard deviations of the data ingredients.

    Raises:
        MomentError: dimensions disagree, or a choice moment was requested
            without probabilities or a predictor.
    """
    xi_values = xi.values if isinstance(xi, XiMatrix) else np.asarray(xi, dtype=float)
    if xi_values.shape != (dataset.M, dataset.J):
        raise MomentError(f"xi is {xi_values.shape}, dataset needs {(dataset.M, dataset.J)}")

    X, P, W = stack_markets(dataset.markets)
    xi_cells = xi_values.reshape(-1)
    X_cells = X.reshape(-1, dataset.k)
    out: List[MomentValue] = []

    if "x_xi" in which:
        for c in range(dataset.k):
            s = _scale(X_cells[:, c]) if scale else 1.0
            out.append(MomentValue(f"x_xi[{c}]", _cov(X_cells[:, c], xi_cells) / s))
    if "p_xi" in which:
        P_cells = P.reshape(-1)
        s = _scale(P_cells) if scale else 1.0
        out.append(MomentValue("p_xi", _cov(P_cells, xi_cells) / s))
    if "w_xi" in which:
        if dataset.l == 0:
            raise MomentError("moment w_xi requested but the dataset has no instruments")
        W_cells = W.reshape(-1, dataset.l)
        for c in range(dataset.l):
            s = _scale(W_cells[:, c]) if scale else 1.0
            out.append(MomentValue(f"w_xi[{c}]", _cov(W_cells[:, c], xi_cells) / s))

    powers = [(ident, power) for ident, power in (("z_xd", 1), ("z2_xd", 2)) if ident in which]
    if powers:
        if probabilities is None:
            if predictor is None:
                raise MomentError(f"moments {[p[0] for p in powers]} need a predictor or choice probabilities")
            probabilities = choice_probabilities(dataset, predictor)
        Z, chosen, implied = _choice_columns(dataset, probabilities)
        for ident, power in powers:
            Zp = Z ** power
            for u in range(Zp.shape[1]):
                for c in range(dataset.k):
                    s = _scale(Zp[:, u], X_cells[:, c]) if scale else 1.0
                    value = _cov(Zp[:, u], chosen[:, c]) - _cov(Zp[:, u], implied[:, c])
                    out.append(MomentValue(f"{ident}[{u},{c}]", value / s))
    return out


def _choice_columns(dataset: Dataset, probabilities: Mapping[int, np.ndarray]):
    """Pooled Z, characteristics of the chosen good and probability-weighted characteristics"""
    Zs, chosen, implied = [], [], []
    for market in dataset.markets:
        sample = dataset.sample(market.market_id)
        probs = np.asarray(probabilities[market.market_id], dtype=float)
        if probs.shape != (sample.N, market.J + 1):
            raise MomentError(
                f"market {market.market_id}: probabilities are {probs.shape}, need {(sample.N, market.J + 1)}"
            )
        X_with_outside = np.vstack([np.zeros((1, market.k)), market.X])
        Zs.append(sample.Z)
        chosen.append(X_with_outside[sample.d])
        implied.append(probs @ X_with_outside)
    return np.vstack(Zs), np.vstack(chosen), np.vstack(implied)


def moment_vector(moments: Sequence[Union[MomentValue, float]]) -> np.ndarray:
    return np.array([m.deviation if isinstance(m, MomentValue) else float(m) for m in moments])


def md_loss(
    moments: Sequence[Union[MomentValue, float]],
    R: Optional[np.ndarray] = None,
    aggregate: Optional[Sequence[Union[MomentValue, float]]] = None,
    h: float = 0.0,
    R0: Optional[np.ndarray] = None,
) -> float:
    """H'RH, plus h G'R0G when an aggregate block is supplied and h > 0"""
    H = moment_vector(moments)
    R = np.eye(H.size) if R is None else np.asarray(R, dtype=float)
    if R.shape != (H.size, H.size):
        raise MomentError(f"weight matrix is {R.shape} for {H.size} moments")
    check_weight_matrix(R)
    loss = float(H @ R @ H)
    if h < 0.0:
        raise MomentError("aggregate weight h must be >= 0")
    if h > 0.0 and aggregate is not None:
        G = moment_vector(aggregate)
        R0 = np.eye(G.size) if R0 is None else np.asarray(R0, dtype=float)
        if R0.shape != (G.size, G.size):
            raise MomentError(f"aggregate weight matrix is {R0.shape} for {G.size} moments")
        check_weight_matrix(R0)
        loss += h * float(G @ R0 @ G)
    return loss


def spec_loss(moments: Sequence[MomentValue], spec: MomentSpec) -> float:
    """md_loss weighted by the MomentSpec's R (identity when unset)"""
    return md_loss(moments, spec.weight_matrix(len(moments)))
