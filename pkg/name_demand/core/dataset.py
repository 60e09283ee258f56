"""
Dataset - Validated bundle of market-level and individual-level data
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import BoundaryShareError, DataValidationError
from .types import IndividualData, MarketData, frozen_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class IndividualSample:
    """All individuals of one market as arrays: Z is N x p, d has N choices"""

    market_id: int
    Z: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        Z = frozen_array(self.Z, name="Z")
        if Z.ndim == 1:
            Z = frozen_array(Z.reshape(-1, 1), name="Z")
        d = np.asarray(self.d, dtype=np.int64).copy()
        d.setflags(write=False)
        if d.ndim != 1 or d.size != Z.shape[0]:
            raise DataValidationError(f"market {self.market_id}: {d.size} choices for {Z.shape[0]} Z rows")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "d", d)

    @property
    def N(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    def counts(self, J: int) -> np.ndarray:
        return np.bincount(self.d, minlength=J + 1).astype(float)

    def subset(self, mask: np.ndarray) -> "IndividualSample":
        return IndividualSample(self.market_id, self.Z[mask], self.d[mask])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated handle over markets and their individual samples.

    Markets are kept in ascending ``market_id`` order; ``samples`` maps each
    market id to its individuals. ``share_discrepancy`` holds the largest
    gap between stored and counted shares when shares were recomputed.
    """

    markets: Tuple[MarketData, ...]
    samples: Mapping[int, IndividualSample]
    share_discrepancy: Optional[float] = None
    validated: bool = field(default=False, repr=False)

    @property
    def M(self) -> int:
        return len(self.markets)

    @property
    def J(self) -> int:
        return self.markets[0].J

    @property
    def k(self) -> int:
        return self.markets[0].k

    @property
    def l(self) -> int:
        return self.markets[0].l

    @property
    def p(self) -> int:
        return next(iter(self.samples.values())).p

    @property
    def market_ids(self) -> List[int]:
        return [m.market_id for m in self.markets]

    @property
    def n_individuals(self) -> int:
        return sum(s.N for s in self.samples.values())

    def market(self, market_id: int) -> MarketData:
        for m in self.markets:
            if m.market_id == market_id:
                return m
        raise KeyError(f"unknown market {market_id}")

    def sample(self, market_id: int) -> IndividualSample:
        return self.samples[market_id]

    def counted_shares(self, market_id: int) -> np.ndarray:
        sample = self.samples[market_id]
        return sample.counts(self.market(market_id).J) / sample.N

    def pooled_Z(self) -> np.ndarray:
        return np.vstack([self.samples[mid].Z for mid in self.market_ids])

    def individuals(self) -> Iterator[IndividualData]:
        for mid in self.market_ids:
            sample = self.samples[mid]
            for z, d in zip(sample.Z, sample.d):
                yield IndividualData(mid, z, int(d))

    def project(self, columns: Sequence[int]) -> "Dataset":
        """Restrict every individual's Z to ``columns`` (in the given order)"""
        cols = list(columns)
        samples = {mid: IndividualSample(mid, s.Z[:, cols], s.d) for mid, s in self.samples.items()}
        return Dataset(self.markets, samples, self.share_discrepancy, validated=True)

    def replace_samples(self, samples: Mapping[int, IndividualSample]) -> "Dataset":
        return Dataset(self.markets, dict(samples), self.share_discrepancy, validated=True)


def validate_dataset(
    markets: Union[Dataset, Sequence[MarketData]],
    individuals: Optional[Iterable[IndividualData]] = None,
    recompute_shares: bool = False,
) -> Dataset:
    """Cross-check markets against individuals and bundle them.

    Args:
        markets: Market records, or an already validated ``Dataset``.
        individuals: Individual records; every ``market_id`` must exist.
        recompute_shares: Replace stored shares by counted choice
            frequencies and record the largest discrepancy.

    Returns:
        Validated ``Dataset``. Validating a validated handle returns it
        unchanged.
    """
    if isinstance(markets, Dataset):
        if markets.validated and not recompute_shares:
            return markets
        return _validate_samples(markets.markets, dict(markets.samples), recompute_shares)

    if individuals is None:
        raise DataValidationError("individual records are required")

    market_list = sorted(markets, key=lambda m: m.market_id)
    ids = [m.market_id for m in market_list]
    if len(set(ids)) != len(ids):
        raise DataValidationError("duplicate market ids")

    grouped: Dict[int, Tuple[List[np.ndarray], List[int]]] = {mid: ([], []) for mid in ids}
    for ind in individuals:
        if ind.market_id not in grouped:
            raise DataValidationError(f"individual references unknown market {ind.market_id}")
        zs, ds = grouped[ind.market_id]
        zs.append(ind.Z)
        ds.append(ind.d)

    samples: Dict[int, IndividualSample] = {}
    p = None
    for mid, (zs, ds) in grouped.items():
        if not zs:
            raise DataValidationError(f"empty market {mid}: no individuals")
        if p is None:
            p = zs[0].size
        sizes = {z.size for z in zs}
        if sizes != {p}:
            raise DataValidationError(f"dimension mismatch: Z sizes {sorted(sizes)} in market {mid}, expected {p}")
        samples[mid] = IndividualSample(mid, np.vstack(zs), np.asarray(ds))

    return _validate_samples(tuple(market_list), samples, recompute_shares)


def _validate_samples(
    markets: Tuple[MarketData, ...],
    samples: Dict[int, IndividualSample],
    recompute_shares: bool,
) -> Dataset:
    if not markets:
        raise DataValidationError("dataset has no markets")
    markets = tuple(sorted(markets, key=lambda m: m.market_id))

    J, k, l = markets[0].J, markets[0].k, markets[0].l
    for m in markets:
        if (m.J, m.k, m.l) != (J, k, l):
            raise DataValidationError(
                f"dimension mismatch in market {m.market_id}: (J, k, l) = {(m.J, m.k, m.l)}, expected {(J, k, l)}"
            )

    p = None
    for m in markets:
        sample = samples.get(m.market_id)
        if sample is None or sample.N == 0:
            raise DataValidationError(f"empty market {m.market_id}: no individuals")
        if p is None:
            p = sample.p
        elif sample.p != p:
            raise DataValidationError(f"dimension mismatch: market {m.market_id} has p={sample.p}, expected {p}")
        if sample.d.min() < 0 or sample.d.max() > J:
            raise DataValidationError(
                f"choice index out of range in market {m.market_id}: choices must lie in 0..{J}"
            )
    if set(samples) - {m.market_id for m in markets}:
        raise DataValidationError("individuals reference unknown markets")

    discrepancy = None
    if recompute_shares:
        rebuilt = []
        discrepancy = 0.0
        for m in markets:
            counted = samples[m.market_id].counts(J) / samples[m.market_id].N
            discrepancy = max(discrepancy, float(np.max(np.abs(counted - m.observed_shares.probs))))
            try:
                rebuilt.append(m.with_shares(counted))
            except BoundaryShareError as e:
                raise BoundaryShareError(f"degenerate market {m.market_id}: {e}") from e
        markets = tuple(rebuilt)
        logger.info("Recomputed shares for %d markets, max discrepancy %.3e", len(markets), discrepancy)

    return Dataset(markets, dict(samples), discrepancy, validated=True)


def dataset_to_dict(dataset: Dataset) -> Dict[str, Any]:
    """Interchange document: {"markets": [...], "individuals": [...]}"""
    markets = [
        {
            "id": m.market_id,
            "X": m.X.tolist(),
            "P": m.P.tolist(),
            "W": m.W.tolist(),
            "shares": m.observed_shares.probs.tolist(),
        }
        for m in dataset.markets
    ]
    individuals = []
    for mid in dataset.market_ids:
        sample = dataset.samples[mid]
        for z, d in zip(sample.Z.tolist(), sample.d.tolist()):
            individuals.append({"market": mid, "Z": z, "d": d})
    return {"markets": markets, "individuals": individuals}


def dataset_from_dict(document: Mapping[str, Any]) -> Dataset:
    try:
        markets = [
            MarketData(rec["id"], rec["X"], rec["P"], rec.get("W", []), rec["shares"])
            for rec in document["markets"]
        ]
        individuals = [IndividualData(rec["market"], rec["Z"], rec["d"]) for rec in document["individuals"]]
    except KeyError as e:
        raise DataValidationError(f"dataset document is missing field {e}") from e
    return validate_dataset(markets, individuals)


def dump_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dataset_to_dict(dataset), f, sort_keys=True, separators=(",", ":"))
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    return dataset_from_dict(document)
