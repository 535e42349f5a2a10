"""Auction data types, the second-price-with-reserve revenue function and
revenue-based evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class AuctionError(ValueError):
    pass


class InvalidBidsError(AuctionError):
    pass


class LengthMismatchError(AuctionError):
    pass


class EmptyDatasetError(AuctionError):
    pass


@dataclass(frozen=True)
class AuctionRecord:
    features: tuple[float, ...]
    highest_bid: float
    second_bid: float

    def __post_init__(self):
        _check_bids(self.highest_bid, self.second_bid)


class Dataset:
    """Ordered auctions stored column-wise.

    ``features`` is ``(n, dim)``, ``highest`` and ``second`` are ``(n,)``.
    Arrays are copied and made read-only.
    """

    def __init__(self, features, highest, second, dim: int | None = None):
        highest = np.array(highest, dtype=float).reshape(-1)
        second = np.array(second, dtype=float).reshape(-1)
        features = np.array(features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(len(highest), -1) if len(highest) else features.reshape(0, dim or 0)
        if features.ndim != 2:
            raise AuctionError("features must be a 2-d array")
        if dim is None:
            dim = features.shape[1]
        if features.shape[1] != dim:
            raise LengthMismatchError(f"expected {dim} features, got {features.shape[1]}")
        if not (len(features) == len(highest) == len(second)):
            raise LengthMismatchError("features, highest and second must have the same length")
        _check_bids(highest, second)
        for a in (features, highest, second):
            a.setflags(write=False)
        self.features = features
        self.highest = highest
        self.second = second
        self.dim = int(dim)

    @classmethod
    def from_records(cls, records: Iterable[AuctionRecord], dim: int | None = None) -> Dataset:
        records = list(records)
        if not records and dim is None:
            raise EmptyDatasetError("cannot infer dim from an empty record list")
        feats = [r.features for r in records]
        return cls(
            np.array(feats, dtype=float).reshape(len(records), dim if dim is not None else len(feats[0])),
            [r.highest_bid for r in records],
            [r.second_bid for r in records],
            dim=dim,
        )

    def __len__(self) -> int:
        return len(self.highest)

    def __getitem__(self, idx) -> AuctionRecord | Dataset:
        if isinstance(idx, (int, np.integer)):
            return AuctionRecord(tuple(self.features[idx]), float(self.highest[idx]), float(self.second[idx]))
        return self.subset(idx)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx) -> Dataset:
        return Dataset(self.features[idx], self.highest[idx], self.second[idx], dim=self.dim)

    def with_features(self, features) -> Dataset:
        return Dataset(features, self.highest, self.second)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.highest, other.highest)
            and np.array_equal(self.second, other.second)
        )

    def __repr__(self):
        return f"Dataset(n={len(self)}, dim={self.dim})"


def _check_bids(B, b):
    B = np.asarray(B, dtype=float)
    b = np.asarray(b, dtype=float)
    bad = ~((b >= 0) & (b <= B))
    if np.any(bad):
        i = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise InvalidBidsError(
            f"bids must satisfy 0 <= second <= highest (record {i}: "
            f"B={np.atleast_1d(B)[i]!r}, b={np.atleast_1d(b)[i]!r})"
        )


def revenue(y, B, b):
    """Seller revenue for reserve ``y`` given highest bid ``B`` and second bid ``b``.

    Returns ``b`` below the second bid, ``y`` on ``[b, B]`` (both ends
    inclusive) and 0 once the reserve exceeds the highest bid. Broadcasts.
    """
    _check_bids(B, b)
    y = np.asarray(y, dtype=float)
    out = np.where(y < b, b, np.where(y <= B, y, 0.0))
    return out[()] if out.ndim == 0 else out


def satisfaction_prob(y, B, b):
    """exp(-(B - revenue)); equals 1 exactly when the reserve hits ``B``."""
    out = np.exp(-(np.asarray(B, dtype=float) - revenue(y, B, b)))
    return out[()] if np.ndim(out) == 0 else out


def _as_reserves(reserves, data: Dataset) -> np.ndarray:
    r = np.asarray(reserves, dtype=float).reshape(-1)
    if len(r) != len(data):
        raise LengthMismatchError(f"{len(r)} reserves for {len(data)} auctions")
    return r


def total_revenue(reserves: Sequence[float], data: Dataset) -> float:
    r = _as_reserves(reserves, data)
    return float(np.sum(revenue(r, data.highest, data.second)))


def oracle_revenue(data: Dataset) -> float:
    """Revenue of a seller who knows every highest bid in advance."""
    if len(data) == 0:
        raise EmptyDatasetError("oracle revenue of an empty dataset")
    return float(np.sum(data.highest))


def pct_of_max(reserves: Sequence[float], data: Dataset) -> float:
    best = oracle_revenue(data)
    if best <= 0:
        raise AuctionError("oracle revenue is zero; percentage undefined")
    return 100.0 * total_revenue(reserves, data) / best
