"""Feature-free reserve policies."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .auction import Dataset, EmptyDatasetError, revenue


@dataclass(frozen=True)
class ScalarPolicy:
    """One reserve price applied to every auction."""

    reserve: float
    kind = "scalar"

    def __post_init__(self):
        if not self.reserve >= 0:
            raise ValueError(f"reserve must be >= 0, got {self.reserve}")
        object.__setattr__(self, "reserve", float(self.reserve))

    def predict(self, X) -> np.ndarray:
        n = len(X) if np.ndim(X) > 1 else 1
        return np.full(n, self.reserve)

    def penalty(self) -> float:
        return 0.0


def zero_policy() -> ScalarPolicy:
    return ScalarPolicy(0.0)


def nof_revenues(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Training revenue of every distinct highest bid used as a common reserve.

    Returns ``(candidates, revenues)`` with candidates sorted ascending. For
    reserve ``r``, auctions with ``B < r`` pay nothing, auctions with
    ``b <= r <= B`` pay ``r`` and the rest pay ``b``. Sorting both bid
    columns turns each count and sum into a binary search on prefix sums, so
    the sweep is O(N log N). Revenues are float approximations; see
    ``nof_fit`` for how near-ties are settled.
    """
    if len(data) == 0:
        raise EmptyDatasetError("NoF needs a non-empty training set")
    B = np.sort(data.highest)
    b = np.sort(data.second)
    cand = np.unique(B)
    b_prefix = np.concatenate([[0.0], np.cumsum(b)])
    n_lost = np.searchsorted(B, cand, side="left")  # B < r
    n_below = np.searchsorted(b, cand, side="right")  # b <= r
    # b <= B < r, so every lost auction is also counted in n_below
    n_at_reserve = n_below - n_lost
    rev_second = b_prefix[-1] - b_prefix[n_below]
    return cand, n_at_reserve * cand + rev_second


def _exact_revenue(r, B_sorted, b_sorted):
    n_lost = np.searchsorted(B_sorted, r, side="left")
    n_below = np.searchsorted(b_sorted, r, side="right")
    return math.fsum([r] * int(n_below - n_lost) + b_sorted[n_below:].tolist())


def nof_fit(train: Dataset) -> ScalarPolicy:
    """Best common reserve among the observed highest bids.

    Ties go to the smaller reserve. Zero is used instead only if it earns
    strictly more than every candidate. Candidates within 1e-9 of the best
    float estimate are re-scored with a correctly rounded sum so the choice
    does not depend on summation order.
    """
    cand, approx = nof_revenues(train)
    B = np.sort(train.highest)
    b = np.sort(train.second)
    top = approx.max()
    close = np.flatnonzero(approx >= top - 1e-9 * max(1.0, abs(top)))
    best_r, best_rev = None, -math.inf
    for i in close:
        rev = _exact_revenue(float(cand[i]), B, b)
        if rev > best_rev:
            best_r, best_rev = float(cand[i]), rev
    if math.fsum(train.second.tolist()) > best_rev:
        best_r = 0.0
    return ScalarPolicy(best_r)


def nof_fit_bruteforce(train: Dataset) -> ScalarPolicy:
    """Quadratic reference: evaluate every candidate against every auction."""
    if len(train) == 0:
        raise EmptyDatasetError("NoF needs a non-empty training set")
    best_r, best_rev = None, -math.inf
    for r in sorted(set(train.highest.tolist())):
        rev = math.fsum(revenue(np.full(len(train), r), train.highest, train.second).tolist())
        if rev > best_rev:
            best_r, best_rev = r, rev
    if math.fsum(train.second.tolist()) > best_rev:
        best_r = 0.0
    return ScalarPolicy(best_r)
