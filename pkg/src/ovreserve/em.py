"""Objective-variable EM: closed-form E-step statistics and the EM driver.

For one auction with prior mean ``mu`` the latent reserve price has posterior
density proportional to ``exp(R(y, B, b)) * phi((y - mu) / sigma)`` (the
constant ``exp(-B)`` of the satisfaction likelihood is dropped). Its
normaliser splits over ``y < b``, ``b <= y <= B`` and ``y > B``::

    Z = sigma e^b Phi(beta)
      + sigma e^(mu + sigma^2/2) [Phi(gamma - sigma) - Phi(beta - sigma)]
      + sigma (1 - Phi(gamma))

with ``beta = (b - mu)/sigma`` and ``gamma = (B - mu)/sigma``. Differentiating
``log Z`` in ``mu`` gives the posterior mean::

    E[y] = mu + sigma^2 [T2 - (e^B - 1) phi(gamma)] / Z

where ``T2`` is the middle term of ``Z``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .auction import Dataset, LengthMismatchError, _check_bids, total_revenue
from .numerics import (
    log_ndtr_diff,
    log_std_normal_cdf,
    log_std_normal_pdf,
    signed_logsumexp,
)

log = logging.getLogger(__name__)


class EmDivergedError(FloatingPointError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class EmConfig:
    sigma: float
    lam: float
    tol: float = 1e-5
    max_iters: int = 200

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


class PosteriorStats(NamedTuple):
    log_norm: np.ndarray
    mean: np.ndarray


class TraceEntry(NamedTuple):
    iteration: int
    objective: float
    valid_revenue: float


@dataclass
class EmTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    converged: bool = False
    best_iteration: int = 0

    def append(self, objective, valid_revenue):
        self.entries.append(TraceEntry(len(self.entries), float(objective), float(valid_revenue)))

    @property
    def objectives(self) -> np.ndarray:
        return np.array([e.objective for e in self.entries])

    @property
    def valid_revenues(self) -> np.ndarray:
        return np.array([e.valid_revenue for e in self.entries])

    def __len__(self):
        return len(self.entries)


def _validate(sigma, B, b):
    if not np.all(np.asarray(sigma) > 0):
        raise ValueError("sigma must be > 0")
    _check_bids(B, b)


def _log_terms(mu, sigma, B, b):
    mu, sigma, B, b = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, B, b)))
    ls = np.log(sigma)
    beta = (b - mu) / sigma
    gamma = (B - mu) / sigma
    below = b + ls + log_std_normal_cdf(beta)
    middle = ls + mu + 0.5 * sigma * sigma + log_ndtr_diff(gamma - sigma, beta - sigma)
    above = ls + log_std_normal_cdf(-gamma)
    return below, middle, above, gamma


def posterior_stats(mu, sigma, B, b) -> PosteriorStats:
    """Log-normaliser and posterior mean of the latent reserve price (vectorised)."""
    _validate(sigma, B, b)
    below, middle, above, gamma = _log_terms(mu, sigma, B, b)
    log_norm, _ = signed_logsumexp(np.stack([below, middle, above]), np.ones(3).reshape(3, *[1] * below.ndim))
    log_norm = np.asarray(log_norm)

    B = np.broadcast_to(np.asarray(B, dtype=float), below.shape)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), below.shape)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), below.shape)
    with np.errstate(divide="ignore"):
        # log(e^B - 1), -inf at B == 0
        log_em1 = np.where(B > 1.0, B + np.log(-np.expm1(-np.maximum(B, 1.0))), np.log(np.expm1(np.minimum(B, 1.0))))
    jump = log_em1 + log_std_normal_pdf(gamma)
    lognum, sign = signed_logsumexp(np.stack([middle, jump]), np.array([1.0, -1.0]).reshape(2, *[1] * below.ndim))
    shift = sigma * np.asarray(sign) * np.exp(np.log(sigma) + np.asarray(lognum) - log_norm)
    mean = mu + shift
    if log_norm.ndim == 0:
        return PosteriorStats(log_norm[()], mean[()])
    return PosteriorStats(log_norm, mean)


def log_normalizer(mu, sigma, B, b):
    """log of the integral of ``exp(R(y,B,b)) phi((y-mu)/sigma)`` over y."""
    return posterior_stats(mu, sigma, B, b).log_norm


def posterior_mean(mu, sigma, B, b):
    """E[y | z = 1] for prior N(mu, sigma^2) and bids (B, b)."""
    return posterior_stats(mu, sigma, B, b).mean


def smoothed_revenue(means, data: Dataset, config: EmConfig, reg_norm: float) -> float:
    """Sum of (log-normaliser - B) minus ``lam/2 * reg_norm``.

    Up to a constant this is the log posterior of the predictor parameters,
    so EM with exact M-steps never decreases it.
    """
    means = np.asarray(means, dtype=float).reshape(-1)
    if len(means) != len(data):
        raise LengthMismatchError(f"{len(means)} means for {len(data)} auctions")
    ln = log_normalizer(means, config.sigma, data.highest, data.second)
    return float(np.sum(ln - data.highest) - 0.5 * config.lam * reg_norm)


def e_step(means, data: Dataset, sigma: float, workers: int | None = None) -> np.ndarray:
    """Posterior means for every auction, in record order.

    With ``workers > 1`` the records are split into contiguous chunks that
    are evaluated on a thread pool; the arithmetic per element is the same,
    so the result is identical to the sequential path.
    """
    means = np.asarray(means, dtype=float).reshape(-1)
    if len(means) != len(data):
        raise LengthMismatchError(f"{len(means)} means for {len(data)} auctions")
    B, b = data.highest, data.second

    def run(sl):
        out = posterior_mean(means[sl], sigma, B[sl], b[sl])
        bad = ~np.isfinite(out)
        if np.any(bad):
            i = sl.start + int(np.flatnonzero(bad)[0])
            raise FloatingPointError(f"non-finite posterior mean at record {i} (mu={means[i]!r}, B={B[i]!r}, b={b[i]!r})")
        return out

    n = len(means)
    if not workers or workers <= 1 or n < 2 * workers:
        return np.atleast_1d(run(slice(0, n)))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [slice(int(s), int(e)) for s, e in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(workers) as pool:
        parts = list(pool.map(run, chunks))
    return np.concatenate([np.atleast_1d(p) for p in parts])


def em_fit(predictor, train: Dataset, valid: Dataset, config: EmConfig, *, sgd=None, workers=None):
    """Fit ``predictor`` by objective-variable EM.

    Starts with targets equal to the highest bids, runs an M-step, then
    alternates E- and M-steps until the validation revenue changes by less
    than ``tol * max(1, |revenue|)``. Returns the iterate with the best
    validation revenue together with the trace.
    """
    if len(train) == 0 or len(valid) == 0:
        raise ValueError("train and valid must be non-empty")
    if train.dim != valid.dim:
        raise ValueError(f"dimension mismatch: train {train.dim}, valid {valid.dim}")

    mstep = predictor.mstep_solver(train, config.lam, config.sigma, holdout=valid, sgd=sgd)
    trace = EmTrace()

    def record(p):
        means = mstep.predict_train(p)
        obj = smoothed_revenue(means, train, config, mstep.penalty(p, means))
        rev = total_revenue(mstep.predict_holdout(p), valid)
        trace.append(obj, rev)
        if not (math.isfinite(obj) and math.isfinite(rev)):
            raise EmDivergedError(f"non-finite objective at iteration {len(trace) - 1}", trace)
        return means, rev

    current = mstep(np.array(train.highest))
    means, best_rev = record(current)
    best, prev_rev = current, best_rev
    for it in range(1, config.max_iters + 1):
        targets = e_step(means, train, config.sigma, workers=workers)
        current = mstep(targets)
        means, rev = record(current)
        if rev > best_rev:
            best, best_rev = current, rev
            trace.best_iteration = it
        if abs(rev - prev_rev) < config.tol * max(1.0, abs(rev)):
            trace.converged = True
            break
        prev_rev = rev
    log.debug("em_fit: %d iterations, best %d, valid revenue %.6g", len(trace) - 1, trace.best_iteration, best_rev)
    return best, trace
