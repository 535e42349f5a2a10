"""Special functions, SPD solves and the quadrature oracle for posterior moments.

Everything is double precision. Anything that would otherwise form
``exp(B)`` or ``exp(mu + sigma**2 / 2)`` goes through the log-domain helpers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import integrate, special

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class NonConvergenceError(RuntimeError):
    pass


def _scalar(x):
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def std_normal_pdf(t):
    t = np.asarray(t, dtype=float)
    return _scalar(np.exp(-0.5 * t * t - LOG_SQRT_2PI))


def log_std_normal_pdf(t):
    t = np.asarray(t, dtype=float)
    return _scalar(-0.5 * t * t - LOG_SQRT_2PI)


def std_normal_cdf(t):
    return _scalar(special.ndtr(np.asarray(t, dtype=float)))


def log_std_normal_cdf(t):
    # erfcx-based in the left tail, finite down to t ~ -1e154
    return _scalar(special.log_ndtr(np.asarray(t, dtype=float)))


def log_ndtr_diff(upper, lower):
    """log(Phi(upper) - Phi(lower)) for ``upper >= lower``; -inf when equal.

    Works in whichever tail keeps both cdf values away from 1 so the
    difference does not cancel.
    """
    upper, lower = np.broadcast_arrays(np.asarray(upper, dtype=float), np.asarray(lower, dtype=float))
    right = lower > 0
    # right tail: Phi(u) - Phi(l) = Phi(-l) - Phi(-u)
    hi = np.where(right, -lower, upper)
    lo = np.where(right, -upper, lower)
    log_hi = special.log_ndtr(hi)
    log_lo = special.log_ndtr(lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log(-np.expm1(log_lo - log_hi))
    out = np.where(upper == lower, -np.inf, out)
    return _scalar(out)


def log_sum_exp(terms):
    """Signed log-domain sum of ``(sign, log_magnitude)`` pairs.

    Returns ``(sign, log_magnitude)``; an exact cancellation gives
    ``(0.0, -inf)``.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("log_sum_exp needs at least one term")
    signs = np.array([s for s, _ in terms], dtype=float)
    logs = np.array([m for _, m in terms], dtype=float)
    out, sign = signed_logsumexp(logs, signs, axis=0)
    return float(sign), float(out)


def signed_logsumexp(logs, signs, axis=0):
    """Vectorised ``log|sum_k sign_k exp(logs_k)|`` and its sign along ``axis``."""
    logs = np.asarray(logs, dtype=float)
    signs = np.broadcast_to(np.asarray(signs, dtype=float), logs.shape)
    top = np.max(logs, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        total = np.sum(signs * np.exp(logs - top), axis=axis)
        out = np.log(np.abs(total)) + np.squeeze(top, axis=axis)
    sign = np.sign(total)
    out = np.where(sign == 0, -np.inf, out)
    return _scalar(out), _scalar(sign)


@dataclass(frozen=True)
class SpdFactor:
    """Cholesky factor of a symmetric positive-definite matrix."""

    chol: np.ndarray
    lower: bool = True

    def solve(self, rhs):
        return scipy.linalg.cho_solve((self.chol, self.lower), np.asarray(rhs, dtype=float), check_finite=False)


def spd_factor(A) -> SpdFactor:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    scale = max(np.max(np.abs(A)), 1.0) if A.size else 1.0
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * scale):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    try:
        c = scipy.linalg.cholesky(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None
    c.setflags(write=False)
    return SpdFactor(c, True)


def solve_spd(A, rhs):
    """Solve ``A x = rhs`` through a Cholesky factorisation of ``A``."""
    rhs = np.asarray(rhs, dtype=float)
    A = np.asarray(A, dtype=float)
    if rhs.shape[0] != A.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix is {A.shape[0]}x{A.shape[1]}")
    return spd_factor(A).solve(rhs)


def quad_posterior_moment(mu, sigma, B, b, k, *, epsrel=1e-13, limit=500):
    """Integrate ``y**k * exp(-(B - R(y, B, b))) * phi((y - mu) / sigma)`` over the real line.

    Reference oracle only: adaptive Gauss-Kronrod on the pieces split at
    ``b``, ``B``, the prior centre, the tilted centre ``mu + sigma**2`` and
    ``mu +/- 12 sigma``; the Gaussian tails outside the window are added in
    closed form (there the weight is constant).
    """
    mu, sigma, B, b = float(mu), float(sigma), float(B), float(b)
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if not 0 <= b <= B:
        raise ValueError("bids must satisfy 0 <= b <= B")

    def log_weight(y):
        if y < b:
            return b - B
        if y <= B:
            return y - B
        return -B

    lo = min(b, mu - 12 * sigma)
    hi = max(B, mu + 12 * sigma)
    pts = {lo, hi, b, B, mu, mu - 12 * sigma, mu + 12 * sigma, mu + sigma * sigma}
    pts = sorted(p for p in pts if lo <= p <= hi)

    total = scale = err = 0.0
    evals = 0
    for left, right in zip(pts[:-1], pts[1:]):
        if right <= left:
            continue
        mid = 0.5 * (left + right)
        if mid < b:
            lw = lambda y: b - B  # noqa: E731
        elif mid <= B:
            lw = lambda y: y - B  # noqa: E731
        else:
            lw = lambda y: -B  # noqa: E731

        def f(y, lw=lw):
            t = (y - mu) / sigma
            return y**k * math.exp(lw(y) - 0.5 * t * t - LOG_SQRT_2PI)

        val, abserr, info, *msg = integrate.quad(
            f, left, right, epsabs=0.0, epsrel=epsrel, limit=limit, full_output=1
        )
        total += val
        scale += abs(val)
        err += abserr
        evals += info["neval"]

    # QUADPACK flags roundoff whenever epsrel is below what doubles allow, so
    # judge convergence by the summed error estimate instead of the flag
    if err > 1e-11 * scale:
        raise NonConvergenceError(f"quadrature error estimate {err:.3g} exceeds tolerance after {evals} evaluations")

    # Gaussian tails beyond the window
    tl, tu = (lo - mu) / sigma, (hi - mu) / sigma
    w_lo, w_hi = math.exp(log_weight(lo - 1.0)), math.exp(log_weight(hi + 1.0))
    if k == 0:
        total += w_lo * sigma * special.ndtr(tl) + w_hi * sigma * special.ndtr(-tu)
    else:
        total += w_lo * sigma * (mu * special.ndtr(tl) - sigma * std_normal_pdf(tl))
        total += w_hi * sigma * (mu * special.ndtr(-tu) + sigma * std_normal_pdf(tu))
    return total
