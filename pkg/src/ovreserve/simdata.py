"""Seeded simulated auction data and train/valid/test splitting.

Random numbers come from numpy's PCG64 generator. A dataset seed is turned
into a ``SeedSequence`` and spawned into two child streams, one for the
ground-truth coefficients and one for the records, so changing ``n_total``
does not change the coefficients. Gaussian draws use numpy's ziggurat
sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .auction import Dataset


class RejectionBudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_total: int = 2000
    dim: int = 5
    noise_std: float = 0.1
    seed: int = 0
    variant: str = "linear"

    def __post_init__(self):
        if self.n_total < 3:
            raise ValueError("n_total must be >= 3")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.noise_std > 0:
            raise ValueError("noise_std must be > 0")
        if self.variant not in ("linear", "nonlinear"):
            raise ValueError(f"unknown variant {self.variant!r}")


def gen_simulated(cfg: SimConfig, return_truth: bool = False):
    """Draw ``x ~ N(0, I)``, ``B = w.x + a + noise`` and ``b = B / 2``.

    ``w ~ N(0, I)`` and ``a ~ N(0, 1)`` are drawn once per dataset. The
    linear variant discards any auction whose highest bid comes out negative
    and draws a fresh one (features included); the nonlinear variant keeps
    every auction and takes ``|B|``.
    """
    truth_ss, data_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    trng = np.random.default_rng(truth_ss)
    w = trng.standard_normal(cfg.dim)
    a = float(trng.standard_normal())
    rng = np.random.default_rng(data_ss)

    n = cfg.n_total
    if cfg.variant == "nonlinear":
        X = rng.standard_normal((n, cfg.dim))
        B = np.abs(X @ w + a + cfg.noise_std * rng.standard_normal(n))
    else:
        xs, bs, drawn = [], [], 0
        kept = 0
        while kept < n:
            if drawn >= 1000 * n:
                raise RejectionBudgetExceeded(f"only {kept} of {n} auctions had a positive highest bid after {drawn} draws")
            X = rng.standard_normal((n, cfg.dim))
            B = X @ w + a + cfg.noise_std * rng.standard_normal(n)
            drawn += n
            ok = B >= 0
            xs.append(X[ok])
            bs.append(B[ok])
            kept += int(ok.sum())
        X = np.concatenate(xs)[:n]
        B = np.concatenate(bs)[:n]
    data = Dataset(X, B, B / 2)
    if return_truth:
        return data, w, a
    return data


def split(data: Dataset, n_train: int, n_valid: int, n_test: int, seed) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffle with ``seed`` and cut into consecutive train/valid/test blocks."""
    total = n_train + n_valid + n_test
    if min(n_train, n_valid, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    if total > len(data):
        raise ValueError(f"need {total} records, dataset has {len(data)}")
    order = np.random.default_rng(seed).permutation(len(data))
    a, b = n_train, n_train + n_valid
    return data.subset(order[:a]), data.subset(order[a:b]), data.subset(order[b:total])
