"""Reserve-price predictors and their M-steps.

Every predictor exposes ``predict(X)``, ``penalty()`` (the squared norm the
Gaussian prior acts on) and ``mstep_solver(train, lam, sigma, ...)`` which
returns a callable mapping E-step targets to a freshly fitted predictor.
The solver may cache factorisations that do not change between EM
iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import solve_spd, spd_factor


class DimensionMismatchError(ValueError):
    pass


class DivergedError(FloatingPointError):
    pass


def _features(X, dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != dim:
        raise DimensionMismatchError(f"expected {dim} features, got {X.shape[1]}")
    return X


def _augment(X):
    return np.hstack([X, np.ones((len(X), 1))])


class MStepSolver:
    """Callable mapping E-step targets to a fitted predictor.

    Also evaluates fitted predictors on the training and holdout features,
    which lets subclasses reuse cached quantities such as Gram matrices.
    """

    def __init__(self, train, holdout=None):
        self.train = train
        self.holdout = holdout

    def __call__(self, targets):
        raise NotImplementedError

    def predict_train(self, p) -> np.ndarray:
        return p.predict(self.train.features)

    def predict_holdout(self, p) -> np.ndarray:
        return p.predict(self.holdout.features)

    def penalty(self, p, train_pred=None) -> float:
        return p.penalty()


# -- linear ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    """``f(x) = w . x + intercept``; the intercept is not penalised."""

    weights: np.ndarray
    intercept: float = 0.0
    kind = "linear"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "intercept", float(self.intercept))

    @classmethod
    def blank(cls, dim: int) -> LinearPredictor:
        return cls(np.zeros(dim), 0.0)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def predict(self, X) -> np.ndarray:
        X = _features(X, self.dim)
        return X @ self.weights + self.intercept

    def penalty(self) -> float:
        return float(self.weights @ self.weights)

    @staticmethod
    def mstep_solver(train, lam, sigma, holdout=None, **_):
        return _LinearSolver(train, lam, sigma, holdout)


class _LinearSolver(MStepSolver):
    def __init__(self, train, lam, sigma, holdout=None):
        super().__init__(train, holdout)
        self.X = _augment(np.asarray(train.features))
        self.sigma = sigma
        self.factor = spd_factor(_linear_system(self.X, lam, sigma))

    def __call__(self, targets):
        w = self.factor.solve(self.X.T @ np.asarray(targets, dtype=float) / self.sigma**2)
        return LinearPredictor(w[:-1], w[-1])


def _linear_system(Xa, lam, sigma):
    penalty = np.full(Xa.shape[1], float(lam))
    penalty[-1] = 0.0
    return np.diag(penalty) + Xa.T @ Xa / sigma**2


def linear_predict(p: LinearPredictor, x) -> float | np.ndarray:
    out = p.predict(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def linear_mstep(X, targets, lam: float, sigma: float) -> LinearPredictor:
    """Ridge solution ``(lam P + Xa'Xa / sigma^2)^-1 Xa' t / sigma^2``.

    ``Xa`` is ``X`` with an appended column of ones and ``P`` zeroes the
    penalty on that column.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    Xa = _augment(X)
    targets = np.asarray(targets, dtype=float).reshape(-1)
    if len(targets) != len(Xa):
        raise DimensionMismatchError(f"{len(targets)} targets for {len(Xa)} rows")
    w = solve_spd(_linear_system(Xa, lam, sigma), Xa.T @ targets / sigma**2)
    return LinearPredictor(w[:-1], w[-1])


# -- polynomial kernel -----------------------------------------------------


def kernel_gram(X, X2, degree: int) -> np.ndarray:
    """``(X2 @ X.T + 1) ** degree``, shape ``(len(X2), len(X))``."""
    X = np.asarray(X, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X2.ndim == 1:
        X2 = X2.reshape(-1, 1)
    if X.shape[1] != X2.shape[1]:
        raise DimensionMismatchError(f"feature dims differ: {X.shape[1]} vs {X2.shape[1]}")
    return (X2 @ X.T + 1.0) ** int(degree)


def kernel_mstep(K, targets, lam: float, sigma: float) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    t = np.asarray(targets, dtype=float).reshape(-1)
    return solve_spd(K / sigma**2 + lam * np.eye(len(K)), t / sigma**2)


@dataclass(frozen=True, eq=False)
class KernelPredictor:
    """Dual polynomial-kernel regressor ``f(x) = K(x, X_train) @ alpha``."""

    alpha: np.ndarray
    train_features: np.ndarray
    degree: int = 2
    kind = "kernel"

    def __post_init__(self):
        a = np.array(self.alpha, dtype=float).reshape(-1)
        X = np.asarray(self.train_features, dtype=float)
        if X.flags.writeable:
            X = X.copy()
        if X.ndim == 1:
            X = X.reshape(len(a), -1)
        if len(a) != len(X):
            raise DimensionMismatchError(f"{len(a)} dual coefficients for {len(X)} training points")
        if int(self.degree) < 1:
            raise ValueError("degree must be >= 1")
        a.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "train_features", X)
        object.__setattr__(self, "degree", int(self.degree))

    @classmethod
    def blank(cls, dim: int, degree: int) -> KernelPredictor:
        return cls(np.zeros(0), np.zeros((0, dim)), degree)

    @property
    def dim(self) -> int:
        return self.train_features.shape[1]

    def predict(self, X) -> np.ndarray:
        X = _features(X, self.dim)
        return kernel_gram(self.train_features, X, self.degree) @ self.alpha

    def penalty(self) -> float:
        K = kernel_gram(self.train_features, self.train_features, self.degree)
        return float(self.alpha @ K @ self.alpha)

    def mstep_solver(self, train, lam, sigma, holdout=None, **_):
        return _KernelSolver(train, self.degree, lam, sigma, holdout)


class _KernelSolver(MStepSolver):
    def __init__(self, train, degree, lam, sigma, holdout=None):
        if lam <= 0:
            raise ValueError("kernel M-step needs lam > 0")
        super().__init__(train, holdout)
        self.X = np.array(train.features)
        self.X.setflags(write=False)
        self.degree = degree
        self.sigma = sigma
        self.K = kernel_gram(self.X, self.X, degree)
        self.factor = spd_factor(self.K / sigma**2 + lam * np.eye(len(self.K)))
        self.K_holdout = None if holdout is None else kernel_gram(self.X, holdout.features, degree)

    def __call__(self, targets):
        alpha = self.factor.solve(np.asarray(targets, dtype=float) / self.sigma**2)
        return KernelPredictor(alpha, self.X, self.degree)

    def _ours(self, p):
        return p.train_features is self.X

    def predict_train(self, p):
        return self.K @ p.alpha if self._ours(p) else super().predict_train(p)

    def predict_holdout(self, p):
        if self._ours(p) and self.K_holdout is not None:
            return self.K_holdout @ p.alpha
        return super().predict_holdout(p)

    def penalty(self, p, train_pred=None):
        if not self._ours(p):
            return p.penalty()
        if train_pred is None:
            train_pred = self.K @ p.alpha
        return float(p.alpha @ train_pred)


# -- one-hidden-layer tanh network -----------------------------------------


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs_per_mstep: int = 1
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.patience < 1:
            raise ValueError("batch_size and patience must be positive")
        if self.epochs_per_mstep < 0:
            raise ValueError("epochs_per_mstep must be >= 0")


@dataclass(frozen=True, eq=False)
class NeuralPredictor:
    """``f(x) = W2 . tanh(W1 x + b1) + b2``.

    ``W1`` is ``(H, d)`` and ``W2`` has length ``H``. Biases are not
    penalised; the L2 prior covers both weight matrices.
    """

    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray = None
    b2: float = 0.0
    fresh: bool = field(default=False, compare=False)
    kind = "neural"

    def __post_init__(self):
        W1 = np.array(self.W1, dtype=float)
        W2 = np.array(self.W2, dtype=float).reshape(-1)
        if W1.ndim != 2 or W1.shape[0] != len(W2):
            raise DimensionMismatchError(f"W1 {W1.shape} and W2 {W2.shape} do not conform")
        b1 = np.zeros(len(W2)) if self.b1 is None else np.array(self.b1, dtype=float).reshape(-1)
        if len(b1) != len(W2):
            raise DimensionMismatchError("b1 must have one entry per hidden unit")
        for a in (W1, W2, b1):
            if not np.all(np.isfinite(a)):
                raise DivergedError("non-finite network parameters")
            a.setflags(write=False)
        object.__setattr__(self, "W1", W1)
        object.__setattr__(self, "W2", W2)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", float(self.b2))

    @classmethod
    def init(cls, dim: int, hidden: int, seed: int = 0) -> NeuralPredictor:
        """Cold start: uniform weights scaled by 1/sqrt(fan-in), zero biases."""
        rng = np.random.default_rng(seed)
        W1 = rng.uniform(-1, 1, (hidden, dim)) / math.sqrt(dim)
        W2 = rng.uniform(-1, 1, hidden) / math.sqrt(hidden)
        return cls(W1, W2, np.zeros(hidden), 0.0, fresh=True)

    @property
    def hidden(self) -> int:
        return len(self.W2)

    @property
    def dim(self) -> int:
        return self.W1.shape[1]

    def predict(self, X) -> np.ndarray:
        X = _features(X, self.dim)
        return np.tanh(X @ self.W1.T + self.b1) @ self.W2 + self.b2

    def penalty(self) -> float:
        return float(np.sum(self.W1 * self.W1) + self.W2 @ self.W2)

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": np.array(self.b2)}

    def with_params(self, params) -> NeuralPredictor:
        return NeuralPredictor(params["W1"], params["W2"], params["b1"], float(params["b2"]))

    def mstep_solver(self, train, lam, sigma, holdout=None, sgd=None, **_):
        return _NeuralSolver(self, train, lam, sigma, holdout, sgd or SgdConfig())


class _NeuralSolver(MStepSolver):
    """Warm-started SGD M-steps; each call continues from the previous result.

    Early stopping uses the holdout set with targets from an E-step under the
    incoming parameters (the highest bids on the very first M-step).
    """

    def __init__(self, start, train, lam, sigma, holdout, sgd):
        super().__init__(train, holdout)
        self.current = start
        self.lam = lam
        self.sigma = sigma
        self.sgd = sgd
        self.rng = np.random.default_rng(sgd.seed)

    def __call__(self, targets):
        from .em import e_step

        p = self.current
        hold = None
        if self.holdout is not None:
            if p.fresh:
                th = np.array(self.holdout.highest)
            else:
                th = e_step(p.predict(self.holdout.features), self.holdout, self.sigma)
            hold = (self.holdout.features, th)
        p = neural_mstep(p, self.train.features, targets, self.lam, self.sigma, self.sgd, holdout=hold, rng=self.rng)
        self.current = p
        return p


def neural_predict(p: NeuralPredictor, x):
    out = p.predict(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def neural_loss_grad(p: NeuralPredictor, X, targets, lam: float, sigma: float):
    """M-step loss ``sum((f - t)^2) / (2 sigma^2) + lam/2 (|W1|^2 + |W2|^2)`` and its gradient."""
    X = _features(X, p.dim)
    t = np.asarray(targets, dtype=float).reshape(-1)
    A = X @ p.W1.T + p.b1
    Hd = np.tanh(A)
    f = Hd @ p.W2 + p.b2
    r = (f - t) / sigma**2
    loss = 0.5 * np.sum((f - t) ** 2) / sigma**2 + 0.5 * lam * p.penalty()
    dA = np.outer(r, p.W2) * (1.0 - Hd * Hd)
    grads = {
        "W1": dA.T @ X + lam * p.W1,
        "b1": dA.sum(axis=0),
        "W2": Hd.T @ r + lam * p.W2,
        "b2": np.array(r.sum()),
    }
    return float(loss), grads


def neural_mstep(p: NeuralPredictor, X, targets, lam, sigma, cfg: SgdConfig, holdout=None, rng=None) -> NeuralPredictor:
    """Mini-batch gradient descent on the M-step loss, warm-started at ``p``.

    Each update follows the mini-batch estimate of the loss gradient scaled by
    ``sigma^2 / N`` (a positive rescaling, so the minimiser is unchanged and
    the learning rate does not depend on sigma or N). ``holdout`` is an
    ``(X, targets)`` pair; the parameters with the lowest holdout squared
    error are returned, and training stops after ``patience`` epochs without
    improvement.
    """
    if cfg.epochs_per_mstep == 0:
        return p
    X = _features(X, p.dim)
    t = np.asarray(targets, dtype=float).reshape(-1)
    n = len(X)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params = {k: np.array(v, dtype=float) for k, v in p.params().items()}
    if p.fresh:
        params["b2"] = np.array(t.mean())
    cur = p.with_params(params)

    Xh, th = holdout if holdout is not None and holdout[0] is not None else (X, t)

    def holdout_loss(q):
        return float(np.mean((q.predict(Xh) - th) ** 2))

    best, best_loss = cur, holdout_loss(cur)
    stale = 0
    scale = sigma**2 / n
    for _ in range(cfg.epochs_per_mstep):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            frac = len(idx) / n
            _, g = neural_loss_grad(cur, X[idx], t[idx], lam * frac, sigma)
            for k in params:
                params[k] = params[k] - cfg.learning_rate * scale * g[k] / frac
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                raise DivergedError("neural M-step diverged (non-finite parameters); lower the learning rate")
            cur = p.with_params(params)
        loss = holdout_loss(cur)
        if not math.isfinite(loss):
            raise DivergedError("neural M-step produced a non-finite holdout loss")
        if loss < best_loss:
            best, best_loss, stale = cur, loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best
