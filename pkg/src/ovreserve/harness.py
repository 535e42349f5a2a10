"""Experiment driver: dataset and predictor files, grid search, replicated runs."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .auction import Dataset, InvalidBidsError, pct_of_max, total_revenue
from .baselines import ScalarPolicy, nof_fit, zero_policy
from .em import EmConfig, EmDivergedError, EmTrace, em_fit
from .predictors import KernelPredictor, LinearPredictor, NeuralPredictor, SgdConfig
from .simdata import SimConfig, gen_simulated, split

log = logging.getLogger(__name__)

METHODS = ("ov-linear", "ov-kernel", "ov-neural", "nof", "zero")
PREDICTOR_FORMAT = "ovreserve-predictor"


class DatasetFormatError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


class PredictorFormatError(ValueError):
    pass


class KindMismatchError(PredictorFormatError):
    pass


class AllPointsFailedError(RuntimeError):
    pass


# -- dataset files ---------------------------------------------------------


def load_dataset(path) -> Dataset:
    """Read ``f1,...,fd,B,b`` comma-separated auctions (header line first)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetFormatError("empty file", 1) from None
        if "B" not in header or "b" not in header:
            raise DatasetFormatError("header must name columns 'B' and 'b'", 1)
        iB, ib = header.index("B"), header.index("b")
        fcols = [i for i in range(len(header)) if i not in (iB, ib)]
        feats, B, b = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetFormatError(f"expected {len(header)} fields, got {len(row)}", line)
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line) from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetFormatError("non-finite value", line)
            if not 0 <= vals[ib] <= vals[iB]:
                raise InvalidBidsError(f"line {line}: need 0 <= b <= B, got B={vals[iB]!r}, b={vals[ib]!r}")
            feats.append([vals[i] for i in fcols])
            B.append(vals[iB])
            b.append(vals[ib])
    return Dataset(np.array(feats, dtype=float).reshape(len(B), len(fcols)), B, b, dim=len(fcols))


def save_dataset(data: Dataset, path) -> None:
    header = [f"f{i + 1}" for i in range(data.dim)] + ["B", "b"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for x, B, b in zip(data.features, data.highest, data.second):
            fh.write(",".join(format(float(v), ".17g") for v in (*x, B, b)) + "\n")


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: Dataset) -> Standardizer:
        mean = data.features.mean(axis=0)
        scale = data.features.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(mean, scale)

    def apply(self, data: Dataset) -> Dataset:
        return data.with_features((data.features - self.mean) / self.scale)


# -- predictor files -------------------------------------------------------


def _floats(a):
    return [float(v) for v in np.asarray(a).reshape(-1)]


def predictor_to_dict(p) -> dict:
    if isinstance(p, LinearPredictor):
        body = {"dim": p.dim, "weights": _floats(p.weights), "intercept": p.intercept}
    elif isinstance(p, KernelPredictor):
        body = {
            "dim": p.dim,
            "degree": p.degree,
            "n_train": len(p.alpha),
            "alpha": _floats(p.alpha),
            "train_features": [_floats(r) for r in p.train_features],
        }
    elif isinstance(p, NeuralPredictor):
        body = {
            "dim": p.dim,
            "hidden": p.hidden,
            "W1": [_floats(r) for r in p.W1],
            "b1": _floats(p.b1),
            "W2": _floats(p.W2),
            "b2": p.b2,
        }
    elif isinstance(p, ScalarPolicy):
        body = {"reserve": p.reserve}
    else:
        raise TypeError(f"cannot serialise {type(p).__name__}")
    return {"format": PREDICTOR_FORMAT, "version": 1, "kind": p.kind, **body}


def predictor_from_dict(d: dict, kind: str | None = None):
    if d.get("format") != PREDICTOR_FORMAT:
        raise PredictorFormatError("not a predictor file")
    got = d.get("kind")
    if kind is not None and got != kind:
        raise KindMismatchError(f"file holds a {got!r} predictor, expected {kind!r}")
    try:
        if got == "linear":
            return LinearPredictor(np.array(d["weights"], dtype=float).reshape(d["dim"]), d["intercept"])
        if got == "kernel":
            X = np.array(d["train_features"], dtype=float).reshape(d["n_train"], d["dim"])
            return KernelPredictor(d["alpha"], X, d["degree"])
        if got == "neural":
            W1 = np.array(d["W1"], dtype=float).reshape(d["hidden"], d["dim"])
            return NeuralPredictor(W1, d["W2"], d["b1"], d["b2"])
        if got == "scalar":
            return ScalarPolicy(d["reserve"])
    except (KeyError, ValueError, TypeError) as exc:
        raise PredictorFormatError(f"malformed {got} predictor: {exc}") from None
    raise PredictorFormatError(f"unknown predictor kind {got!r}")


def save_predictor(p, path) -> None:
    """JSON text; floats use shortest round-trip repr so predictions reload bit-for-bit."""
    Path(path).write_text(json.dumps(predictor_to_dict(p), indent=1) + "\n", encoding="utf-8")


def load_predictor(path, kind: str | None = None):
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise PredictorFormatError(f"{path}: {exc}") from None
    if not isinstance(d, dict):
        raise PredictorFormatError(f"{path}: not a predictor file")
    return predictor_from_dict(d, kind)


# -- grid search -----------------------------------------------------------


@dataclass
class Grids:
    sigma: list = field(default_factory=lambda: [0.01, 0.05, 0.1, 0.5, 1.0])
    lam: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    sigma_scaled: bool = True
    degree: list = field(default_factory=lambda: [2])
    hidden_units: list = field(default_factory=lambda: [5])
    learning_rate: list = field(default_factory=lambda: [1e-3, 1e-2])
    batch_size: list = field(default_factory=lambda: [32, 128])
    epochs_per_mstep: list = field(default_factory=lambda: [1, 5])
    patience: int = 5
    tol: float = 1e-5
    max_iters: int = 200


@dataclass
class SearchResult:
    method: str
    params: dict
    predictor: Any
    valid_revenue: float
    trace: EmTrace | None = None
    n_points: int = 1
    n_failed: int = 0


def _grid_points(method, grids: Grids, sigma_unit):
    base = list(itertools.product(sorted(grids.lam), sorted(grids.sigma)))
    if method == "ov-linear":
        extra = [{}]
    elif method == "ov-kernel":
        extra = [{"degree": int(D)} for D in grids.degree]
    elif method == "ov-neural":
        extra = [
            {"hidden_units": int(H), "learning_rate": lr, "batch_size": int(bs), "epochs_per_mstep": int(ep)}
            for H, lr, bs, ep in itertools.product(
                grids.hidden_units, grids.learning_rate, grids.batch_size, grids.epochs_per_mstep
            )
        ]
    else:
        raise ValueError(f"no grid for method {method!r}")
    for lam, s in base:
        for e in extra:
            yield {"lam": lam, "sigma_grid": s, "sigma": s * sigma_unit, **e}


def grid_search(method: str, grids: Grids, train: Dataset, valid: Dataset, seed: int = 0) -> SearchResult:
    """Fit one model per grid point and keep the best by validation revenue.

    Points are visited in order of increasing lambda, then sigma, and a later
    point must be strictly better to win, which breaks ties toward smaller
    lambda and sigma.
    """
    method, fixed_degree = _parse_method(method)
    if method == "nof":
        p = nof_fit(train)
        return SearchResult(method, {}, p, total_revenue(p.predict(valid.features), valid))
    if method == "zero":
        p = zero_policy()
        return SearchResult(method, {}, p, total_revenue(p.predict(valid.features), valid))
    if fixed_degree is not None:
        grids = Grids(**{**asdict(grids), "degree": [fixed_degree]})
    for name in ("sigma", "lam"):
        if not getattr(grids, name):
            raise ValueError(f"empty {name} grid")

    sigma_unit = float(np.std(train.highest)) if grids.sigma_scaled else 1.0
    if sigma_unit <= 0:
        sigma_unit = 1.0
    best = None
    n = failed = 0
    for point in _grid_points(method, grids, sigma_unit):
        n += 1
        cfg = EmConfig(point["sigma"], point["lam"], grids.tol, grids.max_iters)
        sgd = None
        if method == "ov-linear":
            start = LinearPredictor.blank(train.dim)
        elif method == "ov-kernel":
            start = KernelPredictor.blank(train.dim, point["degree"])
        else:
            start = NeuralPredictor.init(train.dim, point["hidden_units"], seed)
            sgd = SgdConfig(point["learning_rate"], point["batch_size"], point["epochs_per_mstep"], grids.patience, seed)
        try:
            p, trace = em_fit(start, train, valid, cfg, sgd=sgd)
        except (EmDivergedError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failed += 1
            log.warning("%s grid point %s failed: %s", method, point, exc)
            continue
        rev = float(trace.valid_revenues[trace.best_iteration])
        if best is None or rev > best.valid_revenue:
            best = SearchResult(method, point, p, rev, trace)
    if best is None:
        raise AllPointsFailedError(f"all {n} grid points failed for {method}")
    best.n_points, best.n_failed = n, failed
    return best


def _parse_method(method: str):
    name, _, deg = method.partition(":")
    if name not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)} (ov-kernel:D fixes the degree)")
    if deg and name != "ov-kernel":
        raise ValueError(f"only ov-kernel takes a degree suffix, got {method!r}")
    return name, (int(deg) if deg else None)


# -- experiments -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    methods: list = field(default_factory=lambda: ["ov-linear", "nof"])
    data: dict = field(default_factory=lambda: {"simulated": {"variant": "linear", "n_total": 2000, "dim": 5, "noise_std": 0.1}})
    n_train: int = 1000
    n_valid: int = 500
    n_test: int = 500
    replications: int = 10
    seed: int = 0
    grids: Grids = field(default_factory=Grids)

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = [m.strip() for m in self.methods.split(",") if m.strip()]
        if not self.methods:
            raise ValueError("no methods selected")
        for m in self.methods:
            _parse_method(m)
        if isinstance(self.grids, dict):
            unknown = set(self.grids) - set(Grids.__dataclass_fields__)
            if unknown:
                raise ValueError(f"unknown grid keys: {sorted(unknown)}")
            self.grids = Grids(**self.grids)
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if ("simulated" in self.data) == ("path" in self.data):
            raise ValueError("data must give exactly one of 'simulated' or 'path'")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MethodResult:
    test_pct: list = field(default_factory=list)
    chosen: list = field(default_factory=list)
    valid_revenue: list = field(default_factory=list)
    failed: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.test_pct)) if self.test_pct else math.nan

    @property
    def stderr(self) -> float:
        n = len(self.test_pct)
        return float(np.std(self.test_pct, ddof=1) / math.sqrt(n)) if n > 1 else 0.0


@dataclass
class ExperimentReport:
    config: dict
    seeds: list
    results: dict
    timings: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Deterministic part of the report (no wall-clock times)."""
        return {
            "config": self.config,
            "replication_seeds": self.seeds,
            "results": {
                m: {
                    "mean": r.mean,
                    "stderr": r.stderr,
                    "test_pct": r.test_pct,
                    "valid_revenue": r.valid_revenue,
                    "chosen": r.chosen,
                    "failed": r.failed,
                }
                for m, r in self.results.items()
            },
        }

    def table(self) -> str:
        width = max(len(m) for m in self.results) + 2
        lines = [f"{'method':<{width}}{'mean %':>9}{'stderr':>9}{'reps':>6}{'failed':>8}{'seconds':>10}"]
        for m, r in self.results.items():
            secs = self.timings.get(m, {}).get("fit", 0.0) + self.timings.get(m, {}).get("evaluate", 0.0)
            lines.append(f"{m:<{width}}{r.mean:>9.2f}{r.stderr:>9.2f}{len(r.test_pct):>6}{len(r.failed):>8}{secs:>10.1f}")
        return "\n".join(lines)


def replication_seeds(master_seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


def _replication_data(cfg: ExperimentConfig, seed: int, loaded: Dataset | None):
    data_seed, split_seed = (int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(2))
    if loaded is None:
        sim = SimConfig(**{**cfg.data["simulated"], "seed": data_seed})
        data = gen_simulated(sim)
    else:
        data = loaded
    train, valid, test = split(data, cfg.n_train, cfg.n_valid, cfg.n_test, split_seed)
    if loaded is not None and cfg.data.get("standardize", False):
        st = Standardizer.fit(train)
        train, valid, test = st.apply(train), st.apply(valid), st.apply(test)
    return train, valid, test


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentReport:
    """Replicate data generation/splitting, grid search and test evaluation.

    Replication ``r`` draws its data and split from the r-th child of the
    master seed, so every method sees identical splits.
    """
    loaded = load_dataset(cfg.data["path"]) if "path" in cfg.data else None
    seeds = replication_seeds(cfg.seed, cfg.replications)
    results = {m: MethodResult() for m in cfg.methods}
    timings = {m: {"fit": 0.0, "evaluate": 0.0} for m in cfg.methods}
    traces = {}
    for r, seed in enumerate(seeds):
        train, valid, test = _replication_data(cfg, seed, loaded)
        for m in cfg.methods:
            t0 = time.perf_counter()
            try:
                res = grid_search(m, cfg.grids, train, valid, seed=seed % (2**32))
            except Exception as exc:  # reported per replication, run continues
                log.error("replication %d, %s failed: %s", r, m, exc)
                results[m].failed.append({"replication": r, "error": f"{type(exc).__name__}: {exc}"})
                continue
            t1 = time.perf_counter()
            pct = pct_of_max(res.predictor.predict(test.features), test)
            timings[m]["fit"] += t1 - t0
            timings[m]["evaluate"] += time.perf_counter() - t1
            results[m].test_pct.append(pct)
            results[m].valid_revenue.append(res.valid_revenue)
            results[m].chosen.append({k: v for k, v in res.params.items()})
            if r == 0 and res.trace is not None:
                traces[m] = res.trace
            if progress:
                progress(r, m, pct)
    return ExperimentReport(cfg.to_dict(), seeds, results, timings, traces)


def write_report(report: ExperimentReport, out_dir, figures: bool = True) -> dict[str, Path]:
    """Write results.json, replications.csv, summary.txt, timings.json and figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": out / "results.json",
        "replications": out / "replications.csv",
        "summary": out / "summary.txt",
        "timings": out / "timings.json",
    }
    paths["results"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    with paths["replications"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "replication", "test_pct", "valid_revenue", "chosen"])
        for m, r in report.results.items():
            for i, (pct, vr, ch) in enumerate(zip(r.test_pct, r.valid_revenue, r.chosen)):
                w.writerow([m, i, repr(pct), repr(vr), json.dumps(ch, sort_keys=True)])
    paths["summary"].write_text(report.table() + "\n", encoding="utf-8")
    paths["timings"].write_text(json.dumps(report.timings, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if figures:
        from . import plotting

        paths.update(plotting.report_figures(report, out))
    return paths
