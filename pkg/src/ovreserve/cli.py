"""Command-line entry point: ``ovreserve {simulate,train,evaluate,experiment}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from pathlib import Path

from . import harness
from .auction import oracle_revenue, pct_of_max, total_revenue
from .simdata import SimConfig, gen_simulated, split


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return d


def cmd_simulate(args) -> int:
    cfg = _read_config(args.config)
    for key in ("variant", "n_total", "dim", "noise_std"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    if args.seed is not None:
        cfg["seed"] = args.seed
    sim = SimConfig(**cfg)
    data = gen_simulated(sim)
    harness.save_dataset(data, args.out)
    print(f"wrote {len(data)} auctions (d={data.dim}, variant={sim.variant}, seed={sim.seed}) to {args.out}")
    return 0


def _train_valid(args, cfg):
    if args.train:
        train = harness.load_dataset(args.train)
        if not args.valid:
            raise ValueError("--train needs --valid")
        valid = harness.load_dataset(args.valid)
    elif args.data:
        data = harness.load_dataset(args.data)
        n_train = cfg.get("n_train", len(data) // 2)
        n_valid = cfg.get("n_valid", len(data) - n_train)
        train, valid, _ = split(data, n_train, n_valid, 0, args.seed or 0)
    else:
        raise ValueError("give --data FILE or --train FILE --valid FILE")
    if cfg.get("standardize"):
        st = harness.Standardizer.fit(train)
        train, valid = st.apply(train), st.apply(valid)
    return train, valid


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    grids = harness.Grids(**cfg.get("grids", {}))
    train, valid = _train_valid(args, cfg)
    res = harness.grid_search(args.method, grids, train, valid, seed=args.seed or 0)
    harness.save_predictor(res.predictor, args.out)
    print("method,valid_revenue,grid_points,failed,params")
    print(f"{args.method},{res.valid_revenue!r},{res.n_points},{res.n_failed},{json.dumps(res.params, sort_keys=True)}")
    if res.trace is not None:
        from .plotting import plot_trace

        fig = Path(args.out).with_suffix(".trace.png")
        plot_trace(res.trace, fig, title=args.method)
        print(f"trace figure: {fig}", file=sys.stderr)
    return 0


def cmd_evaluate(args) -> int:
    data = harness.load_dataset(args.data)
    p = harness.load_predictor(args.model, kind=args.kind)
    r = p.predict(data.features)
    print("n,revenue,oracle_revenue,pct_of_max")
    print(f"{len(data)},{total_revenue(r, data)!r},{oracle_revenue(data)!r},{pct_of_max(r, data)!r}")
    return 0


def cmd_experiment(args) -> int:
    raw = _read_config(args.config)
    if "method" in raw:
        raw["methods"] = raw.pop("method")
    if args.method:
        raw["methods"] = args.method
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.replications is not None:
        raw["replications"] = args.replications
    cfg = harness.ExperimentConfig.from_dict(raw)

    def progress(r, m, pct):
        print(f"replication {r}: {m} {pct:.2f}%", file=sys.stderr)

    report = harness.run_experiment(cfg, progress=None if args.quiet else progress)
    paths = harness.write_report(report, args.out, figures=not args.no_figures)
    print(report.table())
    for key, path in paths.items():
        print(f"{key}: {path}", file=sys.stderr)
    failed = sum(len(r.failed) for r in report.results.values())
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ovreserve", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress of individual fits")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated auction dataset")
    s.add_argument("--config", help="JSON object of simulation settings")
    s.add_argument("--variant", choices=["linear", "nonlinear"])
    s.add_argument("--n", dest="n_total", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--noise", dest="noise_std", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output CSV path")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="grid-search one method and save the winning predictor")
    t.add_argument("--method", required=True, help="ov-linear, ov-kernel[:D], ov-neural, nof or zero")
    t.add_argument("--data", help="dataset to split into train/valid")
    t.add_argument("--train")
    t.add_argument("--valid")
    t.add_argument("--config", help="JSON with optional 'grids', 'n_train', 'n_valid', 'standardize'")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True, help="predictor JSON path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a saved predictor on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--kind", choices=["linear", "kernel", "neural", "scalar"], help="require this predictor kind")
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="replicated grid-search experiment with report")
    x.add_argument("--config", help="JSON experiment config")
    x.add_argument("--method", help="comma-separated methods (overrides the config)")
    x.add_argument("--seed", type=int, help="master seed (overrides the config)")
    x.add_argument("--replications", type=int)
    x.add_argument("--out", required=True, help="report directory")
    x.add_argument("--no-figures", action="store_true")
    x.add_argument("-q", "--quiet", action="store_true")
    x.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, TypeError, RuntimeError, FloatingPointError, KeyError) as exc:
        print(f"ovreserve {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
