"""Figures for experiment reports (written to files, never shown)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .em import log_normalizer  # noqa: E402

# drop the version stamp so reruns give identical files
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_replications(report, path):
    """Per-replication test % of max revenue, with mean and one standard error."""
    methods = list(report.results)
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(methods), 4))
    for i, m in enumerate(methods):
        r = report.results[m]
        if not r.test_pct:
            continue
        jitter = np.linspace(-0.15, 0.15, len(r.test_pct)) if len(r.test_pct) > 1 else [0.0]
        ax.plot(i + np.asarray(jitter), r.test_pct, "o", alpha=0.5, color=f"C{i}")
        ax.errorbar(i, r.mean, yerr=r.stderr, fmt="_", markersize=20, capsize=6, color="k")
    ax.set_xticks(range(len(methods)), methods, rotation=20)
    ax.set_ylabel("test revenue, % of maximum")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_trace(trace, path, title=""):
    """Smoothed training objective and validation revenue per EM iteration."""
    it = np.arange(len(trace))
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(it, trace.objectives, color="C0", label="smoothed revenue (train)")
    ax1.set_xlabel("EM iteration")
    ax1.set_ylabel("smoothed revenue", color="C0")
    ax2 = ax1.twinx()
    ax2.plot(it, trace.valid_revenues, color="C1", label="validation revenue")
    ax2.set_ylabel("validation revenue", color="C1")
    ax2.axvline(trace.best_iteration, color="k", ls=":", lw=1)
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def plot_smoothed_revenue(B, b, sigmas, path, n=400):
    """Revenue and its Gaussian-smoothed log-expectation as functions of the predicted mean."""
    from .auction import revenue

    mu = np.linspace(-0.5 * B, 1.5 * B, n)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(mu, revenue(mu, B, b) - B, "k", lw=2, label="revenue - B")
    for s in sigmas:
        # log E[exp(R(y) - B)] under y ~ N(mu, s^2)
        ax.plot(mu, log_normalizer(mu, s, B, b) - B - np.log(s), label=f"sigma = {s:g}")
    ax.set_xlabel("predicted mean")
    ax.set_ylabel("log satisfaction")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def report_figures(report, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {"fig_replications": plot_replications(report, out / "replications.png")}
    for m, tr in report.traces.items():
        name = m.replace(":", "-")
        paths[f"fig_trace_{name}"] = plot_trace(tr, out / f"trace_{name}.png", title=f"{m}, replication 0")
    return paths
