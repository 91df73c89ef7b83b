"""Figures from traces: cost curves, grant allocation and priority histograms."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import moving_average, phase_bounds  # noqa: E402
from .trace import Trace  # noqa: E402


def plot_cost(traces: Sequence[Trace], labels: Sequence[str], path, window: int = 50) -> None:
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for tr, label in zip(traces, labels):
        sm = moving_average(tr.cost, window)
        ax.plot(np.arange(window - 1, window - 1 + len(sm)), sm, label=label, lw=1)
    start, end, _ = phase_bounds(traces[0].meta)
    if traces[0].meta.get("disturbance_window"):
        ax.axvspan(start, end, color="0.9", zorder=0)
    ax.set_xlabel("round")
    ax.set_ylabel(f"cost (moving average, {window})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_allocation(trace: Trace, path) -> None:
    """Grant raster (agent vs round) and per-agent totals."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 3.5), gridspec_kw={"width_ratios": [3, 1]})
    k, i = np.nonzero(trace.granted)
    ax0.scatter(k, i, s=0.5, marker="|")
    ax0.set_xlabel("round")
    ax0.set_ylabel("agent")
    counts = trace.granted.sum(axis=0)
    ax1.barh(np.arange(trace.n_agents), counts)
    ax1.set_xlabel("grants")
    for ax in (ax0, ax1):
        ax.set_ylim(-0.5, trace.n_agents - 0.5)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_priority_histograms(trace: Trace, path) -> None:
    """Distribution of quantized scheduling priorities, one line per agent class."""
    roster = trace.meta["config"]["roster"]
    levels = 2 ** trace.meta["W_P"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for cname in sorted(set(roster)):
        members = [i for i, c in enumerate(roster) if c == cname]
        h = np.bincount(trace.qH[:, members].ravel(), minlength=levels)
        ax.plot(np.arange(levels), h / max(h.sum(), 1), marker="o", label=cname)
    ax.set_yscale("log")
    ax.set_xlabel("quantized priority")
    ax.set_ylabel("fraction of rounds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_all(traces: Sequence[Trace], labels: Sequence[str], out_dir, window: int = 50) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "cost.png"]
    plot_cost(traces, labels, paths[0], window)
    for tr, label in zip(traces, labels):
        p = out / f"allocation_{label}.png"
        plot_allocation(tr, p)
        paths.append(p)
        p = out / f"priorities_{label}.png"
        plot_priority_histograms(tr, p)
        paths.append(p)
    return paths
