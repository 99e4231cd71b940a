"""PNG figures for the report command (Agg backend, no display needed)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_sweep(summary: list[dict], path, title="") -> Path:
    """Entropy, C2ST and SWD against lambda with mean +- std error bars.

    ``summary`` rows carry ``lambda`` (float or "none") and ``<metric>_mean`` /
    ``<metric>_std`` keys. The distance-only run is drawn as a separate marker
    to the left of the grid.
    """
    grid = sorted((r for r in summary if r["lambda"] != "none"), key=lambda r: r["lambda"])
    none = [r for r in summary if r["lambda"] == "none"]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
    lams = np.array([r["lambda"] for r in grid], dtype=float)
    x_none = lams.min() / 4 if lams.size else 1.0
    for ax, metric in zip(axes, ("entropy", "c2st", "swd")):
        mean = np.array([r[f"{metric}_mean"] for r in grid], dtype=float)
        std = np.array([r[f"{metric}_std"] for r in grid], dtype=float)
        if lams.size:
            ax.errorbar(lams, mean, yerr=std, marker="o", ms=3, capsize=2, label="λ grid")
        for r in none:
            if not math.isnan(r[f"{metric}_mean"]):
                ax.errorbar([x_none], [r[f"{metric}_mean"]], yerr=[r[f"{metric}_std"]],
                            marker="s", color="tab:red", capsize=2, label="no entropy")
        ax.set_xscale("log")
        ax.set_xlabel("λ")
        ax.set_ylabel(metric.upper() if metric != "entropy" else "entropy")
        if metric == "c2st":
            ax.axhline(0.5, color="grey", lw=0.8, ls="--")
    axes[0].legend(fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_percentiles(times, obs_table, sim_table, path, percentiles=(5, 25, 50, 75, 95), ylabel="x") -> Path:
    """Observed vs simulated percentile bands over time."""
    times = np.asarray(times, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    pairs = [(i, len(percentiles) - 1 - i) for i in range(len(percentiles) // 2)]
    mid = len(percentiles) // 2
    for table, color, label in ((obs_table, "black", "observed"), (sim_table, "tab:blue", "simulated")):
        for lo, hi in pairs:
            ax.fill_between(times, table[:, lo], table[:, hi], color=color, alpha=0.12, lw=0)
        ax.plot(times, table[:, mid], color=color, lw=1.2, label=f"{label} median")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
