"""Figure rendering for the report path.

All figures are written to files (Agg backend); nothing opens a window.
Backlog values arrive as unit counts plus the resolution and are plotted in
water units.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def backlog_histogram(
    max_backlog_units: Sequence[int], resolution: int, path: Path
) -> None:
    """Histogram of per-trial maximum backlog."""
    values = [u / resolution for u in max_backlog_units]
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = min(40, max(5, len(set(values))))
    ax.hist(values, bins=bins, color="#34718f", edgecolor="white")
    ax.set_xlabel("max backlog (water units)")
    ax.set_ylabel("trials")
    ax.set_title("Per-trial maximum backlog")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def backlog_timeseries(
    backlog_units: Sequence[int], resolution: int, path: Path, label: str = "trial 0"
) -> None:
    """Backlog trajectory of one trial."""
    values = [u / resolution for u in backlog_units]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(1, len(values) + 1), values, lw=0.8, color="#8f3451", label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("backlog (water units)")
    ax.set_title("Backlog over time")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep_plot(
    xs: Sequence[float],
    series: Mapping[str, Sequence[float]],
    xlabel: str,
    path: Path,
) -> None:
    """One line per swept quantity across parameter values."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, ys in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("value")
    ax.set_title(f"Sweep over {xlabel}")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
