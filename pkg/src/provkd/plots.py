"""Figures for run reports, sweeps and mimicry curves (written to files)."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_scores(scores: np.ndarray, malicious: Sequence[int], tau: float, path: str | Path) -> None:
    """Histogram of anomaly scores, benign vs malicious, with the threshold."""
    mal = np.zeros(len(scores), dtype=bool)
    mal[np.asarray(malicious, dtype=np.int64)] = True
    bins = np.linspace(0.0, 1.0, 41)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(scores[~mal], bins=bins, color="tab:green", alpha=0.7, label="benign", log=True)
    if mal.any():
        ax.hist(scores[mal], bins=bins, color="tab:red", alpha=0.8, label="malicious", log=True)
    ax.axvline(tau, color="k", ls="--", lw=1, label=f"tau = {tau:g}")
    ax.set_xlabel("anomaly score")
    ax.set_ylabel("nodes")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(rows: Sequence[dict[str, Any]], axis: str, path: str | Path,
               metrics: Sequence[str] = ("ACC", "PR", "RC", "F1")) -> None:
    """Mean (and min/max band over seeds) of each metric against the swept value."""
    values = sorted({r[axis] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for m in metrics:
        per = [[r[m] for r in rows if r[axis] == v] for v in values]
        mean = np.array([np.mean(p) for p in per])
        ax.plot(values, mean, marker="o", label=m)
        if any(len(p) > 1 for p in per):
            ax.fill_between(values, [min(p) for p in per], [max(p) for p in per], alpha=0.15)
    if axis in ("embedding_dim", "labeled_nodes") and min(values) > 0:
        ax.set_xscale("log", base=2)
        ax.set_xticks(values)
        ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(axis)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mimicry(curves: dict[str, Sequence[tuple[int, float]]], path: str | Path) -> None:
    """Mean malicious anomaly score against the number of injected events."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, curve in curves.items():
        xs = [c for c, _ in curve]
        ys = [s for _, s in curve]
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel("false events")
    ax.set_ylabel("mean malicious score")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
