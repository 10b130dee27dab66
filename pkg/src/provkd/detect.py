"""Detection mode: threshold anomaly scores, node-level metrics, mimicry sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InvalidConfig
from .ingest import Scenario, apply_mimicry
from .teacher import MALICIOUS


@dataclass
class DetectionReport:
    scores: np.ndarray
    flagged: np.ndarray  # sorted node indices
    threshold: float
    metrics: dict[str, float] | None = None
    node_keys: Sequence[str] | None = None
    extra: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def flagged_set(self) -> set[int]:
        return set(int(i) for i in self.flagged)

    def write(self, path: str | Path) -> None:
        """Per-node ``key score flag`` lines, then ``# metric value`` footer lines."""
        keys = self.node_keys or [str(i) for i in range(len(self.scores))]
        flags = np.zeros(len(self.scores), dtype=bool)
        flags[self.flagged] = True
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# threshold {self.threshold:.6g}\n")
            for key, s, f in zip(keys, self.scores, flags):
                fh.write(f"{key} {s:.6f} {int(f)}\n")
            if self.metrics:
                for name in ("ACC", "PR", "RC", "F1"):
                    fh.write(f"# {name} {self.metrics[name]:.6f}\n")
            for scope, m in sorted(self.extra.items()):
                for name in ("ACC", "PR", "RC", "F1"):
                    if name in m:
                        fh.write(f"# {scope}.{name} {m[name]:.6f}\n")


def score_and_flag(f_std: np.ndarray, tau: float = 0.5, node_keys: Sequence[str] | None = None) -> DetectionReport:
    if not 0.0 <= tau <= 1.0:
        raise InvalidConfig(f"threshold must be in [0, 1], got {tau}")
    scores = np.asarray(f_std, dtype=float)[:, MALICIOUS].copy()
    flagged = np.flatnonzero(scores > tau)
    return DetectionReport(scores, flagged, tau, node_keys=node_keys)


def evaluate(flagged: Iterable[int], ground_truth: Iterable[int], n: int,
             nodes: Iterable[int] | None = None) -> dict[str, float]:
    """Confusion-matrix metrics with malicious as the positive class.

    ``nodes`` restricts the evaluation to a subset (default: all ``n``).
    PR, RC and F1 are 0 when their denominators vanish.
    """
    universe = set(range(n)) if nodes is None else set(int(v) for v in nodes)
    truth = set(int(v) for v in ground_truth)
    if not truth <= set(range(n)):
        raise InvalidConfig("ground truth contains nodes outside the graph")
    pred = set(int(v) for v in flagged) & universe
    truth &= universe
    tp = len(pred & truth)
    fp = len(pred - truth)
    fn = len(truth - pred)
    tn = len(universe) - tp - fp - fn
    total = len(universe)
    pr = tp / (tp + fp) if tp + fp else 0.0
    rc = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pr * rc / (pr + rc) if pr + rc else 0.0
    acc = (tp + tn) / total if total else 0.0
    return {"ACC": acc, "PR": pr, "RC": rc, "F1": f1, "TP": tp, "FP": fp, "FN": fn, "TN": tn}


Detector = Callable[[Scenario], dict[str, float]]


def mimicry_sweep(detector: Detector, scenario: Scenario, false_event_counts: Sequence[int],
                  seed: int = 0) -> list[tuple[int, float]]:
    """Mean anomaly score of the true malicious entities per false-event count.

    ``detector`` maps a (perturbed) scenario to per-entity anomaly scores.
    """
    counts = list(false_event_counts)
    if any(b < a for a, b in zip(counts, counts[1:])):
        raise InvalidConfig("false event counts must be ascending")
    curve = []
    for c in counts:
        s = apply_mimicry(scenario, c, seed)
        scores = detector(s)
        vals = [scores[k] for k in sorted(s.ground_truth) if k in scores]
        curve.append((int(c), float(np.mean(vals)) if vals else float("nan")))
    return curve


def write_curve(curve: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["false_events", "mean_score"])
        for c, s in curve:
            w.writerow([c, f"{s:.6f}"])
