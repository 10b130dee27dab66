"""GCN and SGC teachers trained with hand-written backpropagation.

Both variants are bias-free and output two-class probabilities:

* GCN: ``softmax(A @ relu(A @ X @ W0) @ W1)``
* SGC: ``softmax(A @ A @ X @ W)``

with ``A`` the self-loop-normalized adjacency.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .checkpoint import CheckpointError, read_param_file, write_param_file
from .errors import DegenerateSplit, InvalidConfig, NonFinite, ShapeMismatch
from .optim import Adam, glorot, softmax

log = logging.getLogger(__name__)

N_CLASSES = 2
BENIGN, MALICIOUS = 0, 1


@dataclass
class LabelSplit:
    labels: np.ndarray      # int class per node (ground truth, used only on train_mask)
    train_mask: np.ndarray  # bool
    test_mask: np.ndarray   # bool

    def __post_init__(self):
        if np.any(self.train_mask & self.test_mask):
            raise DegenerateSplit("train and test masks overlap")

    @property
    def n(self) -> int:
        return len(self.labels)


def make_split(labels: np.ndarray, seed: int, train_ratio: float = 0.3,
               n_labeled: int | None = None) -> LabelSplit:
    """Stratified split; each class keeps at least one labeled node.

    ``n_labeled`` fixes the labeled-node budget instead of a ratio.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    rng = np.random.default_rng(seed)
    classes = [np.flatnonzero(labels == c) for c in range(N_CLASSES)]
    if any(len(c) == 0 for c in classes):
        raise DegenerateSplit("both classes must be present to build a split")
    if n_labeled is not None:
        if not 2 <= n_labeled <= n:
            raise InvalidConfig(f"n_labeled must be in [2, {n}], got {n_labeled}")
        want = [max(1, int(round(n_labeled * len(c) / n))) for c in classes]
        want[BENIGN] = n_labeled - want[MALICIOUS]
    else:
        if not 0 < train_ratio < 1:
            raise InvalidConfig("train_ratio must be in (0, 1)")
        want = [max(1, int(round(train_ratio * len(c)))) for c in classes]
    train = np.zeros(n, dtype=bool)
    for idx, k in zip(classes, want):
        k = min(k, len(idx))
        train[rng.permutation(idx)[:k]] = True
    return LabelSplit(labels, train, ~train)


@dataclass
class TeacherConfig:
    variant: str = "gcn"
    hidden: int = 64
    layers: int = 2
    lr: float = 0.01
    dropout: float = 0.8
    weight_decay: float = 0.01
    epochs: int = 200
    balanced: bool = True

    def __post_init__(self):
        if self.variant not in ("gcn", "sgc"):
            raise InvalidConfig(f"unknown teacher variant {self.variant!r}")
        if not 0 <= self.dropout < 1:
            raise InvalidConfig("dropout must be in [0, 1)")


@dataclass
class TeacherParams:
    variant: str
    weights: dict[str, np.ndarray]
    config: TeacherConfig = field(default_factory=TeacherConfig)
    losses: list[float] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        cfg = self.config
        meta = {"kind": "teacher", "variant": self.variant,
                "hyperparameters": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}}
        write_param_file(path, meta, self.weights)

    @classmethod
    def load(cls, path: str | Path) -> "TeacherParams":
        meta, arrays = read_param_file(path)
        if meta.get("kind") != "teacher":
            raise CheckpointError("not a teacher checkpoint")
        return cls(meta["variant"], arrays, TeacherConfig(**meta["hyperparameters"]))


def init_teacher(variant: str, d: int, hidden: int, seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    if variant == "gcn":
        return {"W0": glorot(rng, d, hidden), "W1": glorot(rng, hidden, N_CLASSES)}
    if variant == "sgc":
        return {"W": glorot(rng, d, N_CLASSES)}
    raise InvalidConfig(f"unknown teacher variant {variant!r}")


def _check(weights: dict[str, np.ndarray], X: np.ndarray, A: sp.spmatrix, variant: str) -> None:
    n, d = X.shape
    if A.shape != (n, n):
        raise ShapeMismatch(f"adjacency {A.shape} vs {n} signal rows")
    first = weights["W0"] if variant == "gcn" else weights["W"]
    if first.shape[0] != d:
        raise ShapeMismatch(f"first weight has {first.shape[0]} rows, signals have {d} columns")
    if variant == "gcn" and weights["W1"].shape[0] != first.shape[1]:
        raise ShapeMismatch("W0/W1 hidden sizes disagree")
    if not np.isfinite(X).all() or not all(np.isfinite(w).all() for w in weights.values()):
        raise NonFinite("non-finite teacher input")


def teacher_forward(p: TeacherParams | dict, A: sp.spmatrix, X: np.ndarray, variant: str | None = None) -> np.ndarray:
    """Eval-mode forward pass (no dropout); returns soft labels."""
    if isinstance(p, TeacherParams):
        weights, variant = p.weights, p.variant
    else:
        weights = p
    _check(weights, X, A, variant)
    if variant == "gcn":
        h = np.maximum(A @ (X @ weights["W0"]), 0.0)
        z = A @ (h @ weights["W1"])
    else:
        z = A @ (A @ (X @ weights["W"]))
    return softmax(z)


def _class_weights(labels: np.ndarray, mask: np.ndarray, balanced: bool) -> np.ndarray:
    w = np.zeros(len(labels))
    if balanced:
        for c in range(N_CLASSES):
            sel = mask & (labels == c)
            if sel.any():
                w[sel] = 1.0 / sel.sum()
    else:
        w[mask] = 1.0
    return w / w.sum()


def teacher_loss_and_grad(weights: dict[str, np.ndarray], A: sp.spmatrix, X: np.ndarray,
                          labels: np.ndarray, node_w: np.ndarray, variant: str,
                          weight_decay: float = 0.0, dropout: float = 0.0,
                          rng: np.random.Generator | None = None,
                          AX: np.ndarray | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted cross-entropy plus ``weight_decay/2 * ||W||^2`` and its gradient.

    ``node_w`` is zero off the training set. Dropout (on the GCN hidden layer)
    needs ``rng`` and is only meant for training.
    """
    n = X.shape[0]
    Y = np.zeros((n, N_CLASSES))
    Y[np.arange(n), labels] = 1.0
    grads: dict[str, np.ndarray] = {}
    if variant == "gcn":
        ax = A @ X if AX is None else AX
        z1 = ax @ weights["W0"]
        h = np.maximum(z1, 0.0)
        if dropout > 0:
            keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            hd = h * keep
        else:
            keep = None
            hd = h
        ahd = A @ hd
        z2 = ahd @ weights["W1"]
        P = softmax(z2)
        gz2 = (P - Y) * node_w[:, None]
        grads["W1"] = ahd.T @ gz2
        ghd = A.T @ (gz2 @ weights["W1"].T)
        gh = ghd * keep if keep is not None else ghd
        grads["W0"] = ax.T @ (gh * (z1 > 0))
    else:
        a2x = A @ (A @ X) if AX is None else AX
        P = softmax(a2x @ weights["W"])
        grads["W"] = a2x.T @ ((P - Y) * node_w[:, None])
    ce = -np.sum(node_w * np.log(P[np.arange(n), labels] + 1e-300))
    reg = 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in weights.values())
    for k, w in weights.items():
        grads[k] = grads[k] + weight_decay * w
    return float(ce + reg), grads


def train_teacher(A: sp.spmatrix, X: np.ndarray, split: LabelSplit,
                  cfg: TeacherConfig = TeacherConfig(), seed: int = 0) -> tuple[TeacherParams, np.ndarray]:
    """Full-batch Adam on the labeled nodes; returns params and soft labels for all nodes."""
    labels = split.labels
    tr = split.train_mask
    if not tr.any() or len(np.unique(labels[tr])) < N_CLASSES:
        raise DegenerateSplit("training set must contain both classes")
    weights = init_teacher(cfg.variant, X.shape[1], cfg.hidden, seed)
    _check(weights, X, A, cfg.variant)
    node_w = _class_weights(labels, tr, cfg.balanced)
    rng = np.random.default_rng(seed + 1)
    AX = A @ X if cfg.variant == "gcn" else A @ (A @ X)
    opt = Adam(weights, lr=cfg.lr)
    params = TeacherParams(cfg.variant, weights, cfg)
    drop = cfg.dropout if cfg.variant == "gcn" else 0.0
    for epoch in range(cfg.epochs):
        loss, grads = teacher_loss_and_grad(weights, A, X, labels, node_w, cfg.variant,
                                            cfg.weight_decay, drop, rng, AX=AX)
        if not np.isfinite(loss):
            raise NonFinite(f"teacher loss diverged at epoch {epoch}")
        params.losses.append(loss)
        opt.step(weights, grads)
    soft = teacher_forward(params, A, X)
    log.info("teacher %s: final train loss %.4f", cfg.variant, params.losses[-1] if params.losses else float("nan"))
    return params, soft
