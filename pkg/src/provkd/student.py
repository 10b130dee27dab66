"""Lightweight student: feature transformation + PageRank-style label propagation.

Prediction for node v::

    f_ft(v)   = softmax(W2 relu(W1 x_v + b1) + b2)
    f^{k+1}   = (1 - alpha) f^k + alpha * mean_{u in N(v)} f^k(u),  f^0 from labels
    f_std(v)  = beta_v f_ft(v) + (1 - beta_v) f^K(v)

``alpha`` and ``beta_v`` are stored as logits so unconstrained Adam keeps them
in (0, 1). The student is distilled by minimizing the summed L2 distance to the
teacher's soft labels over the unlabeled nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy.sparse as sp

from .checkpoint import CheckpointError, read_param_file, write_param_file
from .errors import InvalidConfig, NonFinite, ShapeMismatch
from .optim import Adam, glorot, softmax
from .provgraph import ProvGraph, propagation_matrix
from .teacher import N_CLASSES, LabelSplit

log = logging.getLogger(__name__)

THETA_KEYS = ("W1", "b1", "W2", "b2")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass
class StudentParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    beta_logits: np.ndarray
    alpha_logit: float
    K: int = 5
    use_ft: bool = True
    use_prl: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise InvalidConfig("K must be >= 1")
        if not (self.use_ft or self.use_prl):
            raise InvalidConfig("at least one of FT and PRL must be enabled")

    @property
    def alpha(self) -> float:
        return float(sigmoid(self.alpha_logit))

    @property
    def beta(self) -> np.ndarray:
        """Effective per-node balance (pinned to 1/0 when a branch is disabled)."""
        if not self.use_prl:
            return np.ones_like(self.beta_logits)
        if not self.use_ft:
            return np.zeros_like(self.beta_logits)
        return sigmoid(self.beta_logits)

    @property
    def theta(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def as_dict(self) -> dict[str, np.ndarray]:
        return {**self.theta, "beta_logits": self.beta_logits,
                "alpha_logit": np.asarray(self.alpha_logit, dtype=float)}

    @classmethod
    def from_dict(cls, arrays: dict[str, np.ndarray], K: int, use_ft: bool = True,
                  use_prl: bool = True) -> "StudentParams":
        return cls(arrays["W1"].copy(), arrays["b1"].copy(), arrays["W2"].copy(), arrays["b2"].copy(),
                   arrays["beta_logits"].copy(), float(arrays["alpha_logit"]), K, use_ft, use_prl)

    def save(self, path: str | Path) -> None:
        meta = {"kind": "student", "K": self.K, "use_ft": self.use_ft, "use_prl": self.use_prl,
                "d": int(self.W1.shape[0]), "hidden": int(self.W1.shape[1]), "n": int(len(self.beta_logits))}
        write_param_file(path, meta, self.as_dict())

    @classmethod
    def load(cls, path: str | Path) -> "StudentParams":
        meta, arrays = read_param_file(path)
        if meta.get("kind") != "student":
            raise CheckpointError("not a student checkpoint")
        return cls.from_dict(arrays, meta["K"], meta["use_ft"], meta["use_prl"])


def init_student(n: int, d: int, hidden: int = 16, K: int = 5, seed: int = 0,
                 use_ft: bool = True, use_prl: bool = True) -> StudentParams:
    rng = np.random.default_rng(seed)
    return StudentParams(glorot(rng, d, hidden), np.zeros(hidden), glorot(rng, hidden, N_CLASSES),
                         np.zeros(N_CLASSES), np.zeros(n), 0.0, K, use_ft, use_prl)


# ---------------------------------------------------------------------------
# forward pieces


def ft_forward(theta: dict[str, np.ndarray], X: np.ndarray) -> np.ndarray:
    W1, W2 = theta["W1"], theta["W2"]
    if X.shape[1] != W1.shape[0] or W1.shape[1] != W2.shape[0]:
        raise ShapeMismatch(f"features {X.shape} incompatible with W1 {W1.shape} / W2 {W2.shape}")
    h = np.maximum(X @ W1 + theta["b1"], 0.0)
    return softmax(h @ W2 + theta["b2"])


def init_labels(split: LabelSplit | None, n: int, C: int = N_CLASSES) -> np.ndarray:
    f = np.full((n, C), 1.0 / C)
    if split is not None:
        idx = np.flatnonzero(split.train_mask)
        f[idx] = 0.0
        f[idx, split.labels[idx]] = 1.0
    return f


def _prop(g: ProvGraph | sp.spmatrix) -> sp.csr_matrix:
    return propagation_matrix(g) if isinstance(g, ProvGraph) else g


@numba.njit(cache=True)
def _shift_kernel(indptr, indices, data, f, out):
    for v in range(indptr.shape[0] - 1):
        for c in range(f.shape[1]):
            acc = 0.0
            for k in range(indptr[v], indptr[v + 1]):
                acc += data[k] * (f[indices[k], c] - f[v, c])
            out[v, c] = acc


def neighbor_shift(f: np.ndarray, P: sp.csr_matrix) -> np.ndarray:
    """``P f - f`` summed edge by edge as ``sum_u P_vu (f_u - f_v)``.

    Equal to ``P @ f - f`` for row-stochastic ``P``, but exactly zero wherever
    a node agrees with all its neighbors, so consensus rows stay bit-identical.
    """
    f = np.ascontiguousarray(f, dtype=float)
    out = np.empty_like(f)
    _shift_kernel(P.indptr, P.indices, np.asarray(P.data, dtype=float), f, out)
    return out


def prl_step(f: np.ndarray, g: ProvGraph | sp.spmatrix, alpha: float) -> np.ndarray:
    """One propagation step; ``g`` may be a graph or its propagation matrix."""
    P = sp.csr_matrix(_prop(g))
    return f + alpha * neighbor_shift(f, P)


def prl(f0: np.ndarray, P: sp.spmatrix, alpha: float, K: int) -> list[np.ndarray]:
    P = sp.csr_matrix(P)
    fs = [f0]
    for _ in range(K):
        fs.append(prl_step(fs[-1], P, alpha))
    return fs


def student_forward(p: StudentParams, g: ProvGraph | sp.spmatrix, X: np.ndarray,
                    split: LabelSplit | None) -> np.ndarray:
    """Detection-mode prediction (no dropout, no training state)."""
    n = X.shape[0]
    if len(p.beta_logits) != n:
        raise ShapeMismatch(f"student has {len(p.beta_logits)} balance weights, graph has {n} nodes")
    beta = p.beta[:, None]
    out = np.zeros((n, N_CLASSES))
    if p.use_ft:
        out += beta * ft_forward(p.theta, X)
    if p.use_prl:
        fK = prl(init_labels(split, n), _prop(g), p.alpha, p.K)[-1]
        out += (1.0 - beta) * fK
    return out


# ---------------------------------------------------------------------------
# distillation


def distill_objective(f_teacher: np.ndarray, f_std: np.ndarray, mask: np.ndarray) -> float:
    diff = f_teacher[mask] - f_std[mask]
    return float(np.sqrt((diff * diff).sum(axis=1)).sum())


def distill_loss_and_grad(arrays: dict[str, np.ndarray], X: np.ndarray, P: sp.spmatrix,
                          f0: np.ndarray, f_teacher: np.ndarray, mask: np.ndarray, K: int,
                          use_ft: bool = True, use_prl: bool = True, weight_decay: float = 0.0,
                          dropout: float = 0.0, rng: np.random.Generator | None = None
                          ) -> tuple[float, dict[str, np.ndarray]]:
    """Summed L2 distance over ``mask`` (+ L2 weight decay) and its exact gradient."""
    W1, b1, W2, b2 = (arrays[k] for k in THETA_KEYS)
    n = X.shape[0]
    grads = {k: np.zeros_like(v) for k, v in arrays.items()}
    alpha = float(sigmoid(arrays["alpha_logit"]))
    if use_ft and use_prl:
        beta = sigmoid(arrays["beta_logits"])
    else:
        beta = np.full(n, 1.0 if use_ft else 0.0)

    f_std = np.zeros((n, N_CLASSES))
    if use_ft:
        z1 = X @ W1 + b1
        h = np.maximum(z1, 0.0)
        keep = None
        if dropout > 0:
            keep = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * keep
        f_ft = softmax(h @ W2 + b2)
        f_std += beta[:, None] * f_ft
    if use_prl:
        fs = prl(f0, P, alpha, K)
        f_std += (1.0 - beta[:, None]) * fs[-1]

    diff = f_std - f_teacher
    dist = np.sqrt((diff * diff).sum(axis=1))
    m = mask & (dist > 0)
    loss = float(dist[mask].sum())
    g_std = np.zeros_like(f_std)
    g_std[m] = diff[m] / dist[m, None]

    if use_ft and use_prl:
        g_beta = np.einsum("ij,ij->i", g_std, f_ft - fs[-1])
        grads["beta_logits"] = g_beta * beta * (1.0 - beta)
    if use_prl:
        g_f = (1.0 - beta[:, None]) * g_std
        g_alpha = 0.0
        PT = P.T.tocsr()
        for k in range(K - 1, -1, -1):
            fk = fs[k]
            g_alpha += float(np.sum(g_f * neighbor_shift(fk, P)))
            g_f = (1.0 - alpha) * g_f + alpha * (PT @ g_f)
        grads["alpha_logit"] = np.asarray(g_alpha * alpha * (1.0 - alpha))
    if use_ft:
        g_ft = beta[:, None] * g_std
        g_z2 = f_ft * (g_ft - np.sum(g_ft * f_ft, axis=1, keepdims=True))
        grads["W2"] = h.T @ g_z2
        grads["b2"] = g_z2.sum(axis=0)
        g_h = g_z2 @ W2.T
        if keep is not None:
            g_h = g_h * keep
        g_z1 = g_h * (z1 > 0)
        grads["W1"] = X.T @ g_z1
        grads["b1"] = g_z1.sum(axis=0)

    if weight_decay:
        for k, v in arrays.items():
            loss += 0.5 * weight_decay * float(np.sum(v * v))
            grads[k] = grads[k] + weight_decay * v
    return loss, grads


@dataclass
class DistillConfig:
    hidden: int = 16
    K: int = 5
    lr: float = 0.01
    weight_decay: float = 1e-3
    dropout: float = 0.2
    epochs: int = 500
    patience: int = 100
    use_ft: bool = True
    use_prl: bool = True


@dataclass
class DistillResult:
    params: StudentParams
    objectives: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def initial_objective(self) -> float:
        return self.objectives[0]

    @property
    def best_objective(self) -> float:
        return min(self.objectives)


def distill(teacher_soft: np.ndarray, g: ProvGraph | sp.spmatrix, X: np.ndarray, split: LabelSplit,
            cfg: DistillConfig = DistillConfig(), seed: int = 0) -> DistillResult:
    """Fit the student to the teacher's soft labels on the unlabeled nodes.

    The objective is tracked in eval mode before every update; the parameters
    with the lowest objective are returned. Training stops early once the
    objective has not improved for ``cfg.patience`` epochs.
    """
    n, d = X.shape
    if teacher_soft.shape != (n, N_CLASSES):
        raise ShapeMismatch(f"soft labels {teacher_soft.shape} vs {n} nodes")
    if not np.allclose(teacher_soft.sum(axis=1), 1.0, atol=1e-6):
        raise InvalidConfig("teacher soft labels must be row-normalized")
    P = _prop(g)
    mask = split.test_mask
    f0 = init_labels(split, n)
    params = init_student(n, d, cfg.hidden, cfg.K, seed, cfg.use_ft, cfg.use_prl)
    arrays = params.as_dict()
    trainable = [k for k in arrays
                 if (k in THETA_KEYS and cfg.use_ft)
                 or (k == "alpha_logit" and cfg.use_prl)
                 or (k == "beta_logits" and cfg.use_ft and cfg.use_prl)]
    opt = Adam({k: arrays[k] for k in trainable}, lr=cfg.lr)
    rng = np.random.default_rng(seed + 1)

    result = DistillResult(StudentParams.from_dict(arrays, cfg.K, cfg.use_ft, cfg.use_prl))
    best = np.inf
    for epoch in range(cfg.epochs + 1):
        snapshot = StudentParams.from_dict(arrays, cfg.K, cfg.use_ft, cfg.use_prl)
        obj = distill_objective(teacher_soft, student_forward(snapshot, P, X, split), mask)
        if not np.isfinite(obj):
            raise NonFinite(f"distillation diverged at epoch {epoch}")
        result.objectives.append(obj)
        if not np.isfinite(best) or obj < best - 1e-9 * max(1.0, abs(best)):
            best = obj
            result.params = snapshot
            result.best_epoch = epoch
        elif epoch - result.best_epoch >= cfg.patience:
            break
        if epoch == cfg.epochs:
            break
        _, grads = distill_loss_and_grad(arrays, X, P, f0, teacher_soft, mask, cfg.K,
                                         cfg.use_ft, cfg.use_prl, cfg.weight_decay,
                                         cfg.dropout if cfg.use_ft else 0.0, rng)
        # Adam mutates the dict in place; alpha_logit is a 0-d array
        opt.step(arrays, {k: grads[k] for k in trainable})
    log.info("distill: objective %.4f -> %.4f (best epoch %d)",
             result.objectives[0], result.best_objective, result.best_epoch)
    return result


def balance_diagnostics(p: StudentParams, g: ProvGraph, split: LabelSplit | None, top: int = 5) -> dict:
    """Nodes with the most extreme balance weights and their neighborhood label mix.

    For each reported node the fraction of its neighbors whose propagated label
    agrees with its own argmax is returned; a low value means a diverse
    neighborhood.
    """
    n = g.n
    beta = p.beta
    fK = prl(init_labels(split, n), propagation_matrix(g), p.alpha, p.K)[-1]
    lab = fK.argmax(axis=1)

    def describe(v: int) -> dict:
        nb = g.neighbors(v)
        agree = float(np.mean(lab[nb] == lab[v])) if len(nb) else 1.0
        return {"node": g.node_key[v], "beta": float(beta[v]), "degree": int(len(nb)), "neighbor_agreement": agree}

    order = np.argsort(beta, kind="stable")
    return {
        "alpha": p.alpha,
        "highest_beta": [describe(int(v)) for v in order[::-1][:top]],
        "lowest_beta": [describe(int(v)) for v in order[:top]],
    }
