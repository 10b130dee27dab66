"""Graph-Laplacian signal smoothing.

Minimizing ``0.5*||x - x0||^2 + 0.5*gamma * x^T L x`` gives the SPD system
``(I + gamma*L) x = x0``, solved here by Jacobi-preconditioned conjugate
gradient, one right-hand side per signal column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidConfig, NoConvergence, NonFiniteInput, ShapeMismatch


@dataclass(frozen=True)
class DenoiseConfig:
    gamma: float = 1.0
    cg_tol: float = 1e-6
    cg_max_iter: int = 1000

    def __post_init__(self):
        if not self.gamma >= 0:
            raise InvalidConfig(f"gamma must be >= 0, got {self.gamma}")
        if not self.cg_tol > 0:
            raise InvalidConfig(f"cg_tol must be > 0, got {self.cg_tol}")
        if self.cg_max_iter < 1:
            raise InvalidConfig("cg_max_iter must be >= 1")


def _coldot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-column inner products, each summed exactly as a lone 1-D column would be."""
    return np.array([np.dot(np.ascontiguousarray(a[:, j]), np.ascontiguousarray(b[:, j]))
                     for j in range(a.shape[1])])


def pcg_columns(matvec, diag: np.ndarray, b: np.ndarray, x0: np.ndarray,
                tol: float, max_iter: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jacobi-preconditioned CG on every column of ``b`` at once.

    Each column keeps its own step sizes, so the result is the same as running
    the columns one after another. Converged columns are frozen.

    Returns (x, iterations per column, relative residual per column).
    """
    x = x0.copy()
    r = b - matvec(x)
    bnorm = np.sqrt(_coldot(b, b))
    scale = np.where(bnorm > 0, bnorm, 1.0)
    inv_diag = 1.0 / diag
    z = r * inv_diag[:, None]
    p = z.copy()
    rz = _coldot(r, z)
    iters = np.zeros(b.shape[1], dtype=np.int64)
    res = np.sqrt(_coldot(r, r)) / scale
    active = res > tol
    for _ in range(max_iter):
        if not active.any():
            break
        cols = np.flatnonzero(active)
        pa = p[:, cols]
        ap = matvec(pa)
        pap = _coldot(pa, ap)
        alpha = np.divide(rz[cols], pap, out=np.zeros_like(pap), where=pap > 0)
        x[:, cols] += pa * alpha
        r[:, cols] -= ap * alpha
        z_new = r[:, cols] * inv_diag[:, None]
        rz_new = _coldot(r[:, cols], z_new)
        beta = np.divide(rz_new, rz[cols], out=np.zeros_like(rz_new), where=rz[cols] > 0)
        p[:, cols] = z_new + pa * beta
        rz[cols] = rz_new
        iters[cols] += 1
        res[cols] = np.sqrt(_coldot(r[:, cols], r[:, cols])) / scale[cols]
        active[cols] = res[cols] > tol
    return x, iters, res


def denoise_signals(L: sp.spmatrix, x0: np.ndarray, cfg: DenoiseConfig = DenoiseConfig()) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    squeeze = x0.ndim == 1
    if squeeze:
        x0 = x0[:, None]
    if L.shape != (x0.shape[0], x0.shape[0]):
        raise ShapeMismatch(f"Laplacian {L.shape} vs signals with {x0.shape[0]} rows")
    if not np.isfinite(x0).all():
        raise NonFiniteInput("raw signals contain NaN or inf")
    L = sp.csr_matrix(L)
    if L.nnz and not np.isfinite(L.data).all():
        raise NonFiniteInput("Laplacian contains NaN or inf")
    if cfg.gamma == 0 or x0.shape[0] == 0:
        out = x0.copy()
        return out[:, 0] if squeeze else out

    a = (sp.identity(L.shape[0], format="csr") + cfg.gamma * L).tocsr()
    diag = a.diagonal()
    x, _, res = pcg_columns(lambda v: a @ v, diag, x0, x0, cfg.cg_tol, cfg.cg_max_iter)
    bad = np.flatnonzero(res > cfg.cg_tol)
    if bad.size:
        raise NoConvergence(int(bad[0]), float(res[bad[0]]))
    return x[:, 0] if squeeze else x


def dense_solve(L, x0: np.ndarray, gamma: float) -> np.ndarray:
    """Direct solve of (I + gamma*L) x = x0; the reference for small graphs."""
    L = L.toarray() if sp.issparse(L) else np.asarray(L)
    return np.linalg.solve(np.eye(L.shape[0]) + gamma * L, x0)
