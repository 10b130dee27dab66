"""Deduplicated provenance graph and its sparse matrix views."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatch
from .ingest import EntityKind, Event


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    relation: str
    first_ts: int
    last_ts: int
    multiplicity: int


@dataclass(frozen=True, eq=False)
class ProvGraph:
    node_key: tuple[str, ...]
    node_kind: tuple[EntityKind, ...]
    node_attrs: tuple[dict, ...]
    edges: tuple[Edge, ...]
    index: dict[str, int] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.node_key)

    @cached_property
    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        src = np.fromiter((e.src for e in self.edges), dtype=np.int64, count=len(self.edges))
        dst = np.fromiter((e.dst for e in self.edges), dtype=np.int64, count=len(self.edges))
        return src, dst

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Directed 0/1 adjacency (subject -> object), relations merged."""
        src, dst = self.edge_arrays
        a = sp.csr_matrix((np.ones(len(src)), (src, dst)), shape=(self.n, self.n))
        a.data[:] = 1.0
        return a

    @cached_property
    def sym_adjacency(self) -> sp.csr_matrix:
        """Undirected 0/1 adjacency without self-loops."""
        a = self.adjacency
        s = (a + a.T).tocsr()
        s.data[:] = 1.0
        s.setdiag(0)
        s.eliminate_zeros()
        s.sort_indices()
        return s

    @cached_property
    def degree(self) -> np.ndarray:
        """Number of distinct undirected neighbors."""
        return np.diff(self.sym_adjacency.indptr).astype(np.int64)

    def neighbors(self, v: int) -> np.ndarray:
        s = self.sym_adjacency
        return s.indices[s.indptr[v]:s.indptr[v + 1]]

    def incident_edges(self) -> list[list[int]]:
        """Edge ids touching each node (either direction)."""
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, e in enumerate(self.edges):
            out[e.src].append(i)
            if e.dst != e.src:
                out[e.dst].append(i)
        return out

    def kind_counts(self) -> dict[EntityKind, int]:
        counts: dict[EntityKind, int] = {}
        for k in self.node_kind:
            counts[k] = counts.get(k, 0) + 1
        return counts


def build_graph(events: Sequence[Event]) -> ProvGraph:
    """One node per entity key (indexed by first appearance), one edge per
    distinct (src, dst, relation) with multiplicity and timestamp span."""
    index: dict[str, int] = {}
    keys: list[str] = []
    kinds: list[EntityKind] = []
    attrs: list[dict] = []

    def node(key: str, kind: EntityKind, a: dict) -> int:
        i = index.get(key)
        if i is None:
            i = index[key] = len(keys)
            keys.append(key)
            kinds.append(kind)
            attrs.append(dict(a))
        else:
            for k, v in a.items():
                attrs[i].setdefault(k, v)
        return i

    agg: dict[tuple[int, int, str], list[int]] = {}
    for ev in events:
        s = node(ev.subject_id, ev.subject_kind, ev.subject_attrs)
        o = node(ev.object_id, ev.object_kind, ev.object_attrs)
        if s == o:
            # self-interactions carry no structure for the neighborhood views
            continue
        slot = agg.get((s, o, ev.relation))
        if slot is None:
            agg[(s, o, ev.relation)] = [ev.ts, ev.ts, 1]
        else:
            slot[0] = min(slot[0], ev.ts)
            slot[1] = max(slot[1], ev.ts)
            slot[2] += 1
    edges = tuple(Edge(s, o, r, v[0], v[1], v[2]) for (s, o, r), v in agg.items())
    return ProvGraph(tuple(keys), tuple(kinds), tuple(attrs), edges, index)


# ---------------------------------------------------------------------------
# matrix views


def edge_weights(g: ProvGraph, x0: np.ndarray | None = None) -> sp.csr_matrix:
    """Symmetric similarity weights on connected pairs.

    ``W_ij = max(0, cos(x0_i, x0_j))`` for every undirected edge, or 1 when no
    signals are given. Rows with zero norm get zero similarity.
    """
    s = g.sym_adjacency
    if x0 is None:
        return s.copy()
    if x0.shape[0] != g.n:
        raise ShapeMismatch(f"signals have {x0.shape[0]} rows, graph has {g.n} nodes")
    coo = s.tocoo()
    norms = np.linalg.norm(x0, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = x0 / safe[:, None]
    cos = np.einsum("ij,ij->i", unit[coo.row], unit[coo.col])
    cos = np.where((norms[coo.row] > 0) & (norms[coo.col] > 0), cos, 0.0)
    w = sp.csr_matrix((np.clip(cos, 0.0, 1.0), (coo.row, coo.col)), shape=s.shape)
    # enforce exact symmetry against rounding in the dot products
    w = ((w + w.T) * 0.5).tocsr()
    w.sort_indices()
    return w


def laplacian(g: ProvGraph, w: sp.spmatrix) -> sp.csr_matrix:
    """L = D - W with D_ii = sum_j W_ij."""
    if w.shape != (g.n, g.n):
        raise ShapeMismatch(f"weight matrix {w.shape} does not match graph with {g.n} nodes")
    w = sp.csr_matrix(w)
    d = np.asarray(w.sum(axis=1)).ravel()
    return (sp.diags(d) - w).tocsr()


def normalized_adjacency(g: ProvGraph) -> sp.csr_matrix:
    """GCN propagation operator D~^-1/2 (A_sym + I) D~^-1/2."""
    a = g.sym_adjacency + sp.identity(g.n, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(d)
    return (sp.diags(inv) @ a @ sp.diags(inv)).tocsr()


def propagation_matrix(g: ProvGraph) -> sp.csr_matrix:
    """Row-normalized neighbor average; isolated nodes average over themselves."""
    s = g.sym_adjacency
    deg = g.degree.astype(float)
    iso = deg == 0
    p = sp.diags(np.where(iso, 0.0, 1.0 / np.where(iso, 1.0, deg))) @ s
    if iso.any():
        p = p + sp.diags(iso.astype(float))
    p = sp.csr_matrix(p)
    p.sort_indices()
    return p


# ---------------------------------------------------------------------------
# export


def export_edges(g: ProvGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in g.edges:
            fh.write(f"{g.node_key[e.src]} {g.node_key[e.dst]} {e.relation} "
                     f"{e.first_ts} {e.last_ts} {e.multiplicity}\n")


def export_nodes(g: ProvGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, kind, attrs in zip(g.node_key, g.node_kind, g.node_attrs):
            extra = " ".join(f"{k}={v}" for k, v in sorted(attrs.items()))
            fh.write(f"{key} {kind.value}{' ' + extra if extra else ''}\n")
