"""Attack reconstruction: map-equation communities and time-respecting paths.

Flow model: a random walker on the symmetrized, weighted graph follows an
edge with probability proportional to its weight and teleports uniformly with
probability ``teleport``. Teleportation shapes the visit rates but is not
encoded, so module exit/entry flow only counts steps along edges::

    F(u -> v) = (1 - teleport) * p_u * w_uv / s_u

Two-level map equation (bits)::

    L(M) = plogp(sum q_in) - sum plogp(q_in_i) - sum plogp(q_out_i)
           - sum plogp(p_a) + sum plogp(q_out_i + p_i)
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateFlow, InvalidConfig
from .provgraph import ProvGraph

log = logging.getLogger(__name__)


def plogp(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log2(x[pos])
    return out


def _plogp(x: float) -> float:
    return x * np.log2(x) if x > 0 else 0.0


def flow_weights(g: ProvGraph, flagged: Iterable[int] = (), lam: float = 10.0) -> sp.csr_matrix:
    """Symmetric weights: summed multiplicities, times ``lam`` on edges touching
    a flagged node or one of its one-hop neighbors."""
    if lam < 1:
        raise InvalidConfig(f"up-weight factor must be >= 1, got {lam}")
    n = g.n
    src, dst = g.edge_arrays
    mult = np.fromiter((e.multiplicity for e in g.edges), float, len(g.edges))
    w = sp.csr_matrix((mult, (src, dst)), shape=(n, n))
    w = (w + w.T).tocsr()
    flagged = np.fromiter(flagged, dtype=np.int64)
    if flagged.size and lam != 1:
        hot = np.zeros(n, dtype=bool)
        hot[flagged] = True
        hot |= np.asarray(g.sym_adjacency[flagged].sum(axis=0)).ravel() > 0
        coo = w.tocoo()
        data = np.where(hot[coo.row] | hot[coo.col], coo.data * lam, coo.data)
        w = sp.csr_matrix((data, (coo.row, coo.col)), shape=(n, n))
    w.sort_indices()
    return w


def stationary_flow(w: sp.spmatrix, teleport: float = 0.15, tol: float = 1e-10,
                    max_iter: int = 10_000) -> tuple[np.ndarray, sp.csr_matrix]:
    """Visit rates of the teleporting walk and the directed link-flow matrix."""
    w = sp.csr_matrix(w, dtype=float)
    n = w.shape[0]
    if n == 0:
        raise DegenerateFlow("empty graph has no flow")
    s = np.asarray(w.sum(axis=1)).ravel()
    if not np.isfinite(s).all() or (s < 0).any():
        raise DegenerateFlow("weights must be finite and non-negative")
    dangling = s <= 0
    inv = np.where(dangling, 0.0, 1.0 / np.where(dangling, 1.0, s))
    T = (sp.diags(inv) @ w).tocsr()          # row-stochastic on non-dangling rows
    TT = T.T.tocsr()
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = (1.0 - teleport) * (TT @ p) + ((1.0 - teleport) * p[dangling].sum() + teleport) / n
        nxt /= nxt.sum()
        if np.abs(nxt - p).sum() < tol:
            p = nxt
            break
        p = nxt
    if not p.sum() > 0:
        raise DegenerateFlow("zero total flow")
    F = (sp.diags((1.0 - teleport) * p) @ T).tocsr()
    return p, F


def module_flows(assignment: np.ndarray, p: np.ndarray, F: sp.spmatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(enter, exit, total visit rate) per module id."""
    assignment = np.asarray(assignment)
    m = int(assignment.max()) + 1 if len(assignment) else 0
    coo = sp.coo_matrix(F)
    cross = assignment[coo.row] != assignment[coo.col]
    exit_ = np.bincount(assignment[coo.row[cross]], weights=coo.data[cross], minlength=m)
    enter = np.bincount(assignment[coo.col[cross]], weights=coo.data[cross], minlength=m)
    flow = np.bincount(assignment, weights=p, minlength=m)
    return enter, exit_, flow


def map_equation(assignment: Sequence[int], p: np.ndarray, F: sp.spmatrix) -> float:
    """Two-level description length in bits for a node -> module assignment."""
    p = np.asarray(p, dtype=float)
    if not p.sum() > 0:
        raise DegenerateFlow("zero total flow")
    enter, exit_, flow = module_flows(np.asarray(assignment, dtype=np.int64), p, F)
    val = (_plogp(enter.sum()) - plogp(enter).sum() - plogp(exit_).sum()
           - plogp(p).sum() + plogp(exit_ + flow).sum())
    return max(float(val), 0.0)


@dataclass
class Partition:
    assignment: np.ndarray
    map_equation_value: float
    levels: int = 1
    move_deltas: list[float] = field(default_factory=list)
    community_stats: list[dict] = field(default_factory=list)

    @property
    def num_communities(self) -> int:
        return int(self.assignment.max()) + 1 if len(self.assignment) else 0

    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_communities)]
        for v, c in enumerate(self.assignment):
            out[c].append(v)
        return out


def _relabel(assignment: np.ndarray) -> np.ndarray:
    """Contiguous ids in order of first appearance."""
    _, first, inv = np.unique(assignment, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inv]


@numba.njit(cache=True)
def _plogp_nb(x):
    return x * np.log2(x) if x > 0 else 0.0


@numba.njit(cache=True)
def _sweep(indptr, indices, fo, fi, p, out_total, in_total, module, enter, exit_, flow, sums, order):
    """One pass of greedy moves over ``order``.

    ``sums`` holds [sum enter, sum plogp(enter), sum plogp(exit), sum plogp(exit+flow)]
    and is updated in place. Returns (unit, target) per accepted move and its
    change in L(M). Ties between candidate modules go to the lowest id.
    """
    m_cap = enter.shape[0]
    acc_out = np.zeros(m_cap)
    acc_in = np.zeros(m_cap)
    stamp = np.full(m_cap, -1, np.int64)
    touched = np.empty(m_cap, np.int64)
    moves = np.empty((order.shape[0], 2), np.int64)
    deltas = np.empty(order.shape[0])
    n_moves = 0
    for t in range(order.shape[0]):
        u = order[t]
        a = module[u]
        nt = 0
        for k in range(indptr[u], indptr[u + 1]):
            mv = module[indices[k]]
            if stamp[mv] != t:
                stamp[mv] = t
                acc_out[mv] = 0.0
                acc_in[mv] = 0.0
                touched[nt] = mv
                nt += 1
            acc_out[mv] += fo[k]
            acc_in[mv] += fi[k]
        if nt == 0:
            continue
        cand = np.sort(touched[:nt])
        ou, iu, pu = out_total[u], in_total[u], p[u]
        oa = acc_out[a] if stamp[a] == t else 0.0
        ia = acc_in[a] if stamp[a] == t else 0.0
        ea, xa, fa = enter[a] - iu + ia + oa, exit_[a] - ou + oa + ia, flow[a] - pu
        best, best_b = 0.0, -1
        best_d = np.zeros(4)
        for b in cand:
            if b == a:
                continue
            ob, ib = acc_out[b], acc_in[b]
            eb, xb, fb = enter[b] + iu - ib - ob, exit_[b] + ou - ob - ib, flow[b] + pu
            d_enter = (ea - enter[a]) + (eb - enter[b])
            d_pe = (_plogp_nb(ea) - _plogp_nb(enter[a])) + (_plogp_nb(eb) - _plogp_nb(enter[b]))
            d_px = (_plogp_nb(xa) - _plogp_nb(exit_[a])) + (_plogp_nb(xb) - _plogp_nb(exit_[b]))
            d_pt = ((_plogp_nb(xa + fa) - _plogp_nb(exit_[a] + flow[a]))
                    + (_plogp_nb(xb + fb) - _plogp_nb(exit_[b] + flow[b])))
            delta = _plogp_nb(sums[0] + d_enter) - _plogp_nb(sums[0]) - d_pe - d_px + d_pt
            if best_b < 0 or delta < best:
                best, best_b = delta, b
                best_d[0], best_d[1], best_d[2], best_d[3] = d_enter, d_pe, d_px, d_pt
        if best_b < 0 or best >= -1e-12:
            continue
        b = best_b
        ob, ib = acc_out[b], acc_in[b]
        enter[b], exit_[b], flow[b] = enter[b] + iu - ib - ob, exit_[b] + ou - ob - ib, flow[b] + pu
        enter[a], exit_[a], flow[a] = ea, xa, fa
        for j in range(4):
            sums[j] += best_d[j]
        module[u] = b
        moves[n_moves, 0] = u
        moves[n_moves, 1] = b
        deltas[n_moves] = best
        n_moves += 1
    return moves[:n_moves], deltas[:n_moves]


@dataclass
class _Links:
    """Undirected CSR pattern with both flow directions per stored pair."""

    indptr: np.ndarray
    indices: np.ndarray
    fo: np.ndarray      # F(u -> v)
    fi: np.ndarray      # F(v -> u)

    @classmethod
    def from_flow(cls, F: sp.spmatrix) -> "_Links":
        F = sp.csr_matrix(F, dtype=float)
        F.setdiag(0.0)
        F.eliminate_zeros()
        # real part carries u -> v, imaginary part v -> u; the union pattern is kept
        C = (F.astype(complex) + 1j * F.T.tocsr()).tocsr()
        C.sum_duplicates()
        C.sort_indices()
        return cls(C.indptr.astype(np.int64), C.indices.astype(np.int64),
                   np.ascontiguousarray(C.data.real), np.ascontiguousarray(C.data.imag))

    def aggregate(self, mod: np.ndarray, m: int) -> "_Links":
        n = len(self.indptr) - 1
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        Fa = sp.csr_matrix((self.fo, (mod[rows], mod[self.indices])), shape=(m, m))
        return _Links.from_flow(Fa)

    def totals(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.indptr) - 1
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        return (np.bincount(rows, weights=self.fo, minlength=n),
                np.bincount(rows, weights=self.fi, minlength=n))


def _component_partition(w: sp.spmatrix) -> np.ndarray:
    _, labels = connected_components(w, directed=False)
    return _relabel(labels)


def detect_communities(g: ProvGraph | None, weights: sp.spmatrix, seed: int = 0, teleport: float = 0.15,
                       max_sweeps: int = 50, max_levels: int = 20, check: bool = False) -> Partition:
    """Greedy map-equation optimization with repeated aggregation.

    Every accepted move strictly lowers L(M). With ``check=True`` each accepted
    move is replayed, the full description length is recomputed and asserted
    not to increase and to match the incrementally tracked value (slow; meant
    for tests).
    """
    w = sp.csr_matrix(weights, dtype=float)
    n = w.shape[0]
    if g is not None and g.n != n:
        raise InvalidConfig("weights do not match graph")
    if n == 0:
        raise InvalidConfig("graph is empty")
    p, F = stationary_flow(w, teleport)
    node_term = -float(plogp(p).sum())
    links = _Links.from_flow(F)

    assignment = np.arange(n)
    rng = np.random.default_rng(seed)
    deltas: list[float] = []
    level = 0
    unit_flow = p.copy()
    prev = map_equation(assignment, p, F) if check else 0.0

    while level < max_levels:
        m = len(unit_flow)
        out_total, in_total = links.totals()
        module = np.arange(m)
        enter, exit_, flow = in_total.copy(), out_total.copy(), unit_flow.copy()
        sums = np.array([enter.sum(), plogp(enter).sum(), plogp(exit_).sum(), plogp(exit_ + flow).sum()])
        order = rng.permutation(m)
        total = 0
        for _ in range(max_sweeps):
            if check:
                start, start_sums = module.copy(), sums.copy()
            moves, d = _sweep(links.indptr, links.indices, links.fo, links.fi, unit_flow,
                              out_total, in_total, module, enter, exit_, flow, sums, order)
            if check:
                prev = _replay(start, start_sums, moves, d, assignment, p, F,
                               node_term, prev)
            deltas.extend(d.tolist())
            total += len(moves)
            if not len(moves):
                break
        level += 1
        if total == 0:
            break
        mod = _relabel(module)
        assignment = mod[assignment]
        k = int(mod.max()) + 1
        links = links.aggregate(mod, k)
        unit_flow = np.bincount(mod, weights=unit_flow, minlength=k)

    assignment = _relabel(assignment)
    value = map_equation(assignment, p, F)
    comp = _component_partition(w)
    comp_value = map_equation(comp, p, F)
    if comp_value < value - 1e-12:
        assignment, value = comp, comp_value
    return Partition(assignment, value, level, deltas)


def _replay(module, sums, moves, deltas, units, p, F, node_term, prev) -> float:
    """Apply recorded moves one at a time and check the full objective after each."""
    module = module.copy()
    tracked = _plogp(sums[0]) - sums[1] - sums[2] + node_term + sums[3]
    for (u, b), d in zip(moves.tolist(), deltas.tolist()):
        module[u] = b
        tracked += d
        cur = map_equation(module[units], p, F)
        assert d < 0, f"accepted move with non-negative delta {d}"
        assert cur <= prev + 1e-9, f"map equation increased: {prev} -> {cur}"
        assert abs(cur - max(tracked, 0.0)) < 1e-7, "incremental and full values disagree"
        prev = cur
    return prev


# ---------------------------------------------------------------------------
# classification and paths


@dataclass(frozen=True)
class Hop:
    src: str
    relation: str
    dst: str
    ts: int


def classify_communities(partition: Partition, flagged: Iterable[int], g: ProvGraph,
                         rho: float = 0.5) -> tuple[list[dict], list[int]]:
    """Per-community stats/roles and the flagged nodes that look like bridges."""
    flagged = set(int(v) for v in flagged)
    asg = partition.assignment
    stats = []
    for c, members in enumerate(partition.members()):
        mal = sum(1 for v in members if v in flagged)
        frac = mal / len(members) if members else 0.0
        if mal == 0:
            role = "benign"
        elif frac >= rho:
            role = "core"
        else:
            role = "bridge-adjacent"
        stats.append({"community": c, "size": len(members), "malicious": mal,
                      "malicious_fraction": frac, "role": role})
    flagged_comms = {int(asg[v]) for v in flagged}
    bridges: list[int] = []
    if len(flagged_comms) > 1:
        for v in sorted(flagged):
            if any(asg[u] != asg[v] for u in g.neighbors(v)):
                bridges.append(v)
        if not bridges:
            counts = defaultdict(int)
            for v in flagged:
                counts[int(asg[v])] += 1
            main = min(counts, key=lambda c: (-counts[c], c))
            bridges = sorted(v for v in flagged if asg[v] != main)
    partition.community_stats = stats
    return stats, bridges


def attack_paths(g: ProvGraph, flagged: Iterable[int], max_paths: int = 1000) -> list[list[Hop]]:
    """Maximal time-respecting chains over directed edges between flagged nodes.

    A hop's time is its edge's first timestamp; consecutive hops share the
    middle node and have non-decreasing times. Paths never revisit a node.
    """
    flagged = set(int(v) for v in flagged)
    edges = [e for e in g.edges if e.src in flagged and e.dst in flagged]
    out: dict[int, list] = defaultdict(list)
    for e in edges:
        out[e.src].append(e)
    for lst in out.values():
        lst.sort(key=lambda e: (e.first_ts, e.dst, e.relation))

    def has_pred(e) -> bool:
        return any(p.dst == e.src and p.first_ts <= e.first_ts and p.src != e.dst
                   for p in edges)

    paths: list[list] = []

    def extend(path: list, visited: set[int]) -> None:
        if len(paths) >= max_paths:
            return
        last = path[-1]
        nxt = [e for e in out.get(last.dst, ()) if e.first_ts >= last.first_ts and e.dst not in visited]
        if not nxt:
            paths.append(list(path))
            return
        for e in nxt:
            path.append(e)
            visited.add(e.dst)
            extend(path, visited)
            visited.discard(e.dst)
            path.pop()

    starts = sorted((e for e in edges if not has_pred(e)), key=lambda e: (e.first_ts, e.src, e.dst))
    for e in starts:
        extend([e], {e.src, e.dst})
    key = g.node_key
    return [[Hop(key[e.src], e.relation, key[e.dst], e.first_ts) for e in p] for p in paths]


def classify_and_trace(partition: Partition, flagged: Iterable[int], g: ProvGraph,
                       rho: float = 0.5) -> tuple[list[dict], list[int], list[list[Hop]]]:
    flagged = list(flagged)
    stats, bridges = classify_communities(partition, flagged, g, rho)
    return stats, bridges, attack_paths(g, flagged)


# ---------------------------------------------------------------------------
# output


def write_community_table(g: ProvGraph, partition: Partition, path: str | Path) -> None:
    roles = {s["community"]: s["role"] for s in partition.community_stats}
    with open(path, "w", encoding="utf-8") as fh:
        for v, c in enumerate(partition.assignment):
            fh.write(f"{g.node_key[v]} {int(c)} {roles.get(int(c), 'benign')}\n")


def write_paths(paths: list[list[Hop]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(paths):
            for h in p:
                fh.write(f"{i} {h.src} {h.relation} {h.dst} {h.ts}\n")


def _label(g: ProvGraph, v: int) -> str:
    a = g.node_attrs[v]
    return a.get("name") or a.get("path") or a.get("ip") or g.node_key[v]


def flagged_dot(g: ProvGraph, flagged: Iterable[int], partition: Partition | None = None) -> str:
    flagged = sorted(set(int(v) for v in flagged))
    fs = set(flagged)
    shapes = {"process": "box", "file": "note", "netflow": "diamond", "memory": "ellipse"}
    lines = ["digraph flagged {"]
    for v in flagged:
        comm = f" c{int(partition.assignment[v])}" if partition is not None else ""
        label = _label(g, v).replace('"', r"\"")
        lines.append(f'  "{g.node_key[v]}" [label="{label}{comm}", shape={shapes[g.node_kind[v].value]}];')
    for e in g.edges:
        if e.src in fs and e.dst in fs:
            lines.append(f'  "{g.node_key[e.src]}" -> "{g.node_key[e.dst]}" [label="{e.relation}@{e.first_ts}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
