import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from conftest import process_graph
from provkd.errors import ShapeMismatch
from provkd.ingest import EntityKind, Event, ScenarioConfig, generate_cadets_scenario
from provkd.provgraph import (build_graph, edge_weights, laplacian, normalized_adjacency,
                              propagation_matrix)


def ev(i, ts, rel="read", s="p1", o="f1", ok=EntityKind.FILE):
    return Event(f"e{i}", ts, rel, s, o, EntityKind.PROCESS, ok)


def test_empty_graph():
    assert build_graph([]).n == 0


def test_duplicate_events_collapse():
    g = build_graph([ev(0, 1), ev(1, 5)])
    (e,) = g.edges
    assert (e.multiplicity, e.first_ts, e.last_ts) == (2, 1, 5)
    assert g.node_key == ("p1", "f1")


def test_laplacian_examples():
    g = process_graph(2, [(0, 1)])
    assert laplacian(g, sp.csr_matrix((2, 2))).nnz == 0
    L = laplacian(g, g.sym_adjacency).toarray()
    np.testing.assert_array_equal(L, [[1, -1], [-1, 1]])
    with pytest.raises(ShapeMismatch):
        laplacian(g, sp.identity(3))


def test_normalized_adjacency_examples():
    np.testing.assert_allclose(normalized_adjacency(process_graph(1, [])).toarray(), [[1.0]])
    np.testing.assert_allclose(normalized_adjacency(process_graph(2, [(0, 1)])).toarray(), [[0.5, 0.5], [0.5, 0.5]])


def test_scenario_properties():
    s = generate_cadets_scenario(ScenarioConfig(n_benign=100, seed=3))
    g = build_graph(s.events)
    assert sum(e.multiplicity for e in g.edges) == len(s.events)
    A = normalized_adjacency(g)
    assert (A.data >= 0).all() and (A.data <= 1 + 1e-12).all()
    # order-insensitive up to node indexing
    h = build_graph(list(reversed(s.events)))
    key_edges = lambda gr: sorted((gr.node_key[e.src], gr.node_key[e.dst], e.relation, e.multiplicity) for e in gr.edges)
    assert key_edges(g) == key_edges(h)


@st.composite
def graphs(draw, max_n=12):
    n = draw(st.integers(1, max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    return process_graph(n, edges)


@given(graphs(), st.integers(0, 2**31 - 1))
def test_weights_symmetric_and_laplacian_psd(g, seed):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(g.n, 4))
    W = edge_weights(g, x0)
    assert (W != W.T).nnz == 0
    assert (W.diagonal() == 0).all()
    assert ((W.toarray() > 0) <= (g.sym_adjacency.toarray() > 0)).all()
    L = laplacian(g, W)
    np.testing.assert_allclose(L @ np.ones(g.n), 0, atol=1e-12)
    xs = rng.normal(size=(g.n, 100))
    assert (np.einsum("ij,ij->j", xs, L @ xs) >= -1e-12).all()


@given(graphs())
def test_propagation_matrix_row_stochastic(g):
    P = propagation_matrix(g)
    np.testing.assert_allclose(np.asarray(P.sum(axis=1)).ravel(), 1.0, atol=1e-12)
