import os

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings

from provkd.ingest import EntityKind
from provkd.provgraph import Edge, ProvGraph

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def process_graph(n, edges):
    """ProvGraph over processes p0..p{n-1} (isolated nodes included), one fork edge per pair."""
    keys = tuple(f"p{i}" for i in range(n))
    es = tuple(Edge(i, j, "fork", t, t, 1) for t, (i, j) in enumerate(edges))
    return ProvGraph(keys, (EntityKind.PROCESS,) * n, tuple({} for _ in keys), es,
                     {k: i for i, k in enumerate(keys)})


def random_edges(rng, n, p=0.4):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


def sym_from_edges(n, edges, weights=None):
    rows = [i for i, _ in edges] + [j for _, j in edges]
    cols = [j for _, j in edges] + [i for i, _ in edges]
    w = list(weights) * 2 if weights is not None else [1.0] * (2 * len(edges))
    return sp.csr_matrix((w, (rows, cols)), shape=(n, n))


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion number -> "PASS ..." / "FAIL ..." line, filled by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
