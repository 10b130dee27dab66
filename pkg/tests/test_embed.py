import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import process_graph
from provkd.embed import (Scaler, SignalMatrix, SkipGramConfig, SkipGramModel, _sgns_epoch, build_sentence,
                          train_embeddings, train_skipgram)
from provkd.errors import EmptyCorpus, InvalidConfig
from provkd.ingest import EntityKind, Event
from provkd.provgraph import build_graph


def test_sentence_examples():
    g = build_graph([Event("e0", 1, "read", "p1", "f1", EntityKind.PROCESS, EntityKind.FILE,
                           {"name": "nginx"}, {"path": "/tmp/vUgefal"}),
                     Event("e1", 2, "read", "p2", "f2", EntityKind.PROCESS, EntityKind.FILE, {}, {})])
    assert build_sentence(g, g.index["p1"]) == ["process", "nginx", "read", "file"]
    assert build_sentence(g, g.index["f1"]) == ["file", "tmp", "vugefal", "read", "process"]
    # isolated node: only kind and path tokens
    iso = process_graph(1, [])
    assert build_sentence(iso, 0) == ["process"]


def _reference_epoch(w_in, w_out, centers, contexts, negatives, lr0, lr1):
    """Plain numpy SGNS pass in vector form, one pair at a time."""
    n = len(centers)
    loss = 0.0
    for i in range(n):
        lr = lr0 + (lr1 - lr0) * i / n
        c = centers[i]
        targets = [(contexts[i], 1.0)] + [(t, 0.0) for t in negatives[i] if t != contexts[i]]
        grad = np.zeros(w_in.shape[1])
        for t, label in targets:
            p = 1.0 / (1.0 + np.exp(-(w_in[c] @ w_out[t])))
            loss -= np.log((p if label else 1.0 - p) + 1e-12)
            g = (label - p) * lr
            grad += g * w_out[t]
            w_out[t] += g * w_in[c]
        w_in[c] += grad
    return loss


def test_sgns_kernel_matches_reference():
    rng = np.random.default_rng(0)
    V, d, n, k = 7, 5, 40, 3
    w_in, w_out = rng.normal(size=(V, d)) * 0.3, rng.normal(size=(V, d)) * 0.3
    centers, contexts = rng.integers(0, V, n), rng.integers(0, V, n)
    negatives = rng.integers(0, V, (n, k))
    a_in, a_out = w_in.copy(), w_out.copy()
    la = _sgns_epoch(a_in, a_out, centers, contexts, negatives, 0.05, 0.01)
    lb = _reference_epoch(w_in, w_out, centers, contexts, negatives, 0.05, 0.01)
    np.testing.assert_allclose(a_in, w_in, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(a_out, w_out, rtol=1e-12, atol=1e-14)
    assert la == pytest.approx(lb, rel=1e-12)


def test_loss_decreases_on_small_corpus():
    words = ["process", "file", "read", "write", "nginx", "tmp", "etc", "passwd", "netflow", "connect"]
    rng = np.random.default_rng(1)
    corpus = [list(rng.choice(words, size=8)) for _ in range(10)]
    m = train_skipgram(corpus, SkipGramConfig(dim=8, epochs=30, seed=0))
    assert m.losses[-1] < m.losses[0]


def test_identical_sentences_identical_rows_and_determinism():
    sents = [["process", "nginx", "read", "file"], ["file", "tmp"], ["process", "nginx", "read", "file"]]
    x, _ = train_embeddings(sents, dim=6, seed=3)
    np.testing.assert_array_equal(x[0], x[2])
    y, _ = train_embeddings(sents, dim=6, seed=3)
    np.testing.assert_array_equal(x, y)
    assert np.isfinite(x).all()


def test_errors():
    with pytest.raises(EmptyCorpus):
        train_embeddings([["process"], ["process"]])
    with pytest.raises(EmptyCorpus):
        train_embeddings([])
    with pytest.raises(InvalidConfig):
        train_skipgram([["a", "b"]], SkipGramConfig(dim=0))


def test_distributional_sanity():
    # two topics with disjoint vocabularies; every scenario sentence shares kind tokens,
    # so disjoint pairs only exist in a corpus built for the purpose
    rng = np.random.default_rng(0)
    topics = [[f"a{i}" for i in range(8)], [f"b{i}" for i in range(8)]]
    sents = [list(rng.choice(topics[t], size=6)) for t in (0, 1) for _ in range(40)]
    x, _ = train_embeddings(sents, dim=16, epochs=10, seed=0)
    x = Scaler.fit(x).transform(x)
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    sets = [set(t) for t in sents]
    similar, disjoint = [], []
    for i in range(len(sents)):
        for j in range(i + 1, len(sents)):
            inter = len(sets[i] & sets[j])
            cos = float(unit[i] @ unit[j])
            if inter == 0:
                disjoint.append(cos)
            elif inter >= 0.5 * max(len(sets[i]), len(sets[j])):
                similar.append(cos)
    assert len(similar) > 50 and len(disjoint) > 50
    assert np.mean(similar) > np.mean(disjoint)


def test_model_and_signal_roundtrip(tmp_path):
    sents = [["process", "nginx"], ["file", "tmp"]]
    x, m = train_embeddings(sents, dim=4, seed=0)
    m.save(tmp_path / "m")
    m2 = SkipGramModel.load(tmp_path / "m")
    np.testing.assert_array_equal(m2.node_signals(sents), x)
    SignalMatrix(x, ["a", "b"]).save(tmp_path / "s")
    back = SignalMatrix.load(tmp_path / "s")
    assert back.node_keys == ["a", "b"] and back.flag == "raw"
    np.testing.assert_array_equal(back.values, x)


@given(st.integers(1, 30), st.integers(1, 6), st.integers(0, 1000))
def test_scaler_properties(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d)) * 5 + 3
    sc = Scaler.fit(x)
    z = sc.transform(x)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-9)
    assert np.isfinite(z).all()
    np.testing.assert_array_equal(Scaler.identity(d).transform(x), x)
    with pytest.raises(InvalidConfig):
        sc.transform(np.zeros((2, d + 1)))


def test_scaler_roundtrip(tmp_path):
    sc = Scaler(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    sc.save(tmp_path / "sc")
    back = Scaler.load(tmp_path / "sc")
    np.testing.assert_array_equal(back.mean, sc.mean)
    np.testing.assert_array_equal(back.std, sc.std)
