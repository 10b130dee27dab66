"""Attribute sentences and a skip-gram negative-sampling embedder.

Each node is described by a sentence: its kind, its name/path/ip tokens and,
for every incident edge in timestamp order, the relation and the kind of the
node on the other end. Token vectors come from skip-gram with negative
sampling; a node's signal is the mean of its tokens' vectors.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .checkpoint import FLAG_MODEL, FLAG_SCALER, CheckpointError, read_signal_file, write_signal_file
from .errors import EmptyCorpus, InvalidConfig, NonFinite
from .provgraph import ProvGraph

log = logging.getLogger(__name__)

_NAME_ATTRS = ("name", "path", "ip")


def attribute_tokens(attrs: dict) -> list[str]:
    toks: list[str] = []
    for key in _NAME_ATTRS:
        val = attrs.get(key)
        if not val:
            continue
        if key == "ip":
            toks.append(val.lower())
        else:
            toks.extend(t for t in val.lower().split("/") if t)
    return toks


def build_sentence(g: ProvGraph, v: int, incident: list[list[int]] | None = None) -> list[str]:
    if not 0 <= v < g.n:
        raise IndexError(f"node {v} out of range for graph with {g.n} nodes")
    toks = [g.node_kind[v].value]
    toks.extend(attribute_tokens(g.node_attrs[v]))
    eids = incident[v] if incident is not None else [
        i for i, e in enumerate(g.edges) if e.src == v or e.dst == v]
    for i in sorted(eids, key=lambda i: (g.edges[i].first_ts, i)):
        e = g.edges[i]
        other = e.dst if e.src == v else e.src
        toks.append(e.relation)
        toks.append(g.node_kind[other].value)
    return toks


def build_sentences(g: ProvGraph) -> list[list[str]]:
    incident = g.incident_edges()
    return [build_sentence(g, v, incident) for v in range(g.n)]


@dataclass
class SkipGramConfig:
    dim: int = 32
    window: int = 2
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr: float = 0.0001
    seed: int = 0


@dataclass
class SkipGramModel:
    vocab: list[str]
    w_in: np.ndarray
    w_out: np.ndarray
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def dim(self) -> int:
        return self.w_in.shape[1]

    def vector(self, token: str) -> np.ndarray:
        i = self.index.get(token)
        return self.w_in[i].copy() if i is not None else np.zeros(self.dim)

    def node_signals(self, sentences: list[list[str]]) -> np.ndarray:
        """Mean token vector per sentence; unknown tokens count as zero vectors."""
        out = np.zeros((len(sentences), self.dim))
        for r, sent in enumerate(sentences):
            ids = [self.index.get(t, -1) for t in sent]
            known = [i for i in ids if i >= 0]
            if known:
                out[r] = self.w_in[known].sum(axis=0) / len(ids)
        return out

    def save(self, path: str | Path) -> None:
        write_signal_file(path, self.vocab, [self.w_in, self.w_out], FLAG_MODEL)

    @classmethod
    def load(cls, path: str | Path) -> "SkipGramModel":
        flag, vocab, mats = read_signal_file(path)
        if flag != FLAG_MODEL or len(mats) != 2:
            raise CheckpointError("not an embedding model checkpoint")
        return cls(vocab, mats[0], mats[1])


def _pairs(encoded: list[np.ndarray], window: int) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for ids in encoded:
        m = len(ids)
        for off in range(1, window + 1):
            if m <= off:
                break
            centers.append(ids[:-off]); contexts.append(ids[off:])
            centers.append(ids[off:]); contexts.append(ids[:-off])
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


@numba.njit(cache=True)
def _sgns_epoch(w_in, w_out, centers, contexts, negatives, lr0, lr1):
    """One sequential pass of skip-gram negative sampling; returns summed loss."""
    n_pairs = centers.shape[0]
    k = negatives.shape[1]
    d = w_in.shape[1]
    grad = np.empty(d)
    loss = 0.0
    for i in range(n_pairs):
        lr = lr0 + (lr1 - lr0) * i / n_pairs
        c = centers[i]
        grad[:] = 0.0
        for j in range(k + 1):
            if j == 0:
                t = contexts[i]
                label = 1.0
            else:
                t = negatives[i, j - 1]
                if t == contexts[i]:
                    continue
                label = 0.0
            s = 0.0
            for a in range(d):
                s += w_in[c, a] * w_out[t, a]
            if s > 30.0:
                p = 1.0
            elif s < -30.0:
                p = 0.0
            else:
                p = 1.0 / (1.0 + np.exp(-s))
            if label == 1.0:
                loss -= np.log(p + 1e-12)
            else:
                loss -= np.log(1.0 - p + 1e-12)
            g = (label - p) * lr
            for a in range(d):
                grad[a] += g * w_out[t, a]
                w_out[t, a] += g * w_in[c, a]
        for a in range(d):
            w_in[c, a] += grad[a]
    return loss


def train_skipgram(sentences: list[list[str]], cfg: SkipGramConfig = SkipGramConfig()) -> SkipGramModel:
    """Word2vec-style sequential SGD; learning rate decays linearly over all epochs."""
    if cfg.dim < 1 or cfg.window < 1 or cfg.negatives < 0 or cfg.epochs < 0:
        raise InvalidConfig("dim, window >= 1; negatives, epochs >= 0")
    counts = Counter(t for s in sentences for t in s)
    if len(counts) < 2:
        raise EmptyCorpus(f"vocabulary has {len(counts)} token(s); need at least 2")
    vocab = sorted(counts, key=lambda t: (-counts[t], t))
    index = {t: i for i, t in enumerate(vocab)}
    V, d = len(vocab), cfg.dim

    rng = np.random.default_rng(cfg.seed)
    w_in = (rng.random((V, d)) - 0.5) / d
    w_out = np.zeros((V, d))

    encoded = [np.fromiter((index[t] for t in s), np.int64, len(s)) for s in sentences]
    centers, contexts = _pairs(encoded, cfg.window)
    n_pairs = len(centers)
    freq = np.array([counts[t] for t in vocab], dtype=float) ** 0.75
    noise_cdf = np.cumsum(freq / freq.sum())

    model = SkipGramModel(vocab, w_in, w_out)
    if n_pairs == 0 or cfg.epochs == 0:
        return model
    lr_at = lambda e: max(cfg.min_lr, cfg.lr * (1.0 - e / cfg.epochs))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_pairs)
        neg = np.searchsorted(noise_cdf, rng.random((n_pairs, cfg.negatives)), side="right")
        neg = np.minimum(neg, V - 1).astype(np.int64)
        loss = _sgns_epoch(w_in, w_out, centers[order], contexts[order], neg,
                           lr_at(epoch), lr_at(epoch + 1))
        model.losses.append(loss / n_pairs)
        log.debug("skip-gram epoch %d loss %.4f", epoch, model.losses[-1])
    if not (np.isfinite(w_in).all() and np.isfinite(w_out).all()):
        raise NonFinite("skip-gram weights diverged")
    return model


def train_embeddings(sentences: list[list[str]], dim: int = 32, window: int = 2, negatives: int = 5,
                     epochs: int = 5, seed: int = 0, **kw) -> tuple[np.ndarray, SkipGramModel]:
    """Train token vectors and return (raw node signals, model)."""
    cfg = SkipGramConfig(dim=dim, window=window, negatives=negatives, epochs=epochs, seed=seed, **kw)
    model = train_skipgram(sentences, cfg)
    return model.node_signals(sentences), model


@dataclass
class SignalMatrix:
    """Node signals with their provenance flag ("raw" or "denoised")."""

    values: np.ndarray
    node_keys: list[str]
    flag: str = "raw"

    def save(self, path: str | Path) -> None:
        from .checkpoint import FLAG_DENOISED, FLAG_RAW
        write_signal_file(path, list(self.node_keys), [self.values],
                          FLAG_RAW if self.flag == "raw" else FLAG_DENOISED)

    @classmethod
    def load(cls, path: str | Path) -> "SignalMatrix":
        from .checkpoint import FLAG_DENOISED, FLAG_RAW
        flag, keys, mats = read_signal_file(path)
        if flag not in (FLAG_RAW, FLAG_DENOISED) or len(mats) != 1:
            raise CheckpointError("not a signal checkpoint")
        return cls(mats[0], keys, "raw" if flag == FLAG_RAW else "denoised")


@dataclass
class Scaler:
    """Per-column standardization fitted on the training signals.

    Mean-pooled token vectors share a large common component, which makes
    every pair of nodes look alike under cosine similarity. Removing the column
    mean and scaling to unit variance exposes the differences. Constant
    columns are left unscaled.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Scaler":
        x = np.asarray(x, dtype=float)
        std = x.std(axis=0)
        std[std <= 1e-12] = 1.0
        return cls(x.mean(axis=0), std)

    @classmethod
    def identity(cls, d: int) -> "Scaler":
        return cls(np.zeros(d), np.ones(d))

    def transform(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != len(self.mean):
            raise InvalidConfig(f"scaler fitted on {len(self.mean)} columns, got {x.shape[1]}")
        return (x - self.mean) / self.std

    def save(self, path: str | Path) -> None:
        write_signal_file(path, ["mean", "std"], [np.vstack([self.mean, self.std])], FLAG_SCALER)

    @classmethod
    def load(cls, path: str | Path) -> "Scaler":
        flag, _, mats = read_signal_file(path)
        if flag != FLAG_SCALER or len(mats) != 1 or mats[0].shape[0] != 2:
            raise CheckpointError("not a scaler checkpoint")
        return cls(mats[0][0].copy(), mats[0][1].copy())
