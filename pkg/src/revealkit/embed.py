"""Skip-gram token embeddings and initial vertex features."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import DEFAULT_VERTEX_VOCAB, CodeGraph, TypeVocabulary, Vertex, tokenize

log = logging.getLogger(__name__)

UNK = "<unk>"


@dataclass
class TokenEmbedding:
    """Token -> vector table. Row 0 is the reserved all-zero UNK row."""

    vocab: dict[str, int]
    vectors: np.ndarray
    window: int = 10
    dim: int = 100
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.vectors.shape != (len(self.vocab), self.dim):
            raise ValueError(f"vectors have shape {self.vectors.shape}, expected {(len(self.vocab), self.dim)}")

    def __getitem__(self, token: str) -> np.ndarray:
        return self.vectors[self.vocab.get(token, 0)]

    def lookup(self, tokens: Sequence[str]) -> np.ndarray:
        idx = [self.vocab.get(t, 0) for t in tokens]
        return self.vectors[idx]

    def to_json(self) -> dict:
        tokens = sorted(self.vocab, key=self.vocab.__getitem__)
        return {"vocab": tokens, "dim": self.dim, "window": self.window,
                "vectors": self.vectors.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "TokenEmbedding":
        vocab = {t: i for i, t in enumerate(obj["vocab"])}
        return cls(vocab, np.asarray(obj["vectors"], dtype=np.float64).reshape(len(vocab), obj["dim"]),
                   window=obj["window"], dim=obj["dim"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TokenEmbedding":
        return cls.from_json(json.loads(Path(path).read_text()))


def _pairs_for_epoch(sentences: list[np.ndarray], window: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    centers, contexts = [], []
    for s in sentences:
        L = len(s)
        if L < 2:
            continue
        # word2vec-style shrunken window per center position
        reach = rng.integers(1, window + 1, size=L)
        for d in range(1, min(window, L - 1) + 1):
            left = np.arange(L - d)
            fwd = left[reach[left] >= d]
            centers.append(s[fwd])
            contexts.append(s[fwd + d])
            right = left + d
            back = right[reach[right] >= d]
            centers.append(s[back])
            contexts.append(s[back - d])
    if not centers:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    return np.concatenate(centers), np.concatenate(contexts)


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def train_skipgram(corpus: Sequence[Sequence[str]], window: int = 10, dim: int = 100,
                   epochs: int = 5, seed: int = 0, negatives: int = 5, lr: float = 0.025,
                   batch_size: int = 256) -> TokenEmbedding:
    """Train skip-gram with negative sampling on a list of token lists.

    Learning rate decays linearly from ``lr`` towards ``lr * 1e-4`` over all
    training pairs. Negatives are drawn from the unigram distribution raised
    to 0.75. The per-epoch mean loss is recorded in ``epoch_losses``.
    """
    if not corpus or not any(len(s) for s in corpus):
        raise ValueError("cannot train an embedding on an empty corpus")
    if window < 1 or dim < 1:
        raise ValueError("window and dim must be >= 1")
    counts = Counter(t for s in corpus for t in s)
    ordered = sorted(counts, key=lambda t: (-counts[t], t))
    vocab = {UNK: 0}
    for t in ordered:
        if t != UNK:
            vocab[t] = len(vocab)
    V = len(vocab)
    rng = np.random.default_rng(seed)

    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_in[0] = 0.0
    w_out = np.zeros((V, dim))
    freq = np.array([0.0] + [counts[t] for t in list(vocab)[1:]]) ** 0.75
    noise = freq / freq.sum()

    sentences = [np.array([vocab[t] for t in s], dtype=np.intp) for s in corpus]
    n_pairs_est = max(1, len(_pairs_for_epoch(sentences, window, np.random.default_rng(seed))[0]))
    total = n_pairs_est * epochs
    seen = 0
    losses = []
    for epoch in range(epochs):
        centers, contexts = _pairs_for_epoch(sentences, window, rng)
        order = rng.permutation(len(centers))
        centers, contexts = centers[order], contexts[order]
        epoch_loss, n = 0.0, 0
        for start in range(0, len(centers), batch_size):
            c = centers[start:start + batch_size]
            o = contexts[start:start + batch_size]
            B = len(c)
            neg = rng.choice(V, size=(B, negatives), p=noise)
            alpha = lr * max(1.0 - seen / total, 1e-4)
            v = w_in[c]
            u_pos = w_out[o]
            u_neg = w_out[neg]
            s_pos = np.einsum("bd,bd->b", v, u_pos)
            s_neg = np.einsum("bkd,bd->bk", u_neg, v)
            epoch_loss += float(-(_log_sigmoid(s_pos).sum() + _log_sigmoid(-s_neg).sum()))
            g_pos = 1.0 / (1.0 + np.exp(-s_pos)) - 1.0         # d loss / d s_pos
            g_neg = 1.0 / (1.0 + np.exp(-s_neg))               # d loss / d s_neg
            grad_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", g_neg, u_neg)
            np.add.at(w_out, o, -alpha * g_pos[:, None] * v)
            np.add.at(w_out, neg, -alpha * g_neg[:, :, None] * v[:, None, :])
            np.add.at(w_in, c, -alpha * grad_v)
            n += B
            seen += B
        losses.append(epoch_loss / max(n, 1))
        log.debug("skipgram epoch %d mean loss %.4f", epoch, losses[-1])
    w_in[0] = 0.0
    return TokenEmbedding(vocab, w_in, window=window, dim=dim, epoch_losses=losses)


def featurize_vertex(v: Vertex, emb: TokenEmbedding,
                     types: TypeVocabulary = DEFAULT_VERTEX_VOCAB) -> np.ndarray:
    """``[one-hot(vertex type) | mean token vector of the vertex code]``."""
    if v.vtype not in types:
        raise KeyError(f"unknown vertex type {v.vtype!r}")
    out = np.zeros(len(types) + emb.dim)
    out[types.index(v.vtype)] = 1.0
    toks = tokenize(v.code)
    if toks:
        out[len(types):] = emb.lookup(toks).mean(axis=0)
    return out


def featurize_graph(g: CodeGraph, emb: TokenEmbedding,
                    types: TypeVocabulary = DEFAULT_VERTEX_VOCAB) -> np.ndarray:
    """Feature matrix of shape [|V|, |types| + dim], rows in vertex id order."""
    if not g.vertices:
        return np.zeros((0, len(types) + emb.dim))
    return np.stack([featurize_vertex(v, emb, types) for v in g.vertices])
