"""Word and topic embeddings and the cosine cost matrix between them."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

INIT_RANGE = 0.1


class EmbeddingFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WordEmbeddings:
    """Frozen L x V matrix; column ``v`` embeds vocabulary word ``v``."""

    E: np.ndarray
    n_oov: int = 0

    def __post_init__(self):
        E = np.array(self.E, dtype=float)
        if E.ndim != 2:
            raise ValueError("word embeddings must be a 2-d L x V matrix")
        zero = np.flatnonzero(np.linalg.norm(E, axis=0) == 0)
        if zero.size:
            raise ValueError(f"zero-norm word vectors at columns {zero.tolist()}")
        E.setflags(write=False)
        object.__setattr__(self, "E", E)

    @property
    def dim(self):
        return self.E.shape[0]

    @property
    def n_words(self):
        return self.E.shape[1]


@dataclass
class TopicEmbeddings:
    """Learnable L x K matrix; column ``k`` embeds topic ``k``."""

    G: np.ndarray

    @property
    def dim(self):
        return self.G.shape[0]

    @property
    def K(self):
        return self.G.shape[1]

    def repair_zero_columns(self, rng):
        """Re-draw any all-zero column; returns the repaired column ids."""
        zero = np.flatnonzero(np.linalg.norm(self.G, axis=0) == 0)
        for k in zero:
            self.G[:, k] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=self.dim)
        return zero


def load_word_vectors(path, vocab, dim, oov_seed=0):
    """Read ``token v1 ... vL`` lines into an L x V matrix in vocab order.

    Vocabulary words missing from the file get seeded uniform(-0.1, 0.1)
    vectors; the number of such fills is stored in ``n_oov``.
    """
    path = Path(path)
    E = np.empty((dim, len(vocab)))
    found = np.zeros(len(vocab), dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                if not line.strip():
                    continue
                raise EmbeddingFormatError(f"{path}:{lineno}: expected a token followed by {dim} numbers")
            if len(parts) - 1 != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} numbers, found {len(parts) - 1}"
                )
            v = vocab.index.get(parts[0])
            if v is None or found[v]:
                continue
            try:
                E[:, v] = [float(x) for x in parts[1:]]
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: unreadable number in {parts[0]!r} vector") from None
            found[v] = True

    rng = np.random.default_rng(oov_seed)
    missing = np.flatnonzero(~found)
    for v in missing:
        E[:, v] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=dim)
    # A file vector of all zeros gets the same treatment as a missing word.
    zero = np.flatnonzero(np.linalg.norm(E, axis=0) == 0)
    for v in zero:
        E[:, v] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=dim)
    n_oov = int(missing.size + zero.size)
    if n_oov:
        logger.info("filled %d of %d vocabulary words with random vectors", n_oov, len(vocab))
    return WordEmbeddings(E, n_oov=n_oov)


def save_word_vectors(path, vocab, embeddings):
    with open(path, "w", encoding="utf-8") as fh:
        for tok, vec in zip(vocab.tokens, embeddings.E.T):
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def init_topic_embeddings(K, L, seed):
    if K < 1 or L < 1:
        raise ValueError(f"need K >= 1 and L >= 1, got K={K}, L={L}")
    rng = np.random.default_rng(seed)
    return TopicEmbeddings(rng.uniform(-INIT_RANGE, INIT_RANGE, size=(L, K)))


def cosine(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_columns(A, what):
    A = np.asarray(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"zero-norm {what} column(s) {zero.tolist()}")
    return A / norms, norms


def _as_matrix(x):
    return x.E if isinstance(x, WordEmbeddings) else x.G if isinstance(x, TopicEmbeddings) else np.asarray(x, dtype=float)


def cosine_matrix(E, G):
    E, G = _as_matrix(E), _as_matrix(G)
    if E.shape[0] != G.shape[0]:
        raise ValueError(f"embedding dimensions differ: {E.shape[0]} vs {G.shape[0]}")
    En, _ = _unit_columns(E, "word embedding")
    Gn, _ = _unit_columns(G, "topic embedding")
    return np.clip(En.T @ Gn, -1.0, 1.0)


def cost_matrix(E, G):
    """V x K matrix ``1 - cos(e_v, g_k)``, with entries in [0, 2]."""
    return 1.0 - cosine_matrix(E, G)


def cost_matrix_grad_G(E, G, upstream):
    """Pull a V x K gradient on the cost matrix back to the L x K topic embeddings."""
    E, G = _as_matrix(E), _as_matrix(G)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (E.shape[1], G.shape[1]):
        raise ValueError(f"upstream must be {E.shape[1]}x{G.shape[1]}, got {upstream.shape}")
    En, _ = _unit_columns(E, "word embedding")
    Gn, gnorm = _unit_columns(G, "topic embedding")
    cos = En.T @ Gn
    # d(-cos)/dg = -(e_hat - cos * g_hat) / |g|
    grad = -(En @ upstream - Gn * np.sum(upstream * cos, axis=0)) / gnorm
    return grad
