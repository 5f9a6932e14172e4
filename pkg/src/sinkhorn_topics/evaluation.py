"""Topic quality and document clustering metrics.

Coherence is NPMI over a topic's top words, with document co-occurrence
counted in a reference corpus. Diversity is the fraction of unique words
among the selected topics' top-25 lists. Clustering quality is purity and
NMI (geometric-mean normalization) of either the arg-max topic or KMeans
clusters of the topic proportions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from .model import top_words

DEFAULT_PROPORTIONS = tuple(round(0.1 * i, 1) for i in range(1, 11))
DEFAULT_KMEANS_K = (20, 40, 60, 80, 100)
NPMI_SMOOTHING = 0.01


@dataclass
class CooccurrenceStats:
    words: tuple
    index: dict
    df: np.ndarray        # per word of interest
    joint: np.ndarray     # pairwise document co-occurrence counts
    n_docs: int

    def pair(self, a, b):
        try:
            i, j = self.index[a], self.index[b]
        except KeyError as exc:
            raise KeyError(f"word {exc.args[0]!r} not covered by the co-occurrence statistics") from None
        return self.df[i], self.df[j], self.joint[i, j]


@dataclass
class ClusterResult:
    assignment: np.ndarray
    purity: float
    nmi: float


def build_cooccurrence(reference, words_of_interest):
    """Document-level (binary) frequencies and pair co-occurrences.

    Words of interest missing from the reference vocabulary get zero counts.
    """
    if reference.n_docs == 0:
        raise ValueError("reference corpus is empty")
    words = tuple(dict.fromkeys(words_of_interest))
    rows = [reference.vocab.index.get(w) for w in words]
    present = sp.csr_matrix(reference.counts > 0, dtype=np.int64)
    A = sp.csr_matrix((len(words), reference.n_docs), dtype=np.int64)
    hit = [i for i, r in enumerate(rows) if r is not None]
    if hit:
        sel = sp.csr_matrix(
            (np.ones(len(hit), dtype=np.int64), ([i for i in hit], [rows[i] for i in hit])),
            shape=(len(words), reference.n_words),
        )
        A = sel @ present
    joint = (A @ A.T).toarray()
    df = np.diag(joint).copy()
    return CooccurrenceStats(words, {w: i for i, w in enumerate(words)}, df, joint, reference.n_docs)


def npmi_pair(df_i, df_j, df_ij, n_docs, smoothing=NPMI_SMOOTHING):
    """NPMI of one word pair with all probabilities estimated as
    ``(count + smoothing) / n_docs``."""
    p_i = (df_i + smoothing) / n_docs
    p_j = (df_j + smoothing) / n_docs
    p_ij = (df_ij + smoothing) / n_docs
    if p_ij <= 0:
        return -1.0
    denom = -math.log(p_ij)
    if denom == 0:
        # p_ij == 1 only happens unsmoothed: both words in every document.
        return 1.0
    value = math.log(p_ij / (p_i * p_j)) / denom
    return min(1.0, max(-1.0, value))


def npmi_topic(words, stats, smoothing=NPMI_SMOOTHING):
    """Mean pairwise NPMI over a topic's top words (45 pairs for 10 words)."""
    if len(words) < 2:
        raise ValueError("coherence needs at least two words")
    scores = [
        npmi_pair(*stats.pair(a, b), stats.n_docs, smoothing)
        for a, b in combinations(words, 2)
    ]
    return float(np.mean(scores))


def topic_npmi_scores(model, reference, n_words=10, smoothing=NPMI_SMOOTHING):
    tops = [top_words(model, k, n_words) for k in range(model.K)]
    stats = build_cooccurrence(reference, [w for ws in tops for w in ws])
    return np.array([npmi_topic(ws, stats, smoothing) for ws in tops])


def _n_selected(p, K):
    if not 0 < p <= 1:
        raise ValueError(f"proportion must lie in (0, 1], got {p}")
    # round() guards against 0.3 * 10 = 3.0000000000000004
    return max(1, math.ceil(round(p * K, 9)))


def select_topics(scores, proportion):
    """Indices of the ``ceil(p K)`` highest-scoring topics, best first."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    return order[:_n_selected(proportion, len(order))]


def coherence_curve(scores, proportions=DEFAULT_PROPORTIONS):
    s = np.sort(np.asarray(scores, dtype=float))[::-1]
    return [float(s[:_n_selected(p, s.size)].mean()) for p in proportions]


def topic_coherence_curve(model, reference, proportions=DEFAULT_PROPORTIONS, n_words=10):
    """Mean NPMI of the top-``p`` fraction of topics, for each ``p``."""
    return coherence_curve(topic_npmi_scores(model, reference, n_words), proportions)


def diversity(word_lists):
    """Unique words over total words for a collection of equal-length lists."""
    if not word_lists:
        raise ValueError("need at least one topic")
    total = sum(len(ws) for ws in word_lists)
    return len(set().union(*map(set, word_lists))) / total


def topic_diversity(model, selected_topics, top_n=25):
    return diversity([top_words(model, int(k), top_n) for k in selected_topics])


def diversity_curve(model, scores, proportions=DEFAULT_PROPORTIONS, top_n=25):
    return [topic_diversity(model, select_topics(scores, p), top_n) for p in proportions]


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------


def top_topic_assign(Z):
    """Cluster each document (column) by its largest topic; ties to the lowest id."""
    return np.argmax(np.asarray(Z), axis=0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _sq_dists(X, C):
    return np.maximum(
        np.sum(X**2, axis=1)[:, None] - 2 * X @ C.T + np.sum(C**2, axis=1)[None, :], 0.0
    )


def kmeans(points, k, seed=0, max_iter=300):
    """Lloyd's algorithm from k-means++ seeding.

    ``points`` is N x d (pass ``Z.T`` for topic proportions). Returns the
    assignment and the inertia.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    rng = np.random.default_rng(seed)
    C = _kmeanspp(X, k, rng)
    assign = None
    for _ in range(max_iter):
        d2 = _sq_dists(X, C)
        new = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # Re-seed an empty cluster at the point farthest from its center.
            far = int(np.argmax(d2[np.arange(n), assign]))
            C[j] = X[far]
            assign[far] = j
            d2[far] = 0.0
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        C = sums / counts[:, None]
    inertia = float(np.sum((X - C[assign]) ** 2))
    return assign, inertia


def _contingency(assignment, labels):
    a = np.asarray(assignment)
    y = np.asarray(labels)
    if a.shape != y.shape:
        raise ValueError(f"{a.size} assignments vs {y.size} labels")
    if a.size == 0:
        raise ValueError("empty clustering")
    _, ai = np.unique(a, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    table = np.zeros((ai.max() + 1, yi.max() + 1))
    np.add.at(table, (ai, yi), 1)
    return table


def purity(assignment, labels):
    table = _contingency(assignment, labels)
    return float(table.max(axis=1).sum() / table.sum())


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(assignment, labels):
    """Mutual information over the geometric mean of the two entropies."""
    table = _contingency(assignment, labels)
    n = table.sum()
    pxy = table / n
    px = pxy.sum(axis=1)
    py = pxy.sum(axis=0)
    hx, hy = _entropy(px), _entropy(py)
    if hx == 0 or hy == 0:
        # Single cluster or single class.
        return 1.0 if table.shape[0] == table.shape[1] == 1 else 0.0
    nz = pxy > 0
    mi = float(np.sum(pxy[nz] * np.log(pxy[nz] / np.outer(px, py)[nz])))
    return float(min(1.0, max(0.0, mi / math.sqrt(hx * hy))))


def cluster_scores(assignment, labels):
    return ClusterResult(np.asarray(assignment), purity(assignment, labels), nmi(assignment, labels))
