"""Bag-of-words corpora: vocabulary files, Matrix Market counts, labels,
normalization and seeded batching."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

MM_HEADER = "%%MatrixMarket matrix coordinate integer general"


class CorpusFormatError(ValueError):
    """Malformed vocabulary, count or label file."""


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple
    index: dict = field(repr=False, compare=False)

    @classmethod
    def from_tokens(cls, tokens):
        tokens = tuple(tokens)
        index = {}
        for i, tok in enumerate(tokens):
            if tok in index:
                raise CorpusFormatError(f"duplicate token {tok!r} at position {i}")
            index[tok] = i
        return cls(tokens, index)

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")


@dataclass(frozen=True)
class BowCorpus:
    """Sparse V x D count matrix with its vocabulary and optional labels."""

    counts: sp.csc_matrix
    vocab: Vocabulary
    labels: np.ndarray | None = None

    def __post_init__(self):
        counts = sp.csc_matrix(self.counts, dtype=np.int64)
        counts.sum_duplicates()
        counts.eliminate_zeros()
        object.__setattr__(self, "counts", counts)
        V, D = counts.shape
        if V != len(self.vocab):
            raise CorpusFormatError(f"count matrix has {V} rows but vocabulary has {len(self.vocab)} tokens")
        if counts.nnz and counts.data.min() < 0:
            raise CorpusFormatError("counts must be nonnegative")
        totals = np.asarray(counts.sum(axis=0)).ravel()
        empty = np.flatnonzero(totals == 0)
        if empty.size:
            raise CorpusFormatError(f"empty documents (zero total count) at indices {empty.tolist()}")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (D,):
                raise CorpusFormatError(f"{labels.size} labels for {D} documents")
            if labels.size and labels.min() < 0:
                raise CorpusFormatError("labels must be nonnegative integers")
            object.__setattr__(self, "labels", labels)

    @property
    def n_words(self):
        return self.counts.shape[0]

    @property
    def n_docs(self):
        return self.counts.shape[1]

    def doc_lengths(self):
        return np.asarray(self.counts.sum(axis=0)).ravel()

    def subset(self, doc_ids):
        doc_ids = np.asarray(doc_ids, dtype=np.int64)
        labels = None if self.labels is None else self.labels[doc_ids]
        return BowCorpus(self.counts[:, doc_ids], self.vocab, labels)

    def dense(self, doc_ids=None):
        cols = self.counts if doc_ids is None else self.counts[:, doc_ids]
        return cols.toarray().astype(float)


@dataclass
class DocBatch:
    X: np.ndarray
    Xnorm: np.ndarray
    doc_ids: np.ndarray


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def load_vocab(path):
    """Read a vocabulary file, one token per line; ids follow file order."""
    path = Path(path)
    tokens = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.rstrip("\n").rstrip("\r")
            if not tok.strip():
                raise CorpusFormatError(f"{path}:{lineno}: blank line in vocabulary")
            if tok in seen:
                raise CorpusFormatError(
                    f"{path}:{lineno}: duplicate token {tok!r} (first seen on line {seen[tok]})"
                )
            seen[tok] = lineno
            tokens.append(tok)
    if not tokens:
        raise CorpusFormatError(f"{path}: empty vocabulary file")
    return Vocabulary.from_tokens(tokens)


def read_matrix_market(path):
    """Parse an integer coordinate Matrix Market file into a COO matrix."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.lower().split()
        if len(parts) != 5 or parts[0] != "%%matrixmarket" or parts[1:3] != ["matrix", "coordinate"]:
            raise CorpusFormatError(f"{path}:1: not a Matrix Market coordinate header: {header.strip()!r}")
        if parts[3] not in ("integer", "real") or parts[4] != "general":
            raise CorpusFormatError(f"{path}:1: unsupported field/symmetry {parts[3]} {parts[4]}")
        lineno = 1
        size = None
        for line in fh:
            lineno += 1
            if line.startswith("%") or not line.strip():
                continue
            size = line.split()
            break
        if size is None or len(size) != 3:
            raise CorpusFormatError(f"{path}:{lineno}: missing size line")
        try:
            n_rows, n_cols, nnz = (int(s) for s in size)
        except ValueError:
            raise CorpusFormatError(f"{path}:{lineno}: bad size line {' '.join(size)!r}") from None
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.int64)
        k = 0
        for line in fh:
            lineno += 1
            if line.startswith("%") or not line.strip():
                continue
            fields = line.split()
            if len(fields) != 3 or k >= nnz:
                raise CorpusFormatError(f"{path}:{lineno}: malformed entry {line.strip()!r}")
            try:
                i, j = int(fields[0]), int(fields[1])
                value = float(fields[2])
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: unreadable entry {line.strip()!r}") from None
            if not value.is_integer():
                raise CorpusFormatError(f"{path}:{lineno}: non-integer count {fields[2]}")
            if value < 0:
                raise CorpusFormatError(f"{path}:{lineno}: negative count {fields[2]}")
            if not (1 <= i <= n_rows and 1 <= j <= n_cols):
                raise CorpusFormatError(f"{path}:{lineno}: index ({i}, {j}) outside {n_rows}x{n_cols}")
            rows[k], cols[k], vals[k] = i - 1, j - 1, int(value)
            k += 1
        if k != nnz:
            raise CorpusFormatError(f"{path}: header declares {nnz} entries, found {k}")
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))


def write_matrix_market(path, counts):
    """Write counts as integer coordinate Matrix Market, column-major order."""
    coo = sp.csc_matrix(counts).tocoo()
    order = np.lexsort((coo.row, coo.col))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MM_HEADER + "\n")
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{i + 1} {j + 1} {int(v)}\n")


def load_labels(path):
    path = Path(path)
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s.isdigit():
                raise CorpusFormatError(f"{path}:{lineno}: label must be a nonnegative integer, got {s!r}")
            labels.append(int(s))
    return np.array(labels, dtype=np.int64)


def save_labels(path, labels):
    Path(path).write_text("".join(f"{int(x)}\n" for x in labels), encoding="utf-8")


def load_bow(path, vocab, labels_path=None):
    """Load a V x D Matrix Market count file against ``vocab``.

    ``labels_path`` optionally names a file with one label per document.
    """
    coo = read_matrix_market(path)
    if coo.shape[0] != len(vocab):
        raise CorpusFormatError(
            f"{path}: matrix has {coo.shape[0]} rows but vocabulary has {len(vocab)} tokens"
        )
    labels = load_labels(labels_path) if labels_path is not None else None
    return BowCorpus(coo.tocsc(), vocab, labels)


def save_corpus(directory, corpus):
    """Write ``vocab.txt``, ``counts.mtx`` and (if labeled) ``labels.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus.vocab.save(directory / "vocab.txt")
    write_matrix_market(directory / "counts.mtx", corpus.counts)
    if corpus.labels is not None:
        save_labels(directory / "labels.txt", corpus.labels)


def load_corpus(directory):
    directory = Path(directory)
    vocab = load_vocab(directory / "vocab.txt")
    labels = directory / "labels.txt"
    return load_bow(directory / "counts.mtx", vocab, labels if labels.exists() else None)


def ingest_text(lines, *, min_df=1, stopwords=(), labels=None, lowercase=True):
    """Build a corpus from raw documents, one string per document.

    Tokens are whitespace-separated; words appearing in fewer than ``min_df``
    documents or listed in ``stopwords`` are dropped. Documents left empty
    by the filtering are removed together with their labels.
    """
    stop = set(stopwords)
    docs = []
    for line in lines:
        text = line.lower() if lowercase else line
        docs.append([t for t in text.split() if t not in stop])
    df = Counter()
    for doc in docs:
        df.update(set(doc))
    kept = sorted(w for w, n in df.items() if n >= min_df)
    if not kept:
        raise CorpusFormatError(f"no word reaches min_df={min_df}; vocabulary would be empty")
    vocab = Vocabulary.from_tokens(kept)

    rows, cols, vals = [], [], []
    keep_docs = []
    for d, doc in enumerate(docs):
        counts = Counter(vocab.index[t] for t in doc if t in vocab.index)
        if not counts:
            continue
        col = len(keep_docs)
        keep_docs.append(d)
        for v, n in sorted(counts.items()):
            rows.append(v)
            cols.append(col)
            vals.append(n)
    if not keep_docs:
        raise CorpusFormatError("every document is empty after filtering")
    dropped = len(docs) - len(keep_docs)
    if dropped:
        logger.warning("dropped %d documents left empty by vocabulary filtering", dropped)
    counts = sp.csc_matrix((vals, (rows, cols)), shape=(len(vocab), len(keep_docs)), dtype=np.int64)
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (len(docs),):
            raise CorpusFormatError(f"{labels.size} labels for {len(docs)} documents")
        labels = labels[keep_docs]
    return BowCorpus(counts, vocab, labels)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def normalize_batch(X):
    """Divide each column of a count matrix by its total."""
    X = np.asarray(X, dtype=float)
    S = X.sum(axis=0)
    if np.any(S <= 0):
        raise ValueError(f"zero-count columns at {np.flatnonzero(S <= 0).tolist()}")
    return X / S


def batch_iter(corpus, batch_size, seed=0, shuffle=True):
    """Yield :class:`DocBatch` objects covering every document once."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    D = corpus.n_docs
    if batch_size > D:
        raise ValueError(f"batch_size {batch_size} exceeds corpus size {D}")
    order = np.random.default_rng(seed).permutation(D) if shuffle else np.arange(D)
    for start in range(0, D, batch_size):
        ids = order[start:start + batch_size]
        X = corpus.dense(ids)
        yield DocBatch(X=X, Xnorm=normalize_batch(X), doc_ids=ids)


def split_indices(n_docs, train_fraction, seed=0):
    """Sorted train and test document indices for a random partition."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(round(train_fraction * n_docs))
    if n_train == 0 or n_train == n_docs:
        raise ValueError(f"train_fraction {train_fraction} leaves an empty split of {n_docs} documents")
    perm = np.random.default_rng(seed).permutation(n_docs)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(corpus, train_fraction, seed=0):
    """Random disjoint train/test partition of the documents."""
    train_ids, test_ids = split_indices(corpus.n_docs, train_fraction, seed)
    return corpus.subset(train_ids), corpus.subset(test_ids)
