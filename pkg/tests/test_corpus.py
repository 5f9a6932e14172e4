import tempfile
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from sinkhorn_topics.corpus import (
    BowCorpus, CorpusFormatError, Vocabulary, batch_iter, ingest_text, load_bow, load_corpus,
    load_vocab, normalize_batch, read_matrix_market, save_corpus, split, split_indices,
    write_matrix_market,
)


def make_corpus(D=5, V=4, seed=0, labels=True):
    rng = np.random.default_rng(seed)
    counts = rng.integers(0, 4, size=(V, D))
    counts[0] += 1  # no empty documents
    vocab = Vocabulary.from_tokens([f"w{i}" for i in range(V)])
    return BowCorpus(sp.csc_matrix(counts), vocab, np.arange(D) % 2 if labels else None)


class TestVocabulary:
    def test_ids_follow_file_order(self, tmp_path):
        p = tmp_path / "vocab.txt"
        p.write_text("apple\nbanana\n")
        v = load_vocab(p)
        assert v.index == {"apple": 0, "banana": 1}
        assert len(v) == 2 and v[1] == "banana"

    def test_duplicate_names_second_line(self, tmp_path):
        p = tmp_path / "vocab.txt"
        p.write_text("apple\nbanana\napple\n")
        with pytest.raises(CorpusFormatError, match=r":3: duplicate token 'apple'"):
            load_vocab(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "vocab.txt"
        p.write_text("")
        with pytest.raises(CorpusFormatError, match="empty"):
            load_vocab(p)

    def test_size_matches_line_count(self, tmp_path):
        p = tmp_path / "vocab.txt"
        p.write_text("".join(f"tok{i}\n" for i in range(2263)))
        assert len(load_vocab(p)) == 2263


class TestMatrixMarket:
    def test_direct_parse(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 3\n2 2 2\n")
        np.testing.assert_array_equal(read_matrix_market(p).toarray(), [[3, 0], [0, 2]])

    def test_negative_value(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 3\n2 2 -1\n")
        with pytest.raises(CorpusFormatError, match=":4:"):
            read_matrix_market(p)

    def test_non_integer_value(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2.5\n")
        with pytest.raises(CorpusFormatError):
            read_matrix_market(p)

    def test_index_out_of_range(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 1\n")
        with pytest.raises(CorpusFormatError):
            read_matrix_market(p)

    def test_empty_document_rejected(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate integer general\n2 3 2\n1 1 3\n2 3 2\n")
        vocab = Vocabulary.from_tokens(["a", "b"])
        with pytest.raises(CorpusFormatError, match=r"\[1\]"):
            load_bow(p, vocab)

    def test_vocab_row_mismatch(self, tmp_path):
        p = tmp_path / "c.mtx"
        p.write_text("%%MatrixMarket matrix coordinate integer general\n2 1 1\n1 1 3\n")
        with pytest.raises(CorpusFormatError, match="rows"):
            load_bow(p, Vocabulary.from_tokens(["a", "b", "c"]))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_round_trip_is_byte_identical(self, V, D, seed):
        rng = np.random.default_rng(seed)
        A = sp.csc_matrix(rng.integers(0, 3, size=(V, D)) * (rng.random((V, D)) < 0.5))
        with tempfile.TemporaryDirectory() as d:
            p1, p2 = Path(d) / "a.mtx", Path(d) / "b.mtx"
            write_matrix_market(p1, A)
            B = read_matrix_market(p1)
            write_matrix_market(p2, B)
            np.testing.assert_array_equal(B.toarray(), A.toarray())
            assert p1.read_bytes() == p2.read_bytes()


class TestCorpusDirectory:
    def test_round_trip(self, tmp_path):
        c = make_corpus()
        save_corpus(tmp_path, c)
        c2 = load_corpus(tmp_path)
        np.testing.assert_array_equal(c2.dense(), c.dense())
        np.testing.assert_array_equal(c2.labels, c.labels)
        assert c2.vocab.tokens == c.vocab.tokens

    def test_unlabeled(self, tmp_path):
        save_corpus(tmp_path, make_corpus(labels=False))
        assert load_corpus(tmp_path).labels is None

    def test_label_count_mismatch(self):
        c = make_corpus()
        with pytest.raises(CorpusFormatError):
            BowCorpus(c.counts, c.vocab, np.zeros(3, dtype=int))


class TestIngestText:
    def test_counts(self):
        c = ingest_text(["the cat sat", "The dog\tthe  cat"])
        assert c.vocab.tokens == ("cat", "dog", "sat", "the")
        np.testing.assert_array_equal(c.dense(), [[1, 1], [0, 1], [1, 0], [1, 2]])

    def test_min_df_and_stopwords(self):
        c = ingest_text(["a b c", "a b", "a"], min_df=2, stopwords={"a"})
        assert c.vocab.tokens == ("b",)
        assert c.n_docs == 2

    def test_min_df_empties_vocabulary(self):
        with pytest.raises(CorpusFormatError, match="empty"):
            ingest_text(["a b", "c d"], min_df=3)

    def test_labels_follow_kept_documents(self):
        c = ingest_text(["x y", "zz", "x"], min_df=2, labels=[4, 5, 6])
        np.testing.assert_array_equal(c.labels, [4, 6])


class TestNormalize:
    @pytest.mark.parametrize("col, expected", [
        ([2, 2, 0, 0], [0.5, 0.5, 0, 0]),
        ([1, 0, 0, 0], [1, 0, 0, 0]),
        ([3, 1, 1, 1, 1, 1, 1, 1], [0.3] + [0.1] * 7),
    ])
    def test_columns(self, col, expected):
        np.testing.assert_allclose(normalize_batch(np.array(col)[:, None])[:, 0], expected, rtol=1e-15)

    def test_zero_column(self):
        with pytest.raises(ValueError):
            normalize_batch(np.array([[1, 0], [2, 0]]))


class TestBatching:
    def test_partition_sizes(self):
        sizes = [b.X.shape[1] for b in batch_iter(make_corpus(D=5), 2, seed=0)]
        assert sizes == [2, 2, 1]

    def test_unshuffled_order(self):
        ids = np.concatenate([b.doc_ids for b in batch_iter(make_corpus(D=7), 3, shuffle=False)])
        np.testing.assert_array_equal(ids, np.arange(7))

    def test_seeded_determinism(self):
        c = make_corpus(D=9)
        a = [b.Xnorm.tobytes() for b in batch_iter(c, 4, seed=3)]
        b = [b.Xnorm.tobytes() for b in batch_iter(c, 4, seed=3)]
        assert a == b

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000))
    def test_covers_each_document_once(self, D, size, seed):
        c = make_corpus(D=D)
        if size > D:
            with pytest.raises(ValueError):
                list(batch_iter(c, size))
            return
        batches = list(batch_iter(c, size, seed=seed))
        ids = np.concatenate([b.doc_ids for b in batches])
        np.testing.assert_array_equal(np.sort(ids), np.arange(D))
        for b in batches:
            np.testing.assert_allclose(b.Xnorm.sum(axis=0), 1.0)


class TestSplit:
    def test_sizes(self):
        tr, te = split_indices(10, 0.8, seed=0)
        assert (tr.size, te.size) == (8, 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 200), st.floats(0.05, 0.95), st.integers(0, 1000))
    def test_partition(self, D, frac, seed):
        try:
            tr, te = split_indices(D, frac, seed)
        except ValueError:
            return
        assert np.intersect1d(tr, te).size == 0
        np.testing.assert_array_equal(np.union1d(tr, te), np.arange(D))
        tr2, te2 = split_indices(D, frac, seed)
        np.testing.assert_array_equal(tr, tr2)

    def test_split_corpus_keeps_labels(self):
        c = make_corpus(D=10)
        tr, te = split(c, 0.7, seed=1)
        assert tr.n_docs + te.n_docs == 10
        assert tr.labels.size == tr.n_docs
