"""Planted-topic corpora with known word and topic geometry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .corpus import BowCorpus, Vocabulary
from .embeddings import WordEmbeddings


@dataclass
class PlantedCorpus:
    corpus: BowCorpus
    words: WordEmbeddings
    centers: np.ndarray      # L x T unit topic centers
    word_topic: np.ndarray   # planted topic of each word
    mixtures: np.ndarray     # T x D document proportions


def _rotate_towards(center, cos, rng):
    noise = rng.standard_normal(center.size)
    noise -= (noise @ center) * center
    noise /= np.linalg.norm(noise)
    return cos * center + np.sqrt(1.0 - cos**2) * noise


def planted_corpus(
    n_topics=5, words_per_topic=20, dim=16, n_docs=2000, doc_length=50,
    max_center_cos=0.2, min_word_cos=0.9, concentration=0.1, seed=0,
):
    """Sample a corpus whose topics are clusters in embedding space.

    Topic centers are unit vectors with pairwise ``|cos| <= max_center_cos``;
    each topic owns ``words_per_topic`` words whose embeddings have cosine
    in ``[min_word_cos, 1)`` to its center. Each document mixes topics with
    Dirichlet(``concentration``) weights; each of its ``doc_length`` tokens
    picks a topic from the mixture and then a word from that topic's
    Dirichlet(1) word distribution. Labels are the dominant planted topic.
    """
    if n_topics > dim:
        raise ValueError("need dim >= n_topics for well-separated centers")
    rng = np.random.default_rng(seed)

    while True:
        C = rng.standard_normal((dim, n_topics))
        C /= np.linalg.norm(C, axis=0)
        cos = C.T @ C
        if np.all(np.abs(cos[~np.eye(n_topics, dtype=bool)]) <= max_center_cos):
            break

    V = n_topics * words_per_topic
    word_topic = np.repeat(np.arange(n_topics), words_per_topic)
    E = np.empty((dim, V))
    for v in range(V):
        c = rng.uniform(min_word_cos, 0.99)
        E[:, v] = _rotate_towards(C[:, word_topic[v]], c, rng)

    topic_words = rng.dirichlet(np.ones(words_per_topic), size=n_topics)
    mixtures = rng.dirichlet(np.full(n_topics, concentration), size=n_docs).T
    counts = np.zeros((V, n_docs), dtype=np.int64)
    for d in range(n_docs):
        tok_topics = rng.choice(n_topics, size=doc_length, p=mixtures[:, d])
        for t in range(n_topics):
            n = int(np.sum(tok_topics == t))
            if n:
                counts[t * words_per_topic:(t + 1) * words_per_topic, d] += rng.multinomial(n, topic_words[t])

    vocab = Vocabulary.from_tokens(
        f"t{t}w{w:02d}" for t in range(n_topics) for w in range(words_per_topic)
    )
    labels = np.argmax(mixtures, axis=0)
    corpus = BowCorpus(sp.csc_matrix(counts), vocab, labels)
    return PlantedCorpus(corpus, WordEmbeddings(E), C, word_topic, mixtures)
