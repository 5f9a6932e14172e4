"""
Recovering planted topics
=========================

Generate a corpus whose five topics are clusters in a 16-dimensional
embedding space, train the model on it, and compare what it learned with
what was planted.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from sinkhorn_topics.corpus import normalize_batch, split
from sinkhorn_topics.embeddings import cosine_matrix
from sinkhorn_topics.evaluation import cluster_scores, top_topic_assign
from sinkhorn_topics.model import TrainConfig, infer, top_words, train
from sinkhorn_topics.synthetic import planted_corpus

pc = planted_corpus(n_topics=5, words_per_topic=20, n_docs=2000, seed=0)
train_part, test_part = split(pc.corpus, 0.8, seed=0)
print(f"{train_part.n_docs} training and {test_part.n_docs} test documents, V = {pc.corpus.n_words}")

###############################################################################
# Train with the default temperature and likelihood weight. The log shows
# the joint loss, its two parts, and the mean transport cost per epoch.

model = train(train_part, pc.words, TrainConfig(K=5, epochs=50, seed=0))
for rec in model.train_log[::10] + [model.train_log[-1]]:
    print(f"epoch {rec.epoch:2d}  loss {rec.total:.4f}  sinkhorn {rec.sinkhorn:.4f}  "
          f"log-lik {rec.likelihood:.4f}  distance {rec.mean_distance:.4f}")

###############################################################################
# Match learned topic embeddings to the planted centers. Word tokens are
# named ``t{topic}w{index}``, so a clean topic lists words of one prefix.

C = cosine_matrix(pc.centers, model.topics.G)
planted, learned = linear_sum_assignment(-C)
for t, k in zip(planted, learned):
    print(f"planted {t} <-> learned {k}  cos {C[t, k]:.3f}  top words: {' '.join(top_words(model, k, 6))}")

###############################################################################
# Cluster held-out documents by their largest topic.

Z = infer(model, normalize_batch(test_part.dense()))
res = cluster_scores(top_topic_assign(Z), test_part.labels)
print(f"\ntest purity {res.purity:.3f}, NMI {res.nmi:.3f}")
