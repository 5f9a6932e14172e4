"""The topic model: an encoder producing topic proportions, a cost matrix
from word/topic embeddings, and a loss combining the Sinkhorn transport
cost with the likelihood under the embedding-induced decoder.

All gradients are written out by hand; nothing here relies on autodiff.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import log_softmax, softmax

from .corpus import batch_iter, DocBatch, normalize_batch
from .embeddings import cost_matrix, cost_matrix_grad_G, init_topic_embeddings, TopicEmbeddings
from .ot import NumericalError, sinkhorn_backward, sinkhorn_batch, SinkhornConfig
from .seeding import component_rng, component_seed

logger = logging.getLogger(__name__)

ENCODER_PARAMS = ("W1", "b1", "bn_gamma", "bn_beta", "W2", "b2")
BN_STATS = ("bn_running_mean", "bn_running_var")


@dataclass
class EncoderParams:
    W1: np.ndarray
    b1: np.ndarray
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_running_mean: np.ndarray
    bn_running_var: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    dropout_rate: float = 0.75
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    @property
    def n_words(self):
        return self.W1.shape[1]

    @property
    def hidden(self):
        return self.W1.shape[0]

    @property
    def K(self):
        return self.W2.shape[0]

    def arrays(self):
        return {name: getattr(self, name) for name in ENCODER_PARAMS + BN_STATS}

    def copy(self):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in ENCODER_PARAMS + BN_STATS:
            kw[name] = kw[name].copy()
        return EncoderParams(**kw)


def init_encoder(V, K, hidden=200, seed=0, dropout_rate=0.75, bn_momentum=0.99, bn_eps=1e-3):
    """Fan-scaled uniform weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        a = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-a, a, size=(rows, cols))

    return EncoderParams(
        W1=glorot(hidden, V), b1=np.zeros(hidden),
        bn_gamma=np.ones(hidden), bn_beta=np.zeros(hidden),
        bn_running_mean=np.zeros(hidden), bn_running_var=np.ones(hidden),
        W2=glorot(K, hidden), b2=np.zeros(K),
        dropout_rate=dropout_rate, bn_momentum=bn_momentum, bn_eps=bn_eps,
    )


@dataclass
class EncoderCache:
    X: np.ndarray
    h1: np.ndarray
    mask: np.ndarray | None
    xhat: np.ndarray
    inv_std: np.ndarray
    Z: np.ndarray
    mode: str


def encoder_forward(Xnorm, params, mode="infer", seed=None, update_stats=True):
    """Map normalized documents (V x B) to topic proportions (K x B).

    linear -> ReLU -> dropout -> batch norm -> linear -> softmax.

    In ``"train"`` mode dropout masks are drawn from ``seed`` (an int or a
    ``numpy.random.Generator``), batch norm uses batch statistics and, if
    ``update_stats``, folds them into the running averages. ``"infer"``
    mode is deterministic.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    X = np.asarray(Xnorm, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != params.n_words:
        raise ValueError(f"input has {X.shape[0]} words, encoder expects {params.n_words}")
    B = X.shape[1]

    h1 = params.W1 @ X + params.b1[:, None]
    a = np.maximum(h1, 0.0)
    mask = None
    if mode == "train":
        if B < 2:
            raise ValueError("train mode needs a batch of at least 2 documents for batch statistics")
        if params.dropout_rate > 0:
            rng = np.random.default_rng(seed)
            keep = 1.0 - params.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        mu = a.mean(axis=1)
        var = a.var(axis=1)
        if update_stats:
            m = params.bn_momentum
            params.bn_running_mean = m * params.bn_running_mean + (1 - m) * mu
            params.bn_running_var = m * params.bn_running_var + (1 - m) * var
    else:
        mu, var = params.bn_running_mean, params.bn_running_var
    inv_std = 1.0 / np.sqrt(var + params.bn_eps)
    xhat = (a - mu[:, None]) * inv_std[:, None]
    y = params.bn_gamma[:, None] * xhat + params.bn_beta[:, None]
    logits = params.W2 @ y + params.b2[:, None]
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite encoder activations")
    Z = softmax(logits, axis=0)
    return Z, EncoderCache(X=X, h1=h1, mask=mask, xhat=xhat, inv_std=inv_std, Z=Z, mode=mode)


def encoder_backward(grad_Z, cache, params):
    """Gradients of a scalar loss w.r.t. the trainable encoder parameters."""
    Z = cache.Z
    g_logits = Z * (grad_Z - np.sum(Z * grad_Z, axis=0))
    y = params.bn_gamma[:, None] * cache.xhat + params.bn_beta[:, None]
    grads = {"W2": g_logits @ y.T, "b2": g_logits.sum(axis=1)}
    g_y = params.W2.T @ g_logits
    grads["bn_gamma"] = np.sum(g_y * cache.xhat, axis=1)
    grads["bn_beta"] = g_y.sum(axis=1)
    g_xhat = g_y * params.bn_gamma[:, None]
    if cache.mode == "train":
        B = g_xhat.shape[1]
        g_a = (cache.inv_std[:, None] / B) * (
            B * g_xhat
            - g_xhat.sum(axis=1, keepdims=True)
            - cache.xhat * np.sum(g_xhat * cache.xhat, axis=1, keepdims=True)
        )
    else:
        g_a = g_xhat * cache.inv_std[:, None]
    if cache.mask is not None:
        g_a = g_a * cache.mask
    g_h1 = g_a * (cache.h1 > 0)
    grads["W1"] = g_h1 @ cache.X.T
    grads["b1"] = g_h1.sum(axis=1)
    return grads


def virtual_decoder(M, Z):
    """Word distributions ``softmax((2 - M) z)`` for each column of ``Z``."""
    M = np.asarray(M, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if M.shape[1] != Z.shape[0]:
        raise ValueError(f"cost matrix is {M.shape}, topic proportions are {Z.shape}")
    return softmax((2.0 - M) @ Z, axis=0)


@dataclass
class LossResult:
    total: float
    likelihood_term: float
    sinkhorn_term: float
    doc_costs: np.ndarray
    Phi: np.ndarray
    state: object


def joint_loss(Xnorm, Z, M, epsilon, cfg=SinkhornConfig()):
    """Batch-mean of ``sinkhorn(x, z) - epsilon * x^T log phi(z)``.

    ``likelihood_term`` is the batch-mean of ``x^T log phi(z)`` (a
    log-likelihood, so nonpositive) and ``sinkhorn_term`` the batch-mean
    transport cost.
    """
    Xnorm = np.asarray(Xnorm, dtype=float)
    if Xnorm.ndim == 1:
        Xnorm = Xnorm[:, None]
    costs, state = sinkhorn_batch(Xnorm, Z, M, cfg)
    logits = (2.0 - np.asarray(M)) @ np.asarray(Z).reshape(M.shape[1], -1)
    logphi = log_softmax(logits, axis=0)
    lik = float(np.mean(np.sum(Xnorm * logphi, axis=0)))
    sk = float(np.mean(costs))
    return LossResult(
        total=sk - epsilon * lik, likelihood_term=lik, sinkhorn_term=sk,
        doc_costs=costs, Phi=np.exp(logphi), state=state,
    )


def backward(loss, enc_cache, params, E, G, epsilon, upstream=1.0):
    """Reverse pass of :func:`joint_loss` composed with the encoder and
    the cost-matrix construction.

    Returns
    -------
    grads : dict
        Encoder parameter gradients keyed by name, plus ``"G"``.
    """
    if loss is None or enc_cache is None:
        raise ValueError("forward caches are required for the backward pass")
    Xnorm = enc_cache.X
    Z = enc_cache.Z
    M = loss.state.M
    B = Xnorm.shape[1]
    g_cost = np.full(B, upstream / B)
    grad_Z, grad_M = sinkhorn_backward(loss.state, g_cost)
    if epsilon != 0:
        # d/dA of -eps * mean_b x_b^T log softmax(A_b), with A = (2 - M) Z
        g_A = -(epsilon * upstream / B) * (Xnorm - loss.Phi)
        grad_Z = grad_Z + (2.0 - M).T @ g_A
        grad_M = grad_M - g_A @ Z.T
    grads = encoder_backward(grad_Z, enc_cache, params)
    grads["G"] = cost_matrix_grad_G(E, G, grad_M)
    return grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of the arrays in ``params``."""
    state.t += 1
    t = state.t
    updates = {}
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        step = lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
        if not np.all(np.isfinite(step)):
            raise NumericalError(f"non-finite Adam update for {name}")
        updates[name] = (m, v, step)
    for name, (m, v, step) in updates.items():
        state.m[name] = m
        state.v[name] = v
        params[name] -= step
    return params, state


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    K: int = 100
    epsilon: float = 0.07
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    lr: float = 0.001
    batch_size: int = 200
    epochs: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    hidden: int = 200
    dropout_rate: float = 0.75
    dropout_is_keep_prob: bool = False
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3
    track_distance: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def drop_probability(self):
        return 1.0 - self.dropout_rate if self.dropout_is_keep_prob else self.dropout_rate


@dataclass
class EpochRecord:
    epoch: int
    total: float
    likelihood: float
    sinkhorn: float
    mean_distance: float
    seconds: float


@dataclass
class TopicModel:
    encoder: EncoderParams
    topics: TopicEmbeddings
    words: object
    vocab: object
    config: TrainConfig | None = None
    train_log: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    @property
    def K(self):
        return self.topics.K

    @property
    def M(self):
        return cost_matrix(self.words, self.topics)


def _epoch_batches(corpus, batch_size, seed):
    batches = list(batch_iter(corpus, batch_size, seed=seed, shuffle=True))
    if len(batches) > 1 and batches[-1].X.shape[1] == 1:
        # Batch norm cannot train on one document; fold it into the previous batch.
        tail = batches.pop()
        prev = batches[-1]
        X = np.hstack([prev.X, tail.X])
        batches[-1] = DocBatch(X=X, Xnorm=normalize_batch(X), doc_ids=np.concatenate([prev.doc_ids, tail.doc_ids]))
    return batches


def mean_sinkhorn_distance(model, corpus, batch_size=1000, cfg=None):
    """Average transport cost between inferred topics and word
    distributions over every document of ``corpus``."""
    cfg = cfg or (model.config.sinkhorn if model.config else SinkhornConfig())
    cfg = SinkhornConfig(alpha=cfg.alpha, max_iter=cfg.max_iter, tol=cfg.tol, unroll_cap=0)
    M = model.M
    total = 0.0
    for batch in batch_iter(corpus, min(batch_size, corpus.n_docs), shuffle=False):
        Z = infer(model, batch.Xnorm)
        total += float(np.sum(sinkhorn_batch(batch.Xnorm, Z, M, cfg)[0]))
    return total / corpus.n_docs


def train(corpus, words, cfg, callback=None):
    """Fit encoder and topic embeddings jointly with Adam.

    Parameters
    ----------
    corpus : BowCorpus
    words : WordEmbeddings
        Frozen, one column per vocabulary word.
    cfg : TrainConfig
    callback : callable, optional
        Called with each :class:`EpochRecord` as it is produced.
    """
    V = corpus.n_words
    if V < 8:
        raise ValueError(f"vocabulary size {V} < 8")
    if words.n_words != V:
        raise ValueError(f"word embeddings cover {words.n_words} words, corpus has {V}")

    encoder = init_encoder(
        V, cfg.K, hidden=cfg.hidden, seed=component_seed(cfg.seed, "encoder-init"),
        dropout_rate=cfg.drop_probability, bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps,
    )
    topics = init_topic_embeddings(cfg.K, words.dim, component_seed(cfg.seed, "topic-init"))
    model = TopicModel(encoder=encoder, topics=topics, words=words, vocab=corpus.vocab, config=cfg)

    dropout_rng = component_rng(cfg.seed, "dropout")
    repair_rng = component_rng(cfg.seed, "topic-repair")
    batch_seeds = component_rng(cfg.seed, "batching")
    adam = AdamState()
    params = {name: getattr(encoder, name) for name in ENCODER_PARAMS}
    params["G"] = topics.G

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        n_seen = 0
        batches = _epoch_batches(corpus, min(cfg.batch_size, corpus.n_docs), int(batch_seeds.integers(2**63)))
        for step, batch in enumerate(batches):
            try:
                M = cost_matrix(words, topics)
                Z, cache = encoder_forward(batch.Xnorm, encoder, "train", seed=dropout_rng)
                loss = joint_loss(batch.Xnorm, Z, M, cfg.epsilon, cfg.sinkhorn)
                grads = backward(loss, cache, encoder, words, topics, cfg.epsilon)
                adam_step(params, grads, adam, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            except (NumericalError, ValueError) as exc:
                raise type(exc)(f"epoch {epoch}, batch {step}: {exc}") from exc
            topics.repair_zero_columns(repair_rng)
            b = batch.X.shape[1]
            sums += b * np.array([loss.total, loss.likelihood_term, loss.sinkhorn_term])
            n_seen += b
        total, lik, sk = sums / n_seen
        dist = mean_sinkhorn_distance(model, corpus) if cfg.track_distance else float("nan")
        record = EpochRecord(epoch, float(total), float(lik), float(sk), float(dist), time.perf_counter() - t0)
        model.train_log.append(record)
        logger.info("epoch %d: loss %.6f likelihood %.6f sinkhorn %.6f distance %.6f",
                    epoch, total, lik, sk, dist)
        if callback is not None:
            callback(record)
    return model


def infer(model, Xnorm):
    """Topic proportions for normalized documents, deterministic."""
    Xnorm = np.asarray(Xnorm, dtype=float)
    if Xnorm.ndim == 1:
        Xnorm = Xnorm[:, None]
    if Xnorm.shape[0] != model.encoder.n_words:
        raise ValueError(f"documents have {Xnorm.shape[0]} words, model vocabulary has {model.encoder.n_words}")
    return encoder_forward(Xnorm, model.encoder, "infer")[0]


def top_words(model, topic_k, n=10, with_costs=False):
    """The ``n`` words closest to topic ``topic_k`` (smallest cost first)."""
    if not 0 <= topic_k < model.K:
        raise IndexError(f"topic {topic_k} out of range for K={model.K}")
    col = model.M[:, topic_k]
    if not 0 <= n <= col.size:
        raise ValueError(f"n must lie in [0, {col.size}], got {n}")
    order = np.argsort(col, kind="stable")[:n]
    tokens = [model.vocab[i] for i in order]
    if with_costs:
        return list(zip(tokens, col[order].tolist()))
    return tokens
