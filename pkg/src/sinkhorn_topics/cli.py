"""Command-line interface.

Subcommands: ``ingest``, ``train``, ``infer``, ``topics``, ``eval``,
``verify``. Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numerical failure, 4 verification failure.

A training run directory holds ``config.txt`` (the effective
configuration), ``train_log.tsv`` (per-epoch losses, deterministic),
``timing.tsv`` (per-epoch wall seconds) and ``model/``.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .artifact import ArtifactError, load_model, save_model, write_matrix
from .config import ConfigError, format_config, load_config, train_config
from .corpus import (
    CorpusFormatError, ingest_text, load_bow, load_corpus, load_labels, load_vocab,
    normalize_batch, save_corpus, split,
)
from .embeddings import EmbeddingFormatError, load_word_vectors
from .evaluation import (
    cluster_scores, coherence_curve, diversity_curve, kmeans, top_topic_assign, topic_npmi_scores,
)
from .model import infer, top_words, train
from .ot import NumericalError
from .seeding import component_seed
from .verify import SUITES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3, 4

LOG_HEADER = "epoch\ttotal\tlikelihood\tsinkhorn\tmean_distance\n"

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(msg=""):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def cmd_ingest(args):
    out = Path(args.out)
    if args.mtx:
        if not args.vocab:
            raise UsageError("--mtx needs --vocab")
        corpus = load_bow(args.mtx, load_vocab(args.vocab), args.labels)
    else:
        if not args.text:
            raise UsageError("give either --text or --mtx/--vocab")
        with open(args.text, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        stop = ()
        if args.stopwords:
            stop = Path(args.stopwords).read_text(encoding="utf-8").split()
        labels = load_labels(args.labels) if args.labels else None
        corpus = ingest_text(lines, min_df=args.min_df, stopwords=stop, labels=labels)

    if args.test_fraction:
        train_part, test_part = split(corpus, 1.0 - args.test_fraction, seed=args.seed)
        save_corpus(out / "train", train_part)
        save_corpus(out / "test", test_part)
        parts = {"train": train_part, "test": test_part}
    else:
        save_corpus(out, corpus)
        parts = {"corpus": corpus}
    for name, c in parts.items():
        _out(f"{name}: V={c.n_words} D={c.n_docs} tokens={int(c.doc_lengths().sum())}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _log_line(rec):
    return f"{rec.epoch}\t{rec.total!r}\t{rec.likelihood!r}\t{rec.sinkhorn!r}\t{rec.mean_distance!r}\n"


def _resolve_config(args):
    overrides = list(args.set or [])
    for key in ("corpus", "embeddings", "out", "seed", "epochs", "K"):
        value = getattr(args, key, None)
        if value is not None:
            overrides.append(f"{key} = {value}")
    return load_config(args.config, overrides)


def cmd_train(args):
    cfg = _resolve_config(args)
    tcfg = train_config(cfg)
    if not cfg["corpus"]:
        raise UsageError("no corpus given (set corpus = DIR or pass --corpus)")
    if not cfg["embeddings"]:
        raise UsageError("no embeddings given (set embeddings = FILE or pass --embeddings)")
    for key in ("corpus", "embeddings"):
        if not Path(cfg[key]).exists():
            raise DataError(f"{key} path does not exist: {cfg[key]}")

    corpus = load_corpus(cfg["corpus"])
    words = load_word_vectors(
        cfg["embeddings"], corpus.vocab, cfg["embedding_dim"],
        oov_seed=component_seed(cfg["seed"], "oov-fill"),
    )

    run_dir = Path(cfg["out"])
    run_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{run_dir.name}.", dir=run_dir.parent))
    try:
        (tmp / "config.txt").write_text(format_config(cfg), encoding="utf-8")
        with open(tmp / "train_log.tsv", "w", encoding="utf-8") as log, \
                open(tmp / "timing.tsv", "w", encoding="utf-8") as timing:
            log.write(LOG_HEADER)
            timing.write("epoch\tseconds\n")

            def on_epoch(rec):
                log.write(_log_line(rec))
                log.flush()
                timing.write(f"{rec.epoch}\t{rec.seconds:.3f}\n")
                _out(
                    f"epoch {rec.epoch:3d}  loss {rec.total:.6f}  likelihood {rec.likelihood:.6f}  "
                    f"sinkhorn {rec.sinkhorn:.6f}  distance {rec.mean_distance:.6f}  {rec.seconds:.2f}s"
                )

            model = train(corpus, words, tcfg, callback=on_epoch)
        save_model(model, tmp / "model")
        if run_dir.exists():
            shutil.rmtree(run_dir)
        tmp.replace(run_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _out(f"model written to {run_dir / 'model'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer / topics
# ---------------------------------------------------------------------------


def _corpus_for_model(model, corpus_dir):
    corpus = load_corpus(corpus_dir)
    if corpus.vocab.tokens != model.vocab.tokens:
        raise DataError(
            f"vocabulary of {corpus_dir} ({len(corpus.vocab)} tokens) does not match the "
            f"model vocabulary ({len(model.vocab)} tokens)"
        )
    if corpus.n_docs == 0:
        raise DataError(f"{corpus_dir}: corpus has no documents")
    return corpus


def _infer_all(model, corpus, chunk=2000):
    out = []
    for start in range(0, corpus.n_docs, chunk):
        ids = np.arange(start, min(start + chunk, corpus.n_docs))
        out.append(infer(model, normalize_batch(corpus.dense(ids))))
    return np.hstack(out)


def cmd_infer(args):
    model = load_model(args.model)
    corpus = _corpus_for_model(model, args.corpus)
    Z = _infer_all(model, corpus)
    with open(args.out, "w", encoding="utf-8") as fh:
        for col in Z.T:
            fh.write("\t".join(f"{p:.10f}" for p in col) + "\n")
    _out(f"wrote {Z.shape[1]} x {Z.shape[0]} topic proportions to {args.out}")
    return EXIT_OK


def cmd_topics(args):
    model = load_model(args.model)
    for k in range(model.K):
        ranked = top_words(model, k, args.n, with_costs=True)
        _out(f"{k}\t" + " ".join(f"{w}:{m:.4f}" for w, m in ranked))
    write_matrix(args.export, model.topics.G)
    print(f"topic embeddings ({model.topics.dim} x {model.K}) exported to {args.export}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _fmt(x):
    return f"{x:.6f}"


def cmd_eval(args):
    cfg = load_config(args.config, args.set or [])
    model = load_model(args.model)
    corpus = _corpus_for_model(model, args.corpus)
    reference = load_corpus(args.reference) if args.reference else corpus

    clustering = args.clustering
    if clustering is None:
        clustering = corpus.labels is not None
    if clustering and corpus.labels is None:
        raise DataError(f"clustering metrics requested but {args.corpus} has no labels.txt")

    props = cfg["proportions"]
    V = len(model.vocab)
    npmi_n, td_n = min(cfg["npmi_top_n"], V), min(cfg["td_top_n"], V)
    if (npmi_n, td_n) != (cfg["npmi_top_n"], cfg["td_top_n"]):
        logger.warning("vocabulary of %d words caps the top-word lists", V)
    scores = topic_npmi_scores(model, reference, npmi_n, cfg["npmi_smoothing"])
    tc = coherence_curve(scores, props)
    td = diversity_curve(model, scores, props, td_n)

    lines = [
        "[summary]",
        f"model = {args.model}",
        f"corpus = {args.corpus}",
        f"reference = {args.reference or args.corpus}",
        f"n_docs = {corpus.n_docs}",
        f"K = {model.K}",
        "",
        "[coherence]",
        f"npmi_top_n = {npmi_n}",
        f"npmi_smoothing = {cfg['npmi_smoothing']!r}",
        f"mean_npmi_all_topics = {_fmt(float(np.mean(scores)))}",
        "",
        "[diversity]",
        f"td_top_n = {td_n}",
        "",
        "[curves]",
        "proportion\tTC\tTD",
        *(f"{p!r}\t{_fmt(a)}\t{_fmt(b)}" for p, a, b in zip(props, tc, td)),
    ]
    if clustering:
        Z = _infer_all(model, corpus)
        top = cluster_scores(top_topic_assign(Z), corpus.labels)
        lines += [
            "",
            "[top_clustering]",
            f"top_purity = {_fmt(top.purity)}",
            f"top_nmi = {_fmt(top.nmi)}",
            "",
            "[kmeans]",
            "k\tkm_purity\tkm_nmi",
        ]
        for k in cfg["kmeans_k"]:
            if k > corpus.n_docs:
                lines.append(f"{k}\tnan\tnan")
                logger.warning("skipping k=%d: only %d documents", k, corpus.n_docs)
                continue
            assign, _ = kmeans(Z.T, k, seed=component_seed(cfg["seed"], f"kmeans-{k}"),
                               max_iter=cfg["kmeans_max_iter"])
            res = cluster_scores(assign, corpus.labels)
            lines.append(f"{k}\t{_fmt(res.purity)}\t{_fmt(res.nmi)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args):
    suite = SUITES[args.suite]
    kwargs = {"seed": args.seed}
    if args.trials is not None:
        kwargs["trials"] = args.trials
    report = suite(**kwargs)
    for line in report.lines():
        _out(line)
    return EXIT_OK if report.passed else EXIT_VERIFY


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="sinkhorn-topics", description="Optimal-transport neural topic model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="build a corpus directory from raw text or Matrix Market")
    s.add_argument("out", help="output corpus directory")
    s.add_argument("--text", help="raw text, one document per line")
    s.add_argument("--mtx", help="V x D integer Matrix Market counts")
    s.add_argument("--vocab", help="vocabulary file for --mtx")
    s.add_argument("--labels", help="one integer label per document")
    s.add_argument("--stopwords", help="whitespace-separated stopword file")
    s.add_argument("--min-df", type=int, default=1)
    s.add_argument("--test-fraction", type=float, default=0.0,
                   help="also split into train/ and test/ subdirectories")
    s.add_argument("--seed", type=int, default=0, help="seed for the train/test split")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train a model; writes a run directory")
    s.add_argument("--config", help="key = value config file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    s.add_argument("--corpus")
    s.add_argument("--embeddings")
    s.add_argument("--out", help="run directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("-K", type=int, dest="K")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="topic proportions for every document")
    s.add_argument("model")
    s.add_argument("corpus")
    s.add_argument("out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("topics", help="list top words per topic and export G")
    s.add_argument("model")
    s.add_argument("-n", type=int, default=10)
    s.add_argument("--export", default="topic_embeddings.bin",
                   help="path for the exported L x K topic embeddings (default: %(default)s)")
    s.set_defaults(func=cmd_topics)

    s = sub.add_parser("eval", help="coherence, diversity and clustering report")
    s.add_argument("model")
    s.add_argument("corpus")
    s.add_argument("--reference", help="corpus for NPMI co-occurrence (default: the evaluated corpus)")
    s.add_argument("--out", help="also write the report here")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--clustering", dest="clustering", action="store_true", default=None)
    g.add_argument("--no-clustering", dest="clustering", action="store_false")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify", help="run a property suite")
    s.add_argument("suite", choices=sorted(SUITES))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, CorpusFormatError, EmbeddingFormatError, ArtifactError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
