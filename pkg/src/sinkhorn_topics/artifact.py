"""On-disk model directories.

A model directory holds ``manifest.txt`` (``key = value`` lines),
``vocab.txt`` and one ``<name>.bin`` file per parameter matrix. A matrix
file is an 8-byte magic, the row and column counts as little-endian
uint64, then the entries as little-endian float64 in row-major order.
Vectors are stored as n x 1 matrices.
"""

from __future__ import annotations

import os
import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np

from .corpus import load_vocab
from .embeddings import TopicEmbeddings, WordEmbeddings
from .model import EncoderParams, TopicModel

MAGIC = b"STMATF64"
FORMAT_VERSION = 1

_VECTORS = ("b1", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var", "b2")
_MATRICES = ("W1", "W2")


class ArtifactError(ValueError):
    pass


def write_matrix(path, A):
    A = np.asarray(A, dtype="<f8")
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ValueError("only 1-d and 2-d arrays can be stored")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", *A.shape))
        fh.write(np.ascontiguousarray(A).tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:8] != MAGIC:
        raise ArtifactError(f"{path}: not a matrix file (bad magic)")
    rows, cols = struct.unpack("<QQ", data[8:24])
    if len(data) != 24 + 8 * rows * cols:
        raise ArtifactError(f"{path}: header says {rows}x{cols} but payload has {len(data) - 24} bytes")
    return np.frombuffer(data, dtype="<f8", offset=24).reshape(rows, cols).astype(float)


def write_manifest(path, items):
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")


def read_manifest(path):
    items = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ArtifactError(f"{path}:{lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            items[k] = v
    return items


def save_model(model, directory):
    """Write ``model`` to ``directory`` atomically (all files or none)."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        enc = model.encoder
        cfg = model.config
        manifest = {
            "format_version": FORMAT_VERSION,
            "V": enc.n_words,
            "K": model.K,
            "L": model.topics.dim,
            "hidden": enc.hidden,
            "dropout_rate": repr(enc.dropout_rate),
            "bn_momentum": repr(enc.bn_momentum),
            "bn_eps": repr(enc.bn_eps),
            "alpha": repr(cfg.sinkhorn.alpha) if cfg else "nan",
            "epsilon": repr(cfg.epsilon) if cfg else "nan",
            "seed": cfg.seed if cfg else -1,
        }
        write_manifest(tmp / "manifest.txt", manifest)
        model.vocab.save(tmp / "vocab.txt")
        for name in _MATRICES + _VECTORS:
            write_matrix(tmp / f"{name}.bin", getattr(enc, name))
        write_matrix(tmp / "G.bin", model.topics.G)
        write_matrix(tmp / "E.bin", model.words.E)
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return directory


def load_model(directory):
    directory = Path(directory)
    if not (directory / "manifest.txt").exists():
        raise ArtifactError(f"{directory}: no manifest.txt, not a model directory")
    man = read_manifest(directory / "manifest.txt")
    try:
        version = int(man["format_version"])
        V, K, L, hidden = (int(man[k]) for k in ("V", "K", "L", "hidden"))
    except (KeyError, ValueError) as exc:
        raise ArtifactError(f"{directory}: bad manifest ({exc})") from None
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{directory}: unsupported format version {version}")
    vocab = load_vocab(directory / "vocab.txt")
    shapes = {
        "W1": (hidden, V), "W2": (K, hidden), "G": (L, K), "E": (L, V),
        **{name: (hidden, 1) for name in _VECTORS if name != "b2"}, "b2": (K, 1),
    }
    arrays = {}
    for name, shape in shapes.items():
        A = read_matrix(directory / f"{name}.bin")
        if A.shape != shape:
            raise ArtifactError(f"{directory}/{name}.bin is {A.shape[0]}x{A.shape[1]}, manifest implies {shape[0]}x{shape[1]}")
        arrays[name] = A[:, 0] if name in _VECTORS else A
    if len(vocab) != V:
        raise ArtifactError(f"{directory}: vocabulary has {len(vocab)} tokens, manifest says V={V}")
    enc = EncoderParams(
        **{name: arrays[name] for name in _MATRICES + _VECTORS},
        dropout_rate=float(man["dropout_rate"]),
        bn_momentum=float(man.get("bn_momentum", 0.99)),
        bn_eps=float(man.get("bn_eps", 1e-3)),
    )
    return TopicModel(
        encoder=enc, topics=TopicEmbeddings(arrays["G"]), words=WordEmbeddings(arrays["E"]),
        vocab=vocab, manifest=man,
    )
