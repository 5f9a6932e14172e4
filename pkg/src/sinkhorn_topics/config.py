"""Flat ``key = value`` run configuration with typed defaults."""

from __future__ import annotations

from pathlib import Path

from .evaluation import DEFAULT_KMEANS_K, DEFAULT_PROPORTIONS, NPMI_SMOOTHING
from .model import TrainConfig
from .ot import SinkhornConfig


class ConfigError(ValueError):
    pass


# key -> (default, type); the order here is the order of the echoed config.
DEFAULTS = {
    "corpus": ("", str),
    "embeddings": ("", str),
    "embedding_dim": (50, int),
    "out": ("run", str),
    "seed": (0, int),
    "K": (100, int),
    "epsilon": (0.07, float),
    "alpha": (20.0, float),
    "sinkhorn_max_iter": (1000, int),
    "sinkhorn_tol": (0.005, float),
    "unroll_cap": (50, int),
    "lr": (0.001, float),
    "batch_size": (200, int),
    "epochs": (50, int),
    "adam_beta1": (0.9, float),
    "adam_beta2": (0.999, float),
    "adam_eps": (1e-8, float),
    "hidden": (200, int),
    "dropout_rate": (0.75, float),
    "dropout_is_keep_prob": (False, bool),
    "bn_momentum": (0.99, float),
    "bn_eps": (1e-3, float),
    "track_distance": (True, bool),
    "proportions": (DEFAULT_PROPORTIONS, tuple),
    "kmeans_k": (DEFAULT_KMEANS_K, tuple),
    "kmeans_max_iter": (300, int),
    "npmi_top_n": (10, int),
    "td_top_n": (25, int),
    "npmi_smoothing": (NPMI_SMOOTHING, float),
}

_TUPLE_ITEM = {"proportions": float, "kmeans_k": int}


def _parse(key, text):
    default, kind = DEFAULTS[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is tuple:
            item = _TUPLE_ITEM[key]
            return tuple(item(x) for x in text.replace(",", " ").split())
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(lines, source="<config>"):
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _parse(key, value)
    return out


def load_config(path=None, overrides=()):
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    cfg = {k: d for k, (d, _) in DEFAULTS.items()}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        cfg.update(parse_pairs(text.splitlines(), str(path)))
    cfg.update(parse_pairs(overrides, "<command line>"))
    return cfg


def format_config(cfg):
    return "".join(f"{k} = {_format(cfg[k])}\n" for k in DEFAULTS)


def train_config(cfg):
    try:
        return TrainConfig(
            K=cfg["K"], epsilon=cfg["epsilon"],
            sinkhorn=SinkhornConfig(
                alpha=cfg["alpha"], max_iter=cfg["sinkhorn_max_iter"],
                tol=cfg["sinkhorn_tol"], unroll_cap=cfg["unroll_cap"],
            ),
            lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"],
            adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"], adam_eps=cfg["adam_eps"],
            hidden=cfg["hidden"], dropout_rate=cfg["dropout_rate"],
            dropout_is_keep_prob=cfg["dropout_is_keep_prob"],
            bn_momentum=cfg["bn_momentum"], bn_eps=cfg["bn_eps"],
            track_distance=cfg["track_distance"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
