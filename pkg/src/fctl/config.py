"""Plain-text ``key = value`` configuration for training runs.

One pair per line; blank lines and ``#`` comments are ignored.  Keys:

    epochs, lr, batch_size, lambda_fs, seed, dataset_size, size,
    eval_fraction                      -> TrainConfig fields
    kind, intensity, degrade_seed      -> the DegradeSpec
    alpha, beta, lambda_consistency, r0 -> the EansdlParams

Unknown keys are rejected by name.  Later sources win: defaults, then the
file, then explicit overrides (command-line flags).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .tensor import DomainError
from .train import TrainConfig


class ConfigError(ValueError):
    pass


def _int(v: str) -> int:
    return int(v)


# key -> (parser, help)
KEYS = {
    "epochs": (_int, "training epochs"),
    "lr": (float, "SGD learning rate"),
    "batch_size": (_int, "scenes per step"),
    "lambda_fs": (float, "weight of the feature-similarity loss"),
    "seed": (_int, "experiment seed"),
    "dataset_size": (_int, "number of synthetic scenes"),
    "size": (_int, "scene width and height (64 or 128)"),
    "eval_fraction": (float, "held-out fraction"),
    "kind": (str, "degradation: rain, fog, dark or bayer"),
    "intensity": (float, "degradation intensity in [0, 1]"),
    "degrade_seed": (_int, "degradation seed"),
    "alpha": (float, "attenuation steepness"),
    "beta": (float, "attenuation curvature"),
    "lambda_consistency": (float, "weight of the neighbourhood consistency term"),
    "r0": (_int, "consistency radius at the finest level"),
}

_DEGRADE_KEYS = {"kind": "kind", "intensity": "intensity", "degrade_seed": "seed"}
_EANSDL_KEYS = ("alpha", "beta", "lambda_consistency", "r0")


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse and type-convert ``key = value`` lines."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = parse_value(key, value, f"{source}:{lineno}")
    return out


def parse_value(key: str, value: str, where: str = "") -> object:
    prefix = f"{where}: " if where else ""
    if key not in KEYS:
        raise ConfigError(f"{prefix}unknown config key {key!r}")
    try:
        return KEYS[key][0](value)
    except ValueError:
        raise ConfigError(f"{prefix}bad value for {key}: {value!r}") from None


def load_file(path) -> dict:
    return parse_text(Path(path).read_text(), str(path))


def build_config(values: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Apply parsed values on top of ``base`` (defaults when omitted)."""
    base = base or TrainConfig()
    unknown = set(values) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
    top = {k: v for k, v in values.items() if k not in _DEGRADE_KEYS and k not in _EANSDL_KEYS}
    deg = {_DEGRADE_KEYS[k]: v for k, v in values.items() if k in _DEGRADE_KEYS}
    ean = {k: v for k, v in values.items() if k in _EANSDL_KEYS}
    try:
        degrade = dataclasses.replace(base.degrade, **deg) if deg else base.degrade
        eansdl = dataclasses.replace(base.eansdl, **ean) if ean else base.eansdl
        if "lambda_fs" in top:
            eansdl = dataclasses.replace(eansdl, lambda_fs=top["lambda_fs"])
        return dataclasses.replace(base, degrade=degrade, eansdl=eansdl, **top)
    except (DomainError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def resolve(path=None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the file at ``path``, then ``overrides``."""
    values = load_file(path) if path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def to_text(cfg: TrainConfig) -> str:
    """Inverse of ``resolve`` for a full config."""
    d = cfg.degrade
    pairs = [
        ("epochs", cfg.epochs), ("lr", repr(cfg.lr)), ("batch_size", cfg.batch_size),
        ("lambda_fs", repr(cfg.lambda_fs)), ("seed", cfg.seed), ("dataset_size", cfg.dataset_size),
        ("size", cfg.size), ("eval_fraction", repr(cfg.eval_fraction)),
        ("kind", d.kind.value), ("intensity", repr(d.intensity)), ("degrade_seed", d.seed),
        ("alpha", repr(cfg.eansdl.alpha)), ("beta", repr(cfg.eansdl.beta)),
        ("lambda_consistency", repr(cfg.eansdl.lambda_consistency)), ("r0", cfg.eansdl.r0),
    ]
    return "".join(f"{k} = {v}\n" for k, v in pairs)
