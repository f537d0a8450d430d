"""Plain-text experiment configuration.

One ``key = value`` per line, ``#`` starts a comment. Training keys are bare
(``preset = diff-wgan``); model keys carry a ``model.`` prefix
(``model.hidden = 64``) and corpus keys a ``corpus.`` prefix. Tuples are
comma-separated (``d_betas = 0.5, 0.9``). Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field

from .corpus import ToyCorpusSpec
from .networks import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    corpus: ToyCorpusSpec = field(default_factory=ToyCorpusSpec)


SECTIONS = {"": TrainConfig, "model.": ModelConfig, "corpus.": ToyCorpusSpec}


def _convert(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("none", "") and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(raw, inner[0], key)
    if origin is tuple:
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} comma-separated values, got '{raw}'")
        return tuple(_convert(p, a, key) for p, a in zip(parts, args))
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse '{raw}' as {hint.__name__}") from None
    return raw


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, dict] = {prefix: {} for prefix in SECTIONS}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
        key, value = (s.strip() for s in line.split("=", 1))
        prefix = next((p for p in ("model.", "corpus.") if key.startswith(p)), "")
        cls = SECTIONS[prefix]
        name = key[len(prefix):]
        hints = typing.get_type_hints(cls)
        if name not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(f"line {lineno}: unknown config key '{key}'")
        if name in values[prefix]:
            raise ConfigError(f"line {lineno}: duplicate config key '{key}'")
        values[prefix][name] = _convert(value, hints[name], key)
    try:
        return ExperimentConfig(TrainConfig(**values[""]), ModelConfig(**values["model."]),
                                ToyCorpusSpec(**values["corpus."]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def _format(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for prefix, obj in (("", cfg.train), ("model.", cfg.model), ("corpus.", cfg.corpus)):
        for f in dataclasses.fields(obj):
            lines.append(f"{prefix}{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
