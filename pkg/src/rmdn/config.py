"""Experiment configuration and its flat ``key = value`` text format.

Example::

    # dataset-3 run with residualization layers
    dataset.schedule = both_shift
    dataset.n = 512
    model.placement = after_each_conv_and_prelogits
    optim.epochs = 20
    seeds = 0, 1, 2

Blank lines and ``#`` comments are ignored. Unknown keys are errors.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import RmdnError


class ConfigError(RmdnError, ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _opt_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none") else text.strip()


# key -> (attribute, parser)
_KEYS = {
    "dataset.schedule": ("schedule", str.strip),
    "dataset.n": ("n", int),
    "dataset.stages": ("stages", _opt_int),
    "dataset.seed": ("data_seed", int),
    "dataset.noise_std": ("noise_std", float),
    "dataset.path": ("dataset_path", _opt_str),
    "model.placement": ("placement", str.strip),
    "model.epsilon": ("epsilon", float),
    "model.lambda": ("lam", float),
    "optim.lr": ("lr", float),
    "optim.gamma": ("gamma", float),
    "optim.decay_every": ("decay_every", int),
    "optim.epochs": ("epochs", int),
    "optim.batch_size": ("batch_size", int),
    "eval.deltas": ("deltas", _floats),
    "eval.dcor": ("dcor", _bool),
    "eval.dcor_split": ("dcor_split", str.strip),
    "seeds": ("seeds", _ints),
}


@dataclass
class ExperimentConfig:
    schedule: str = "both_shift"
    n: int = 1024
    stages: int | None = None
    data_seed: int = 0
    noise_std: float = 0.01
    dataset_path: str | None = None
    placement: str = "after_each_conv_and_prelogits"
    epsilon: float = 1.0
    lam: float = 1e-4
    lr: float = 5e-4
    gamma: float = 0.8
    decay_every: int = 20
    epochs: int = 100
    batch_size: int = 128
    deltas: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    dcor: bool = True
    dcor_split: str = "test"
    seeds: tuple[int, ...] = (0,)

    def validate(self) -> "ExperimentConfig":
        if self.epochs < 1:
            raise ConfigError(f"optim.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"optim.batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"optim.lr must be > 0, got {self.lr}")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if any(not 0.0 <= d <= 1.0 for d in self.deltas):
            raise ConfigError(f"eval.deltas must lie in [0, 1], got {self.deltas}")
        if self.dcor_split not in ("test", "all"):
            raise ConfigError(f"eval.dcor_split must be 'test' or 'all', got {self.dcor_split!r}")
        if self.epsilon <= 0 or self.lam < 0:
            raise ConfigError("model.epsilon must be > 0 and model.lambda >= 0")
        return self

    def to_text(self) -> str:
        lines = []
        for key, (attr, _) in _KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, tuple):
                text = ", ".join(repr(v) for v in value)
            elif value is None:
                text = "none"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)


def parse_config(text: str) -> ExperimentConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        if "=" not in line:
            col = len(raw) - len(raw.lstrip()) + 1
            raise ConfigError("expected 'key = value'", lineno, col)
        key_part, value_part = line.split("=", 1)
        key = key_part.strip()
        if key not in _KEYS:
            col = raw.index(key) + 1 if key else 1
            raise ConfigError(f"unknown key {key!r}", lineno, col)
        attr, parser = _KEYS[key]
        try:
            values[attr] = parser(value_part.strip())
        except ValueError as exc:
            col = len(key_part) + 2 + (len(value_part) - len(value_part.lstrip()))
            raise ConfigError(f"bad value for {key}: {exc}", lineno, col) from None
    return ExperimentConfig(**values).validate()


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
