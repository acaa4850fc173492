"""Run configuration files.

INI layout with five sections; every key is optional except ``data.train``::

    [model]        n_layers, d_model, n_heads, n_s, n_m, n_cm, vocab_size, mlp_ratio, dropout
    [compression]  variant, rate, objective
    [schedule]     lr_min, lr_max, warmup_steps, decay_steps, clip_norm,
                   update_every_initial, update_every_late, switch_step, unroll_windows
    [data]         train, valid, kind, batch_size
    [run]          seed, steps, out_dir, checkpoint_every, precision, eval_windows

Unknown sections or keys are rejected so typos fail loudly.
"""

import configparser
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .compression import CompressionSpec
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainSchedule

OUTPUT_ROOT_ENV = "COMPRESSIVE_OUTPUT_ROOT"


@dataclass(frozen=True)
class DataConfig:
    train: str = ""
    valid: str = ""
    kind: str = "char"
    batch_size: int = 8


@dataclass(frozen=True)
class RunOptions:
    seed: int = 0
    steps: int = 1000
    out_dir: str = "run"
    checkpoint_every: int = 0
    precision: str = "single"
    eval_windows: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunOptions = field(default_factory=RunOptions)
    source: str = ""

    def echo(self):
        """Plain dict of every setting, stored inside checkpoints."""
        sections = {"model": self.model, "compression": self.model.compression,
                    "schedule": self.schedule, "data": self.data, "run": self.run}
        return {name: {f.name: getattr(obj, f.name) for f in fields(obj)
                       if f.name != "compression"}
                for name, obj in sections.items()}


_SECTIONS = {
    "model": ModelConfig,
    "compression": CompressionSpec,
    "schedule": TrainSchedule,
    "data": DataConfig,
    "run": RunOptions,
}


def _coerce(cls, section, key, raw):
    types = {f.name: f.type for f in fields(cls)}
    if key not in types or key == "compression":
        raise ConfigError(f"unknown key [{section}] {key}")
    kind = types[key]
    kind = kind if isinstance(kind, type) else {"int": int, "float": float, "str": str}.get(kind, str)
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None
    return raw.strip()


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    values = {name: {} for name in _SECTIONS}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            values[section][key] = _coerce(_SECTIONS[section], section, key, raw)
    if not values["data"].get("train"):
        raise ConfigError("missing required key [data] train (corpus path)")
    try:
        compression = CompressionSpec(**values["compression"])
        model = ModelConfig(compression=compression, **values["model"])
        schedule = TrainSchedule(**values["schedule"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    data = DataConfig(**values["data"])
    run = RunOptions(**values["run"])
    if data.kind not in ("char", "word"):
        raise ConfigError(f"[data] kind must be 'char' or 'word', got {data.kind!r}")
    if data.batch_size < 1 or run.steps < 0:
        raise ConfigError("batch_size must be >= 1 and steps >= 0")
    if run.precision not in ("single", "double"):
        raise ConfigError(f"[run] precision must be 'single' or 'double', got {run.precision!r}")
    base = Path(source).parent if source and not source.startswith("<") else Path(".")
    data = DataConfig(**{**data.__dict__,
                         "train": os.path.normpath(base / data.train),
                         "valid": os.path.normpath(base / data.valid) if data.valid else ""})
    return RunConfig(model=model, schedule=schedule, data=data, run=run, source=source)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), source=str(path))
