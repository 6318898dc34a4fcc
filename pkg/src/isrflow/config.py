"""Run configuration: flat key=value files with sections.

The format is plain INI (configparser), human-diffable, with strict
validation: unknown sections or keys are rejected before any compute.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field

from .eql import ACTIVATION_KINDS, DEFAULT_LIBRARY
from .train import TrainConfig

EXPERIMENT_KINDS = ("density", "inverse", "conditional-inverse")
DENSITY_BENCHMARKS = ("gaussian", "banana", "ring", "mog")
INVERSE_BENCHMARKS = ("kinematics",)


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "experiment": {"kind", "seed"},
    "model": {"blocks", "subnet_layers", "activations", "clamp", "sigma2", "d_y"},
    "train": {
        "epochs", "batch_size", "lr_start", "lr_end", "schedule",
        "reg_weight", "reg_warmup", "reg_ramp", "threshold_at", "prune_tol",
        "l05_a", "pad_weight", "checkpoint_every",
    },
    "benchmark": {"name", "n_train", "target_y", "eps"},
    "output": {"dir"},
}


@dataclass
class RunConfig:
    kind: str = "density"
    seed: int = 0
    blocks: int = 1
    subnet_layers: int = 2
    activations: tuple = DEFAULT_LIBRARY
    clamp: float = 2.0
    sigma2: float = 1e-2
    d_y: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    pad_weight: float = 1.0
    benchmark: str = "gaussian"
    n_train: int = 10000
    target_y: tuple = (0.0, 1.5)
    eps: float = 0.02
    out_dir: str = "run"

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.kind == "density" and self.benchmark not in DENSITY_BENCHMARKS:
            raise ConfigError(f"density runs need a benchmark in {DENSITY_BENCHMARKS}")
        if self.kind != "density" and self.benchmark not in INVERSE_BENCHMARKS:
            raise ConfigError(f"inverse runs need a benchmark in {INVERSE_BENCHMARKS}")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.n_train < 1:
            raise ConfigError("n_train must be >= 1")
        bad = [a for a in self.activations if a not in ACTIVATION_KINDS]
        if bad:
            raise ConfigError(f"unknown activations {bad}")

    def to_dict(self):
        d = asdict(self)
        d["activations"] = list(self.activations)
        d["target_y"] = list(self.target_y)
        d["train"].pop("total_steps", None)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tr = dict(d.pop("train", {}))
        tr.pop("total_steps", None)
        d["train"] = TrainConfig(**tr)
        d["activations"] = tuple(d.get("activations", DEFAULT_LIBRARY))
        d["target_y"] = tuple(d.get("target_y", (0.0, 1.5)))
        return cls(**d)


def _parse_pair(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ConfigError(f"expected two comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def load_config(path):
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(parser[section]) - _SCHEMA[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")

    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser.get(section, key)
        return default

    try:
        seed = int(get("experiment", "seed", "0"))
        tr = TrainConfig(
            epochs=int(get("train", "epochs", "100")),
            batch_size=int(get("train", "batch_size", "64")),
            lr_start=float(get("train", "lr_start", "1e-2")),
            lr_end=float(get("train", "lr_end", "1e-4")),
            schedule=get("train", "schedule", "geometric"),
            reg_weight=float(get("train", "reg_weight", "0")),
            reg_warmup=float(get("train", "reg_warmup", "0.25")),
            reg_ramp=float(get("train", "reg_ramp", "0.25")),
            threshold_at=float(get("train", "threshold_at", "0.85")),
            prune_tol=float(get("train", "prune_tol", "0")),
            l05_a=float(get("train", "l05_a", "0.05")),
            checkpoint_every=int(get("train", "checkpoint_every", "0")),
            seed=seed,
        )
        acts = get("model", "activations")
        cfg = RunConfig(
            kind=get("experiment", "kind", "density"),
            seed=seed,
            blocks=int(get("model", "blocks", "1")),
            subnet_layers=int(get("model", "subnet_layers", "2")),
            activations=tuple(a.strip() for a in acts.split(",")) if acts else DEFAULT_LIBRARY,
            clamp=float(get("model", "clamp", "2.0")),
            sigma2=float(get("model", "sigma2", "1e-2")),
            d_y=int(get("model", "d_y", "2")),
            train=tr,
            pad_weight=float(get("train", "pad_weight", "1.0")),
            benchmark=get("benchmark", "name", "gaussian"),
            n_train=int(get("benchmark", "n_train", "10000")),
            target_y=_parse_pair(get("benchmark", "target_y", "0, 1.5")),
            eps=float(get("benchmark", "eps", "0.02")),
            out_dir=get("output", "dir", "run"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from exc
    return cfg
