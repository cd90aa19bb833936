"""Flat key-value experiment configuration with typed validation.

Precedence, lowest first: dataclass defaults, config file, ``HRL_*``
environment variables, explicit overrides (CLI flags).
"""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .policy import HybridConfig

VARIANTS = ("ours", "hybrid-mlp", "bc-dual", "bc-mlp", "a2c", "il")
ENV_PREFIX = "HRL_"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "ours"
    env: str = "taxi"
    total_steps: int = 80_000
    num_workers: int = 16
    seeds: list[int] = field(default_factory=lambda: list(range(16)))
    # hybrid objective
    entropy_coef: float = 0.01
    bc_coef: float = 1.0
    value_coef: float = 0.5
    n_steps: int = 2
    gamma: float = 0.99
    bc_warmup: int = 2000
    demo_batch: int = 32
    max_grad_norm: float = 0.5
    policy_lr: float = 0.05
    train_actor_bias: bool = False
    # inference model
    rank: int = 2
    state_dim: int = 128
    model_dim: int = 128
    model_lr: float = 3e-3
    l1_reduction: str = "mean"
    l1_target_grad: bool = False
    model_batch: int = 64
    model_updates: int = 2
    replay_capacity: int = 50_000
    # demonstrations
    eta: float = 0.0
    epsilon: float = 0.0
    demo_path: str | None = None
    demo_seed: int = 0
    curriculum: bool = False
    curriculum_k: int = 10
    curriculum_interval: int = 8000
    # metrics
    log_interval: int = 500
    return_window: int = 100
    probe_size: int = 1000
    probe_seed: int = 10_007
    out_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.env != "taxi":
            raise ConfigError(f"unknown environment {self.env!r}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if self.total_steps <= 0 or self.num_workers <= 0 or self.log_interval <= 0:
            raise ConfigError("total_steps, num_workers and log_interval must be positive")
        if not 0.0 <= self.eta <= 1.0 or not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("eta and epsilon must lie in [0, 1]")
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if self.l1_reduction not in ("sum", "mean"):
            raise ConfigError("l1_reduction must be 'sum' or 'mean'")
        if self.model_updates < 1:
            raise ConfigError("model_updates must be >= 1")
        if self.policy_lr <= 0 or self.model_lr <= 0:
            raise ConfigError("learning rates must be positive")
        try:
            self.hybrid()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def hybrid(self) -> HybridConfig:
        return HybridConfig(
            entropy_coef=self.entropy_coef, bc_coef=self.bc_coef, value_coef=self.value_coef,
            n_steps=self.n_steps, gamma=self.gamma, bc_warmup=self.bc_warmup,
            demo_batch=self.demo_batch, max_grad_norm=self.max_grad_norm,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _field_types() -> dict[str, typing.Any]:
    return typing.get_type_hints(ExperimentConfig)


def coerce(name: str, raw: str):
    """Parse a raw string into the declared type of field ``name``."""
    types = _field_types()
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    tp = types[name]
    raw = raw.strip()
    args = typing.get_args(tp)
    if type(None) in args:
        if raw.lower() in ("", "none", "null"):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typing.get_origin(tp) is list:
            return [int(x) for x in raw.replace(" ", "").split(",") if x]
        return tp(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str) -> dict[str, typing.Any]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        out[key] = coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                environ: typing.Mapping[str, str] | None = None) -> ExperimentConfig:
    values: dict[str, typing.Any] = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    environ = os.environ if environ is None else environ
    for key, raw in environ.items():
        if key.startswith(ENV_PREFIX):
            values[key[len(ENV_PREFIX):].lower()] = coerce(key[len(ENV_PREFIX):].lower(), raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
