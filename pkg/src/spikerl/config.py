"""Run configuration: JSON files plus dotted-key overrides, unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


@dataclass
class SnnSection:
    hidden: list = field(default_factory=lambda: [256, 256])
    enc_pop: int = 10
    dec_pop: int = 10
    current_decay: float = 0.5
    voltage_decay: float = 0.75
    threshold: float = 0.5
    timesteps: int = 5
    surrogate_width: float = 0.5
    surrogate_height: float = 0.5
    train_encoder: bool = True


@dataclass
class Td3Section:
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    exploration_noise: float = 0.1
    policy_delay: int = 2
    batch_size: int = 128
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    warmup_steps: int = 1000
    replay_capacity: int = 100_000
    critic_hidden: list = field(default_factory=lambda: [256, 256])


@dataclass
class AmpSection:
    enabled: bool = True
    format: str = "bf16"
    init_scale: float = 65536.0
    growth_interval: int = 2000
    loss_scaling: bool = True

    @property
    def mode(self) -> str:
        return self.format if self.enabled else "off"


@dataclass
class DistSection:
    rank: int = 0
    world_size: int = 1
    peers: list = field(default_factory=list)
    backend: str = "loopback"
    timeout_s: float = 30.0
    scheme: str = "explicit"


@dataclass
class MeterSection:
    kind: str = "constant_power"
    watts: float = 100.0


@dataclass
class RunConfig:
    env: str = "pendulum"
    seed: int = 0
    epochs: int = 10
    steps_per_epoch: int = 1000
    eval_episodes: int = 5
    out: str = "run.json"
    snn: SnnSection = field(default_factory=SnnSection)
    td3: Td3Section = field(default_factory=Td3Section)
    amp: AmpSection = field(default_factory=AmpSection)
    dist: DistSection = field(default_factory=DistSection)
    meter: MeterSection = field(default_factory=MeterSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        from .envs import ENVIRONMENTS

        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.eval_episodes < 1:
            raise ConfigError("epochs, steps_per_epoch and eval_episodes must be >= 1")
        if self.amp.format not in ("bf16", "fp16"):
            raise ConfigError("amp.format must be bf16 or fp16 (disable with amp.enabled=false)")
        d = self.dist
        if d.backend not in ("loopback", "tcp"):
            raise ConfigError("dist.backend must be loopback or tcp")
        if d.scheme not in ("explicit", "hook"):
            raise ConfigError("dist.scheme must be explicit or hook")
        if d.world_size < 1 or not 0 <= d.rank < d.world_size:
            raise ConfigError(f"rank {d.rank} invalid for world size {d.world_size}")
        if d.backend == "tcp" and d.world_size > 1 and len(d.peers) != d.world_size:
            raise ConfigError("dist.peers needs one host:port per rank for tcp")
        if self.meter.kind not in ("rapl", "constant_power"):
            raise ConfigError("meter.kind must be rapl or constant_power")
        return self


def _build(cls, data: Mapping, prefix: str = ""):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in fields:
            raise ConfigError(f"unknown config key {prefix}{k!r}")
        f = fields[k]
        default = f.default_factory() if f.default is dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[k] = _build(type(default), v, f"{prefix}{k}.")
        else:
            kwargs[k] = _coerce(v, default, f"{prefix}{k}")
    return cls(**kwargs)


def _coerce(value: Any, default: Any, key: str):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "on", "off"):
            return value.lower() in ("true", "1", "on")
        raise ConfigError(f"{key} expects a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = json.loads(value) if value.strip().startswith("[") else \
                    [s for s in value.split(",") if s]
            if not isinstance(value, (list, tuple)):
                raise ValueError
            if default and isinstance(default[0], int):
                return [int(x) for x in value]
            return list(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot use {value!r}") from None


def _set_dotted(d: dict, key: str, value):
    parts = key.split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{key}: {p} is not a section")
    node[parts[-1]] = value


def load_config(path=None, overrides: Mapping[str, Any] = (), environ=None) -> RunConfig:
    """Merge defaults, an optional JSON file, ``SPIKERL_*`` variables and overrides."""
    data: dict = {}
    if path:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    env = os.environ if environ is None else environ
    env_map = {"SPIKERL_RANK": "dist.rank", "SPIKERL_WORLD": "dist.world_size",
               "SPIKERL_PEERS": "dist.peers", "SPIKERL_SEED": "seed",
               "SPIKERL_BACKEND": "dist.backend"}
    for var, key in env_map.items():
        if env.get(var):
            _set_dotted(data, key, env[var])
    for k, v in dict(overrides).items():
        _set_dotted(data, k, v)
    return _build(RunConfig, data).validate()
