"""Run configuration: defaults, flat ``key = value`` files and validation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Any, Mapping, TextIO


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    rho: float = 0.5
    episodes: int = 150
    seed: int = 0
    budget: int = 0  # 0 means ceil((1 - rho) * N)
    width: int = 64
    depth: int = 3
    q_hidden1: int = 64
    q_hidden2: int = 32
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.6
    proto_k: int = 5
    proto_window: int = 5
    lambda_proto: float = 0.5
    proto_refresh: int = 20
    w_conn: float = 1.0 / 3.0
    w_delete: float = 1.0 / 3.0
    w_embed: float = 1.0 / 3.0
    buffer_size: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    reward_lr: float = 1e-3
    target_sync: int = 50
    dqn_updates: int = 4
    reward_updates: int = 2
    reward_batch: int = 16
    shaping: bool = True

    def __post_init__(self) -> None:
        checks = {
            "rho": 0.0 < self.rho <= 1.0,
            "episodes": self.episodes >= 0,
            "budget": self.budget >= 0,
            "width": self.width >= 1,
            "depth": self.depth >= 0,
            "q_hidden1": self.q_hidden1 >= 1,
            "q_hidden2": self.q_hidden2 >= 1,
            "gamma": 0.0 <= self.gamma <= 1.0,
            "eps_start": 0.0 <= self.eps_end <= self.eps_start <= 1.0,
            "eps_decay_fraction": 0.0 < self.eps_decay_fraction <= 1.0,
            "proto_k": self.proto_k >= 1,
            "proto_window": self.proto_window >= 1,
            "lambda_proto": self.lambda_proto >= 0.0,
            "proto_refresh": self.proto_refresh >= 1,
            "w_conn": min(self.w_conn, self.w_delete, self.w_embed) >= 0.0
            and math.isclose(self.w_conn + self.w_delete + self.w_embed, 1.0, abs_tol=1e-9),
            "buffer_size": self.buffer_size >= 1,
            "batch_size": self.batch_size >= 1,
            "lr": self.lr > 0,
            "reward_lr": self.reward_lr > 0,
            "target_sync": self.target_sync >= 1,
            "dqn_updates": self.dqn_updates >= 0,
            "reward_updates": self.reward_updates >= 0,
            "reward_batch": self.reward_batch >= 1,
        }
        for name, ok in checks.items():
            if not ok:
                raise ConfigError(f"invalid value for {name!r}: {getattr(self, name)!r}")

    def replace(self, **changes: Any) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def dump(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in fields(self))


def _coerce(name: str, kind: Any, raw: str) -> Any:
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {name!r}: {raw!r}") from None
    raise ConfigError(f"unsupported field type for {name!r}")


def parse_overrides(pairs: Mapping[str, str]) -> dict[str, Any]:
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for key, raw in pairs.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _coerce(key, types[key], raw)
    return out


def read_config_file(source: TextIO) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"config line {lineno}: expected key = value")
        pairs[key.strip()] = value.strip()
    return pairs


def build_config(file_pairs: Mapping[str, str] | None = None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    merged = dict(file_pairs or {})
    merged.update(overrides or {})
    return RunConfig(**parse_overrides(merged))
