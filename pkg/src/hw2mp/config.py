"""Hyper-parameters and run configuration.

Config files are flat ``key = value`` text; ``#`` starts a comment. Keys are
the field names of :class:`HyperParams` and :class:`RunConfig`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field, fields

__all__ = ["ConfigError", "HyperParams", "RunConfig", "parse_config", "config_hash", "write_config"]


class ConfigError(ValueError):
    """Unknown key, malformed value or failed validation."""


@dataclass(frozen=True)
class HyperParams:
    lambda_char: float = 2.0
    lambda_recons: float = 100.0
    lambda1_c: float = 20.0
    lambda1_w: float = 20.0
    lambda2_c: float = 10.0
    lambda2_w: float = 10.0
    n_critic: int = 5
    lr: float = 1e-4
    stiefel_lr: float = 1e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.9
    M_c: int = 4
    M_w: int = 4
    r_c: int = 32
    r_w: int = 128
    leaky_slope: float = 0.2
    batch_size: int = 16

    def __post_init__(self):
        for name in ("lambda_char", "lambda_recons", "lambda1_c", "lambda1_w",
                     "lambda2_c", "lambda2_w", "lr", "stiefel_lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("n_critic", "M_c", "M_w", "r_c", "r_w", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RunConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    seed: int = 0
    data_seed: int = 0
    precision: str = "float32"
    device: str = "cpu"
    out_dir: str = "runs/default"
    manifest: str = ""
    generator_checkpoint: str = ""
    recognizer_checkpoint: str = ""
    # data
    vocab: tuple[str, ...] = ("apple", "river", "stone", "light", "cloud",
                              "paper", "green", "music", "table", "house")
    n_samples: int = 200
    split_ratio: float = 0.95
    distortion_strength: float = 1.0
    # gan
    gan_steps: int = 2000
    gen_levels: int = 5
    gen_norm: bool = True
    gen_base_channels: int = 8
    gen_max_channels: int = 64
    z_channels: int = 4
    word_channels: tuple[int, ...] = (8, 16, 32, 32)
    char_channels: tuple[int, ...] = (8, 16, 32)
    log_every: int = 50
    checkpoint_every: int = 500
    # recognizer
    hwr_mode: str = "handwritten"
    hwr_images: str = "handwritten"
    hwr_hidden: int = 64
    hwr_epochs: int = 40
    hwr_lr: float = 1e-3
    hwr_batch_size: int = 16
    hwr_channels: tuple[int, ...] = (16, 32, 48, 64, 64)
    hwr_width_pools: int = 3
    hidden_dims: tuple[int, ...] = (16, 32, 64, 128)
    beam_width: int = 16
    threads: int = 1

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.hwr_mode not in ("handwritten", "generated", "joint"):
            raise ConfigError(f"hwr_mode must be handwritten, generated or joint, got {self.hwr_mode!r}")
        if self.hwr_images not in ("handwritten", "machine_print"):
            raise ConfigError(f"hwr_images must be handwritten or machine_print, got {self.hwr_images!r}")
        if self.device != "cpu":
            raise ConfigError(f"only the cpu device is supported, got {self.device!r}")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        for name in ("n_samples", "gen_levels", "hwr_hidden", "hwr_batch_size", "beam_width", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.gan_steps < 0 or self.hwr_epochs < 0:
            raise ConfigError("step and epoch counts must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_HP_FIELDS = {f.name: f for f in fields(HyperParams)}
_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "hp"}


def _convert(key: str, raw):
    tp = typing.get_type_hints(HyperParams if key in _HP_FIELDS else RunConfig)[key]
    raw_str = raw.strip() if isinstance(raw, str) else None
    try:
        if tp is bool:
            if raw_str is None:
                return bool(raw)
            if raw_str.lower() in ("1", "true", "yes", "on"):
                return True
            if raw_str.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw_str)
        if tp in (int, float, str):
            if raw_str is None:
                if tp is int and isinstance(raw, float) and not raw.is_integer():
                    raise ValueError(raw)
                return tp(raw)
            if tp is int:
                return int(raw_str)
            return tp(raw_str)
        origin = typing.get_origin(tp)
        if origin is tuple:
            (elem, _) = typing.get_args(tp)
            items = raw if raw_str is None else [s for s in raw_str.split(",") if s.strip()]
            return tuple(elem(s.strip() if isinstance(s, str) else s) for s in items)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {raw!r} is not a valid {getattr(tp, '__name__', tp)}")
    raise ConfigError(f"unsupported type for {key!r}")


def _read_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from an optional file and flag overrides.

    Overrides win over file values; unset keys keep their defaults.
    """
    values = _read_file(path) if path else {}
    values.update(overrides or {})
    hp_kw, run_kw = {}, {}
    for key, raw in values.items():
        if key in _HP_FIELDS:
            hp_kw[key] = _convert(key, raw)
        elif key in _RUN_FIELDS:
            run_kw[key] = _convert(key, raw)
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    return RunConfig(hp=HyperParams(**hp_kw), **run_kw)


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the full configuration."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, default=list)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def write_config(cfg: RunConfig, path: str) -> None:
    """Write ``cfg`` in the flat key = value format read by :func:`parse_config`."""
    lines = []
    for key, value in {**dataclasses.asdict(cfg.hp), **{k: getattr(cfg, k) for k in _RUN_FIELDS}}.items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
