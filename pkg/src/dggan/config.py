"""Experiment configuration.

One YAML file holds every hyperparameter. Sections map onto the dataclasses
below; unknown keys and wrongly typed values raise :class:`ConfigError`
carrying the dotted key path.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

CONFIG_ENV_VAR = "DGGAN_CONFIG"


@dataclass
class DataConfig:
    train_root: str | None = None
    train_layout: str = "fixture"
    # unpaired real-depth set; defaults to the training root
    depth_root: str | None = None
    depth_layout: str | None = None
    depth_split: str = "train"
    eval_root: str | None = None
    eval_layout: str | None = None
    crop_size: int | None = None
    palm_gamma: float = 1.0


@dataclass
class CPMConfig:
    feature_channels: list[int] = field(default_factory=lambda: [16, 32, 32])
    stage_channels: int = 32
    stage_kernel: int = 3
    num_stages: int = 6
    layers_per_stage: int = 7


@dataclass
class RegressorConfig:
    channels: int = 32
    kernel: int = 3
    layers: int = 7
    fc: list[int] = field(default_factory=lambda: [512, 256])


@dataclass
class RegularizerConfig:
    channels: list[int] = field(default_factory=lambda: [128, 64, 32, 16, 8])
    kernel: int = 4
    output_size: int = 64


@dataclass
class GeneratorConfig:
    channels: list[int] = field(default_factory=lambda: [16, 32, 64, 64])
    residual_blocks: int = 2
    norm: str = "instance"


@dataclass
class DiscriminatorConfig:
    channels: list[int] = field(default_factory=lambda: [16, 32, 64, 64])


@dataclass
class ModelConfig:
    num_joints: int = 21
    input_size: int = 64
    heatmap_stride: int = 8
    heatmap_sigma: float = 1.0
    root_idx: int = 0
    ref_bone: list[int] = field(default_factory=lambda: [0, 9])
    cpm: CPMConfig = field(default_factory=CPMConfig)
    regressor: RegressorConfig = field(default_factory=RegressorConfig)
    regularizer: RegularizerConfig = field(default_factory=RegularizerConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    @property
    def heatmap_size(self) -> int:
        return self.input_size // self.heatmap_stride


@dataclass
class LossConfig:
    lambda_z: float = 1.0
    lambda_2d: float = 1.0
    lambda_dep: float = 0.1
    lambda_t: float = 1.0
    lambda_g: float = 0.01
    continuous_smooth_l1: bool = False
    gan_variant: str = "non_saturating"
    eps: float = 1e-7


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 8
    steps_init_pose: int = 2000
    steps_init_gan: int = 2000
    steps_joint: int = 2000
    lr_pose: float = 1e-4
    lr_generator: float = 2e-4
    lr_discriminator: float = 2e-4
    betas: list[float] = field(default_factory=lambda: [0.5, 0.999])
    checkpoint_every: int = 0
    out_dir: str = "runs/default"
    device: str = "cpu"
    skip_init: bool = False
    regularizer_grad_to_generator: bool = True
    deterministic: bool = True
    log_every: int = 1


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def validate(self) -> "ExperimentConfig":
        _validate(self)
        return self


_CHOICES = {
    "data.train_layout": {"rhd_like", "stb_like", "mhp_like", "fixture"},
    "data.depth_layout": {"rhd_like", "stb_like", "mhp_like", "fixture", None},
    "data.eval_layout": {"rhd_like", "stb_like", "mhp_like", "fixture", None},
    "model.generator.norm": {"none", "instance"},
    "loss.gan_variant": {"minimax", "non_saturating"},
}


def _validate(cfg: ExperimentConfig) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}", key=key)

    for key, allowed in _CHOICES.items():
        value = cfg
        for part in key.split("."):
            value = getattr(value, part)
        need(value in allowed, key, f"must be one of {sorted(a for a in allowed if a)}, got {value!r}")

    m = cfg.model
    need(m.num_joints > 0, "model.num_joints", "must be positive")
    need(m.input_size > 0, "model.input_size", "must be positive")
    need(m.heatmap_stride > 0 and m.input_size % m.heatmap_stride == 0,
         "model.heatmap_stride", "must divide model.input_size")
    need(m.heatmap_sigma > 0, "model.heatmap_sigma", "must be positive")
    need(len(m.ref_bone) == 2 and m.ref_bone[0] != m.ref_bone[1], "model.ref_bone",
         "must name two distinct joints")
    need(m.cpm.num_stages >= 1, "model.cpm.num_stages", "must be >= 1")
    need(len(m.regularizer.channels) == 5, "model.regularizer.channels",
         "needs 5 entries (6 transposed layers)")
    need(m.regularizer.output_size == m.input_size, "model.regularizer.output_size",
         "must equal model.input_size (generator output is the regularizer target)")
    need(len(m.generator.channels) >= 1, "model.generator.channels", "must not be empty")

    l = cfg.loss
    for name in ("lambda_z", "lambda_2d", "lambda_dep", "lambda_t", "lambda_g"):
        need(getattr(l, name) >= 0, f"loss.{name}", "must be non-negative")
    need(l.lambda_t > 0 or l.lambda_g > 0, "loss.lambda_t", "lambda_t and lambda_g cannot both be 0")
    need(0 < l.eps < 0.5, "loss.eps", "must lie in (0, 0.5)")

    t = cfg.train
    need(t.batch_size >= 1, "train.batch_size", "must be >= 1")
    for name in ("steps_init_pose", "steps_init_gan", "steps_joint"):
        need(getattr(t, name) >= 0, f"train.{name}", "must be >= 0")
    for name in ("lr_pose", "lr_generator", "lr_discriminator"):
        need(getattr(t, name) > 0, f"train.{name}", "must be positive")


def _build(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping", key=prefix or None)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in fields:
            raise ConfigError(f"unknown config key {path!r}", key=path)
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path)
        else:
            kwargs[key] = _coerce(default, value, path)
    return cls(**kwargs)


def _coerce(default, value, path):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}", key=path)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}", key=path)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}", key=path)
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}", key=path)
        return list(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}", key=path)
    return value


def config_from_dict(data: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "").validate()


def load_config(path: str | os.PathLike | None = None) -> ExperimentConfig:
    """Read a YAML config; ``path=None`` falls back to ``$DGGAN_CONFIG``."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            raise ConfigError(f"no config given and ${CONFIG_ENV_VAR} is unset")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    cfg = config_from_dict(data)
    # relative dataset paths resolve against the config file's directory
    base = path.resolve().parent
    for name in ("train_root", "depth_root", "eval_root"):
        value = getattr(cfg.data, name)
        if value is not None and not os.path.isabs(value):
            setattr(cfg.data, name, str(base / value))
    if not os.path.isabs(cfg.train.out_dir):
        cfg.train.out_dir = str(base / cfg.train.out_dir)
    return cfg


def dump_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
