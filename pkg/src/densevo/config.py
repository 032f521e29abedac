"""Run configuration: dataset, model, loss, and optimizer settings.

Configs round-trip losslessly through YAML (parse -> serialize -> parse
yields an equal structure), and every numeric constraint is validated at
construction time so a bad file fails before any work starts.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .data.synthetic import SyntheticSceneConfig

__all__ = [
    "ConfigError",
    "DatasetConfig",
    "ModelConfig",
    "LossConfig",
    "OptimConfig",
    "RunConfig",
    "load_config",
    "save_config",
]

INPUT_MODES = ("rgbd_dense", "rgbd_sparse", "rgb_only")
DEPTH_BACKENDS = ("exact", "classical", "precomputed", "none")


class ConfigError(ValueError):
    """A configuration value violates its contract."""


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | kitti
    kitti_root: str = ""
    sequences: tuple = ()
    synthetic: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)

    def __post_init__(self):
        if self.kind not in ("synthetic", "kitti"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        self.sequences = tuple(str(s) for s in self.sequences)
        if self.kind == "kitti" and not self.sequences:
            raise ConfigError("a kitti dataset needs at least one sequence id")


@dataclass
class ModelConfig:
    levels: int = 4
    search_radius: int = 4
    channel_widths: tuple = (16, 32, 64, 96)
    cross_attention_levels: tuple = (2, 3)
    input_mode: str = "rgbd_dense"
    dropout: float = 0.2

    def __post_init__(self):
        self.channel_widths = tuple(int(w) for w in self.channel_widths)
        self.cross_attention_levels = tuple(int(v) for v in self.cross_attention_levels)
        if self.levels != 4:
            raise ConfigError(f"the pyramid is four levels deep; got levels={self.levels}")
        if len(self.channel_widths) != self.levels:
            raise ConfigError("channel_widths must list one width per level")
        if self.search_radius < 0:
            raise ConfigError(f"search_radius must be >= 0, got {self.search_radius}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class LossConfig:
    alpha: tuple = (1.6, 0.8, 0.4, 0.2)
    s_t_init: float = 0.0
    s_q_init: float = -2.5

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if any(a <= 0 for a in self.alpha):
            raise ConfigError(f"alpha entries must be positive: {self.alpha}")


@dataclass
class OptimConfig:
    learning_rate: float = 1e-4
    schedule: str = "cosine"  # cosine | constant
    iterations: int = 2000
    log_every: int = 50

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.iterations < 0 or self.log_every < 1:
            raise ConfigError("iterations must be >= 0 and log_every >= 1")


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    depth_backend: str = "exact"
    precomputed_depth_dir: str = ""
    eval_segment_lengths: tuple = ()  # empty -> the standard 100..800 m
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.depth_backend not in DEPTH_BACKENDS:
            raise ConfigError(
                f"depth_backend must be one of {DEPTH_BACKENDS}, got {self.depth_backend!r}"
            )
        if len(self.loss.alpha) != self.model.levels:
            raise ConfigError("loss.alpha must carry one weight per pyramid level")
        self.eval_segment_lengths = tuple(float(v) for v in self.eval_segment_lengths)
        if any(v <= 0 for v in self.eval_segment_lengths):
            raise ConfigError("eval segment lengths must be positive")
        self.seed = int(self.seed)

    def to_dict(self) -> dict:
        def convert(value):
            if dataclasses.is_dataclass(value) and not isinstance(value, type):
                out = {}
                for f in fields(value):
                    if f.name == "custom_poses":  # API-only field, not a file setting
                        continue
                    out[f.name] = convert(getattr(value, f.name))
                return out
            if isinstance(value, tuple):
                return [convert(v) for v in value]
            return value

        return convert(self)


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        if f.name == "dataset":
            value = _build(DatasetConfig, value, f"{where}.dataset")
        elif f.name == "model":
            value = _build(ModelConfig, value, f"{where}.model")
        elif f.name == "loss":
            value = _build(LossConfig, value, f"{where}.loss")
        elif f.name == "optim":
            value = _build(OptimConfig, value, f"{where}.optim")
        elif f.name == "synthetic":
            value = _build(SyntheticSceneConfig, value, f"{where}.synthetic")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config")


def load_config(path) -> RunConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(config: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
