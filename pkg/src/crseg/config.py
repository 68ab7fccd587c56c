"""Configuration dataclasses and the JSON config file loader.

The config file is one JSON object with optional sections ``model``,
``synth``, ``train``, ``infer`` and ``ablate``; keys match the dataclass
field names below. ``CRS_SEED`` in the environment overrides every seed.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, ModeError

MODES = ("ST", "STL", "STN", "STC")
PAPER_ARI = {"ST": 0.13, "STL": 0.082, "STN": 0.045, "STC": 0.035}


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ModeError(f"unknown consistency mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


def has_backward(mode: str) -> bool:
    return check_mode(mode) in ("STL", "STC")


def has_reference(mode: str) -> bool:
    return check_mode(mode) in ("STN", "STC")


@dataclass
class ModelConfig:
    in_channels: int = 2
    widths: tuple = (64, 48, 32, 16, 8)  # deepest (stride 16) first
    levels: int = 5
    hidden_width: int = 16
    objects_per_sequence: int = 15
    sequence_length: int = 30
    consistency_mode: str = "STC"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        check_mode(self.consistency_mode)
        if self.levels != len(self.widths):
            raise ConfigError(f"levels={self.levels} but {len(self.widths)} encoder widths given")
        if self.levels < 1 or self.objects_per_sequence < 1 or self.sequence_length < 1:
            raise ConfigError("levels, objects_per_sequence and sequence_length must be >= 1")

    @property
    def strides(self) -> tuple:
        return tuple(2 ** (self.levels - 1 - k) for k in range(self.levels))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-6
    batch_size: int = 1
    epochs: int = 40
    teacher_forced_epochs: int = 10
    seed: int = 0
    train_volumes: list = field(default_factory=list)  # [{"volume": path, "labels": path}]
    val_volumes: list = field(default_factory=list)
    val_fraction: float = 0.2
    sequence_stride: Optional[int] = None
    checkpoint_every: int = 1
    validate_every: int = 1
    max_steps: Optional[int] = None
    grad_clip: float = 10.0
    out_dir: str = "run"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.teacher_forced_epochs > self.epochs:
            raise ConfigError("teacher_forced_epochs must not exceed epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")


@dataclass
class InferenceConfig:
    chunk_length: int = 30
    z_overlap: int = 1
    binarize_threshold: float = 0.5
    discover_new_objects: bool = False
    min_new_object_area: int = 20

    def __post_init__(self):
        if not 1 <= self.z_overlap < self.chunk_length:
            raise ConfigError("need 1 <= z_overlap < chunk_length")


@dataclass
class AblationConfig:
    modes: list = field(default_factory=lambda: list(MODES))
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    train_volumes: int = 16
    eval_volumes: int = 8
    synth: dict = field(default_factory=dict)  # SynthSpec overrides for every volume
    blank_slice: Optional[int] = None           # default: middle slice
    steps: int = 600                            # optimizer steps per (mode, seed) cell
    identity_iou: float = 0.5

    def __post_init__(self):
        self.modes = list(self.modes)
        self.seeds = [int(s) for s in self.seeds]
        if not self.modes:
            from .errors import UsageError
            raise UsageError("ablation needs at least one consistency mode")
        for m in self.modes:
            check_mode(m)
        if not self.seeds:
            raise ConfigError("ablation needs at least one seed")
        if self.train_volumes < 1 or self.eval_volumes < 1 or self.steps < 1:
            raise ConfigError("train_volumes, eval_volumes and steps must be >= 1")


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "infer": InferenceConfig,
            "ablate": AblationConfig}


def config_keys() -> dict:
    """Section -> list of accepted keys, for ``--help``."""
    from .synth import SynthSpec

    out = {name: [f.name for f in dataclasses.fields(cls)] for name, cls in SECTIONS.items()}
    out["synth"] = [f.name for f in dataclasses.fields(SynthSpec)]
    return out


def build(cls, data: Optional[dict]):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def env_seed(default: int) -> int:
    raw = os.environ.get("CRS_SEED")
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"CRS_SEED must be an integer, got {raw!r}") from exc


def load(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def to_dict(obj) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(obj)))
