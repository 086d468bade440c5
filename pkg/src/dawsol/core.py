"""Shared types, run configuration, and seeded randomness."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np


class ConfigError(ValueError):
    """Config file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(ValueError):
    """A config or domain value violates an invariant."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


UDA_METHODS = ("mmd", "dann", "none")
AUGMENTATIONS = ("none", "has", "cutmix")
BACKBONES = ("small", "resnet50")
DAL_SCOPES = ("batch", "image")


@dataclass(frozen=True)
class RunConfig:
    # problem size
    num_classes: int = 3
    feature_dim: int = 64
    image_size: int = 224
    backbone: str = "small"
    # target sampling / DAL loss
    samples_per_subset: int = 32
    lambda1: float = 0.3
    lambda2: float = 2.0
    uda_method: str = "mmd"
    use_tsa: bool = True
    dal_scope: str = "batch"  # "batch": one MMD over the pooled batch; "image": mean of per-image MMDs
    mmd_sigma: float = 0.0  # <= 0 selects the median heuristic
    mmd_unbiased: bool = False
    eq4_literal: bool = False
    eq7_literal: bool = False
    epsilon_scale: float = 1e-3
    kmeans_max_iters: int = 50
    kmeans_tol: float = 1e-4
    warmup_epochs: int = 0  # classification-only epochs before the DAL loss and cache updates start
    # augmentation
    augmentation: str = "none"
    has_grid: int = 4
    has_prob: float = 0.5
    cutmix_alpha: float = 1.0
    # optimisation
    seed: int = 0
    batch_size: int = 32
    epochs: int = 10
    lr: float = 0.01
    lr_step: int = 0  # epochs between decays, 0 disables
    lr_gamma: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    # evaluation
    num_thresholds: int = 101

    def __post_init__(self):
        for name in ("num_classes", "feature_dim", "image_size", "samples_per_subset", "batch_size",
                     "kmeans_max_iters", "has_grid"):
            if getattr(self, name) < 1:
                raise ValidationError(name, "must be a positive integer")
        for name in ("epochs", "warmup_epochs"):
            if getattr(self, name) < 0:
                raise ValidationError(name, "must be non-negative")
        if self.num_thresholds < 2:
            raise ValidationError("num_thresholds", "need at least both endpoints")
        for name in ("lambda1", "lambda2", "kmeans_tol", "weight_decay", "momentum"):
            if getattr(self, name) < 0:
                raise ValidationError(name, "must be non-negative")
        if self.epsilon_scale <= 0:
            raise ValidationError("epsilon_scale", "must be positive")
        if self.lr <= 0:
            raise ValidationError("lr", "must be positive")
        if not 0.0 <= self.has_prob <= 1.0:
            raise ValidationError("has_prob", "must lie in [0, 1]")
        if self.cutmix_alpha <= 0:
            raise ValidationError("cutmix_alpha", "must be positive")
        if self.uda_method not in UDA_METHODS:
            raise ValidationError("uda_method", f"expected one of {UDA_METHODS}, got {self.uda_method!r}")
        if self.augmentation not in AUGMENTATIONS:
            raise ValidationError("augmentation", f"expected one of {AUGMENTATIONS}, got {self.augmentation!r}")
        if self.dal_scope not in DAL_SCOPES:
            raise ValidationError("dal_scope", f"expected one of {DAL_SCOPES}, got {self.dal_scope!r}")
        if self.backbone not in BACKBONES:
            raise ValidationError("backbone", f"expected one of {BACKBONES}, got {self.backbone!r}")
        if self.uda_method == "none" and self.lambda1 > 0:
            raise ValidationError("lambda1", "lambda1 > 0 requires uda_method mmd or dann")
        if not self.use_tsa and self.lambda2 > 0:
            raise ValidationError("lambda2", "the Universum term needs the target sample assigner (use_tsa)")
        if self.backbone == "resnet50" and self.feature_dim != 2048:
            raise ValidationError("feature_dim", "resnet50 backbone produces 2048 channels")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean for {key}, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def config_from_mapping(values: dict) -> RunConfig:
    """Build a validated config from ``{key: str|value}``; unknown keys are rejected."""
    parsed = {}
    for key, value in values.items():
        if key not in _FIELD_TYPES:
            raise ValidationError(key, "unknown configuration key")
        try:
            parsed[key] = _parse_value(key, value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ValidationError(key, str(exc)) from None
    return RunConfig(**parsed)


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from None
    return RunConfig(**values)


def load_config(path: Union[str, Path]) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(config: RunConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def save_config(config: RunConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(config))


def seeded_rng(seed: int) -> np.random.Generator:
    """The single source of randomness; PCG64 streams are platform-stable."""
    return np.random.default_rng(np.random.PCG64(seed))


@dataclass(frozen=True)
class ClassMask:
    """Image-level label vector ``y`` and its dominant class (lowest index on ties)."""

    y: tuple
    dominant_class: int = field(init=False)

    def __post_init__(self):
        y = tuple(float(v) for v in self.y)
        if not y or max(y) <= 0:
            raise ValidationError("y", "at least one class must be present")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dominant_class", int(np.argmax(y)))

    @classmethod
    def one_hot(cls, k: int, num_classes: int) -> "ClassMask":
        if not 0 <= k < num_classes:
            raise ValidationError("class", f"{k} not in [0, {num_classes})")
        y = [0.0] * num_classes
        y[k] = 1.0
        return cls(tuple(y))

    @property
    def num_classes(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class Box:
    """Inclusive pixel box: columns x0..x1, rows y0..y1."""

    class_id: int
    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.x0 <= self.x1 < width and 0 <= self.y0 <= self.y1 < height):
            raise ValidationError("box", f"{self} outside a {height}x{width} image")

    def as_tuple(self) -> tuple:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class PixelAnnotation:
    """Evaluation-only ground truth: boxes and/or a binary foreground mask."""

    class_id: int
    boxes: list = field(default_factory=list)
    mask: Optional[np.ndarray] = None

    def validate(self, height: int, width: int) -> None:
        for box in self.boxes:
            box.validate(height, width)
        if self.mask is not None and self.mask.shape != (height, width):
            raise ValidationError("mask", f"shape {self.mask.shape} != image {(height, width)}")
