from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..losses import CCSAConfig, class_weights


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Optimizer and loop settings for one network / training phase (Adam)."""

    learning_rate: float = 0.0007322092
    weight_decay: float = 0.0005568733
    epochs: int = 1200
    batch_size: int = 128
    seed: int = 0
    ccsa: CCSAConfig = field(default_factory=CCSAConfig)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    alternate: str = "per-batch"  # or "per-epoch" (semantic alignment only)
    snapshot_every: int = 0  # group-MMD snapshot period in epochs, 0 = off

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be at least 1")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.alternate not in ("per-batch", "per-epoch"):
            raise ConfigError(f"alternate must be 'per-batch' or 'per-epoch', got {self.alternate!r}")
        if isinstance(self.ccsa, dict):
            self.ccsa = CCSAConfig(**self.ccsa)
        self.epochs = int(self.epochs)
        self.batch_size = int(self.batch_size)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_preset(cls, preset: dict, phase: str = "main", **overrides) -> "TrainConfig":
        """Build from a preset's ``train.<phase>`` section plus its CCSA/class-weight keys."""
        settings = dict(preset.get("train", {}).get(phase, {}))
        ccsa = dict(preset.get("ccsa", {}))
        ratio = preset.get("class_weight_ratio")
        if ratio is not None:
            ccsa["class_weights"] = class_weights(float(ratio))
        settings["ccsa"] = CCSAConfig(**ccsa)
        settings.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in settings.items() if k in known})


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    val_accuracy: float
    runtime_s: float
    checkpoint: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.val_accuracy <= 1.0:
            raise ValueError(f"validation accuracy {self.val_accuracy} outside [0, 1]")
