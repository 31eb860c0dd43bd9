"""Configuration dataclasses and their JSON round trip."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

MODE_SUP = "sup"
MODE_TCR = "sup+tcr"
MODE_CLP = "sup+tcr+clp"
MODE_TCN = "sup+tcr+clp+tcn"
MODES = (MODE_SUP, MODE_TCR, MODE_CLP, MODE_TCN)

# CLI shorthand: each mode named by the last component it switches on.
_MODE_ALIASES = {
    "sup": MODE_SUP,
    "tcr": MODE_TCR,
    "clp": MODE_CLP,
    "tcn": MODE_TCN,
}


def normalize_mode(mode: str) -> str:
    """Map a mode name or its shorthand alias to the canonical form."""
    key = mode.strip().lower()
    if key in MODES:
        return key
    if key in _MODE_ALIASES:
        return _MODE_ALIASES[key]
    raise ConfigurationError(f"unknown mode {mode!r}; expected one of {MODES}")


def mode_uses_consistency(mode: str) -> bool:
    return normalize_mode(mode) != MODE_SUP


def mode_uses_prototypes(mode: str) -> bool:
    return normalize_mode(mode) in (MODE_CLP, MODE_TCN)


def mode_uses_tcn(mode: str) -> bool:
    return normalize_mode(mode) == MODE_TCN


@dataclass
class ModelConfig:
    """Architecture of the video encoder, linear phase head, and TCN head."""

    frame_size: int = 32
    channels: int = 1
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 2
    heads: int = 4
    window_len: int = 16
    num_classes: int = 5
    tcn_stages: int = 2
    tcn_levels: int = 5
    tcn_channels: int = 32

    def __post_init__(self):
        if self.frame_size % self.patch_size != 0:
            raise ConfigurationError(
                f"frame_size {self.frame_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        if self.window_len < 1:
            raise ConfigurationError("window_len must be >= 1")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")

    @property
    def patches_per_frame(self) -> int:
        return (self.frame_size // self.patch_size) ** 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class TrainConfig:
    """Hyperparameters of the warm-up + semi-supervised training schedule."""

    mode: str = MODE_CLP
    warmup_epochs: int = 3
    semi_epochs: int = 12
    batch_size: int = 16
    base_lr: float = 0.005
    lr_halving_epochs: tuple[int, ...] = (8, 12)
    momentum: float = 0.9
    weight_decay: float = 0.001
    delta: float = 0.6
    alpha: float = 0.9
    eta: float = 0.9
    margin: float = 0.3
    k_neg: int = 3
    seed: int = 0
    # Desk-scale sampling: query positions are taken every `stride` frames so
    # an epoch stays affordable on CPU; 1 visits every frame.
    labeled_stride: int = 1
    unlabeled_stride: int = 4
    # Contiguous labeled segment length used to train the TCN head per step.
    tcn_segment_len: int = 48
    # Alternate (non-literal) unlabeled triplet route: student strong-view
    # features instead of teacher weak-view features. Off by default.
    unlabeled_triplet_student: bool = False
    checkpoint_every: int = 1

    def __post_init__(self):
        self.mode = normalize_mode(self.mode)
        self.lr_halving_epochs = tuple(sorted(int(e) for e in self.lr_halving_epochs))
        for name in ("base_lr", "momentum", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.base_lr <= 0:
            raise ConfigurationError("base_lr must be positive")
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError("delta must lie in [0, 1]")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in [0, 1)")
        if not 0.0 <= self.eta < 1.0:
            raise ConfigurationError("eta must lie in [0, 1)")
        if self.margin <= 0:
            raise ConfigurationError("margin must be positive")
        if self.k_neg < 1:
            raise ConfigurationError("k_neg must be >= 1")
        if min(self.warmup_epochs, self.semi_epochs) < 0:
            raise ConfigurationError("epoch counts must be nonnegative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if min(self.labeled_stride, self.unlabeled_stride) < 1:
            raise ConfigurationError("strides must be >= 1")

    @property
    def total_epochs(self) -> int:
        return self.warmup_epochs + self.semi_epochs

    def lr_at_epoch(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch; halved at each halving epoch."""
        halvings = sum(1 for e in self.lr_halving_epochs if epoch >= e)
        return self.base_lr * (0.5 ** halvings)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lr_halving_epochs"] = list(self.lr_halving_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lr_halving_epochs" in d:
            d["lr_halving_epochs"] = tuple(d["lr_halving_epochs"])
        return cls(**d)


@dataclass
class RunConfig:
    """Fully resolved description of one training run, augment policies
    included, so a persisted config.json reproduces the run on its own."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset_dir: str = ""
    out_dir: str = ""
    weak_augment: dict | None = None  # AugmentPolicy.to_dict(); None = default
    strong_augment: dict | None = None

    def to_dict(self) -> dict:
        from .augment import strong_policy, weak_policy

        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "dataset_dir": self.dataset_dir,
            "out_dir": self.out_dir,
            "weak_augment": self.weak_augment or weak_policy().to_dict(),
            "strong_augment": self.strong_augment or strong_policy().to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            model=ModelConfig.from_dict(d["model"]),
            train=TrainConfig.from_dict(d["train"]),
            dataset_dir=d.get("dataset_dir", ""),
            out_dir=d.get("out_dir", ""),
            weak_augment=d.get("weak_augment"),
            strong_augment=d.get("strong_augment"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
