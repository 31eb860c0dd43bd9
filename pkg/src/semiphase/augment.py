"""Weak and strong views of a query frame.

The weak view keeps the query frame's recent consecutive history and applies
mild pixel noise; the strong view resamples the history from the whole past
of the video and applies an aggressive randomized pixel policy. Pixel ops are
drawn once per window and applied identically to every frame in it, so a
window stays temporally coherent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError
from .model import FrameWindow
from .rng import RngStream

PIXEL_OPS = (
    "rotate",
    "translate-x",
    "translate-y",
    "shear",
    "brightness",
    "contrast",
    "cutout",
    "identity",
)

# full-strength (magnitude 10) effect sizes
ROTATE_MAX_DEG = 30.0
TRANSLATE_MAX_FRAC = 0.3
SHEAR_MAX = 0.3
BRIGHTNESS_MAX = 0.5
CONTRAST_MAX = 0.5
CUTOUT_MAX_FRAC = 0.5


@dataclass
class AugmentPolicy:
    """Pixel-level perturbation policy; `pixel_ops` is the op pool."""

    kind: str = "weak"
    pixel_ops: list[tuple[str, float]] = field(default_factory=list)
    num_ops: int = 0
    crop_fraction: float = 1.0
    mag_std: float = 0.0

    def __post_init__(self):
        for name, mag in self.pixel_ops:
            if name not in PIXEL_OPS:
                raise InputError(f"unknown pixel op {name!r}")
            if not 0.0 <= mag <= 10.0:
                raise InputError(f"magnitude {mag} outside [0, 10]")
        if self.num_ops < 0:
            raise InputError("num_ops must be >= 0")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pixel_ops": [[n, m] for n, m in self.pixel_ops],
            "num_ops": self.num_ops,
            "crop_fraction": self.crop_fraction,
            "mag_std": self.mag_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentPolicy":
        d = dict(d)
        d["pixel_ops"] = [(n, float(m)) for n, m in d.get("pixel_ops", [])]
        return cls(**d)


def weak_policy() -> AugmentPolicy:
    # random crop-and-resize plus a rotation of at most ~10 degrees
    return AugmentPolicy(
        kind="weak",
        pixel_ops=[("rotate", 10.0 / 3.0)],
        num_ops=1,
        crop_fraction=0.9,
    )


def strong_policy() -> AugmentPolicy:
    # 5 ops per window at magnitude bucket 9/10 with sigma-0.8 jitter
    return AugmentPolicy(
        kind="strong",
        pixel_ops=[(name, 9.0) for name in PIXEL_OPS],
        num_ops=5,
        crop_fraction=1.0,
        mag_std=0.8,
    )


def weak_view(video: np.ndarray, t: int, window_len: int) -> FrameWindow:
    """Query frame t plus its preceding consecutive history, left-padded by
    repeating frame 0 before the video start."""
    _check_index(video, t)
    indices = [max(0, i) for i in range(t - window_len + 1, t + 1)]
    return FrameWindow(frames=video[indices].copy(), query_index=t)


def strong_view(video: np.ndarray, t: int, window_len: int, rng: RngStream) -> FrameWindow:
    """Query frame t plus window_len - 1 frames resampled from its full past.

    Drawn without replacement from [0, t-1] when the history is large enough,
    with replacement otherwise (frame 0 stands in for an empty history at
    t = 0). Sampled indices are sorted ascending so temporal order survives.
    """
    _check_index(video, t)
    gen = rng.generator()
    history = window_len - 1
    if t >= history >= 1:
        picks = gen.choice(t, size=history, replace=False)
    elif history >= 1:
        picks = gen.choice(max(t, 1), size=history, replace=True)
    else:
        picks = np.empty(0, dtype=np.int64)
    indices = np.concatenate([np.sort(picks), [t]]).astype(np.int64)
    return FrameWindow(frames=video[indices].copy(), query_index=t)


def _check_index(video: np.ndarray, t: int) -> None:
    if not 0 <= t < len(video):
        raise InputError(f"frame index {t} outside video of length {len(video)}")


def apply_pixel_policy(
    window: FrameWindow,
    policy: AugmentPolicy,
    rng: RngStream,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> FrameWindow:
    """Perturb all frames of a window with one shared draw of the policy.

    Applies the optional crop-and-resize, then `num_ops` ops sampled from the
    policy pool, clamps to [0, 1], and normalizes per channel with the given
    dataset (mean, std). Empty pool or num_ops = 0 leaves pixels untouched.
    """
    gen = rng.generator()
    frames = window.frames.astype(np.float32, copy=True)
    t, c, h, w = frames.shape

    if policy.crop_fraction < 1.0:
        side = max(1, round(policy.crop_fraction * h))
        oy = int(gen.integers(0, h - side + 1))
        ox = int(gen.integers(0, w - side + 1))
        scale = side / h
        frames = _affine(frames, [[scale, 0.0], [0.0, scale]], [oy, ox])

    if policy.num_ops > 0 and policy.pixel_ops:
        op_idx = gen.integers(0, len(policy.pixel_ops), size=policy.num_ops)
        for i in op_idx:
            name, mag = policy.pixel_ops[int(i)]
            if policy.mag_std > 0:
                mag = float(np.clip(mag + policy.mag_std * gen.standard_normal(), 0.0, 10.0))
            frames = _apply_op(frames, name, mag, gen)

    np.clip(frames, 0.0, 1.0, out=frames)
    if stats is not None:
        mean, std = stats
        mean = np.asarray(mean, dtype=np.float32).reshape(1, c, 1, 1)
        std = np.asarray(std, dtype=np.float32).reshape(1, c, 1, 1)
        frames = (frames - mean) / np.maximum(std, 1e-6)
    return FrameWindow(frames=frames, query_index=window.query_index)


def _apply_op(frames: np.ndarray, name: str, mag: float, gen: np.random.Generator) -> np.ndarray:
    t, c, h, w = frames.shape
    level = mag / 10.0
    sign = 1.0 if gen.random() < 0.5 else -1.0
    if name == "identity":
        return frames
    if name == "rotate":
        theta = math.radians(sign * level * ROTATE_MAX_DEG)
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        return _affine_centered(frames, [[cos_t, -sin_t], [sin_t, cos_t]])
    if name == "translate-x":
        return _affine(frames, [[1.0, 0.0], [0.0, 1.0]], [0.0, -sign * level * TRANSLATE_MAX_FRAC * w])
    if name == "translate-y":
        return _affine(frames, [[1.0, 0.0], [0.0, 1.0]], [-sign * level * TRANSLATE_MAX_FRAC * h, 0.0])
    if name == "shear":
        return _affine_centered(frames, [[1.0, sign * level * SHEAR_MAX], [0.0, 1.0]])
    if name == "brightness":
        return frames + sign * level * BRIGHTNESS_MAX
    if name == "contrast":
        mean = frames.mean(axis=(0, 2, 3), keepdims=True)
        return mean + (frames - mean) * (1.0 + sign * level * CONTRAST_MAX)
    if name == "cutout":
        side = round(level * CUTOUT_MAX_FRAC * h)
        if side > 0:
            oy = int(gen.integers(0, h - side + 1))
            ox = int(gen.integers(0, w - side + 1))
            frames = frames.copy()
            frames[:, :, oy : oy + side, ox : ox + side] = 0.0
        return frames
    raise InputError(f"unknown pixel op {name!r}")


def _affine(frames: np.ndarray, matrix, offset) -> np.ndarray:
    """Shared 2-D affine over every (frame, channel) plane in one call."""
    t, c, h, w = frames.shape
    mat3 = np.zeros((3, 3), dtype=np.float64)
    mat3[0, 0] = 1.0
    mat3[1:, 1:] = np.asarray(matrix, dtype=np.float64)
    off3 = np.array([0.0, offset[0], offset[1]], dtype=np.float64)
    out = ndimage.affine_transform(
        frames.reshape(t * c, h, w), mat3, offset=off3, order=1, mode="nearest"
    )
    return out.reshape(t, c, h, w).astype(np.float32)


def _affine_centered(frames: np.ndarray, matrix) -> np.ndarray:
    """Affine that maps the frame center to itself."""
    h, w = frames.shape[2:]
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    mat = np.asarray(matrix, dtype=np.float64)
    offset = center - mat @ center
    return _affine(frames, mat, offset)
