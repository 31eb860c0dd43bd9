"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

from .errors import InputError


def check_video(frames, channels: int | None = None, frame_size: int | None = None) -> np.ndarray:
    """Coerce one video to a finite float32 (N, C, H, W) array."""
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:  # (N, H, W) single-channel shorthand
        arr = arr[:, None]
    if arr.ndim != 4:
        raise InputError(f"video must be (N, C, H, W) or (N, H, W); got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise InputError("video has no frames")
    if not np.isfinite(arr).all():
        raise InputError("video contains non-finite values")
    n, c, h, w = arr.shape
    if channels is not None and c != channels:
        raise InputError(f"video has {c} channels, expected {channels}")
    if frame_size is not None and (h, w) != (frame_size, frame_size):
        raise InputError(f"video frames are {h}x{w}, expected {frame_size}x{frame_size}")
    if h != w:
        raise InputError(f"frames must be square; got {h}x{w}")
    return arr


def check_labels(labels, n_frames: int, num_classes: int | None = None) -> np.ndarray:
    """Coerce per-frame labels to int64 and range-check them."""
    arr = np.asarray(labels)
    if arr.ndim != 1 or len(arr) != n_frames:
        raise InputError(f"labels must be one id per frame ({n_frames}); got shape {arr.shape}")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise InputError("labels must be nonnegative phase ids")
    if num_classes is not None and arr.max() >= num_classes:
        raise InputError(f"label {arr.max()} outside [0, {num_classes})")
    return arr


def check_video_list(X) -> list:
    """Accept a single video or a list of videos; always return a list."""
    if isinstance(X, np.ndarray) and X.ndim in (3, 4):
        return [X]
    if isinstance(X, (list, tuple)):
        return list(X)
    raise InputError("expected a video array or a list of video arrays")
