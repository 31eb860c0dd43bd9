import numpy as np
import pytest

from semiphase.augment import (
    AugmentPolicy,
    apply_pixel_policy,
    strong_policy,
    strong_view,
    weak_policy,
    weak_view,
)
from semiphase.errors import InputError
from semiphase.model import FrameWindow
from semiphase.rng import RngStream


def indexed_video(n=128, size=8):
    """Video whose frame i is constant-valued i (easy index bookkeeping)."""
    video = np.zeros((n, 1, size, size), dtype=np.float32)
    video += np.arange(n, dtype=np.float32)[:, None, None, None]
    return video


def frame_values(window):
    return window.frames[:, 0, 0, 0].astype(int).tolist()


def test_weak_view_index_arithmetic():
    window = weak_view(indexed_video(), 20, 16)
    assert frame_values(window) == list(range(5, 21))
    assert window.query_index == 20


def test_weak_view_pads_at_video_start():
    assert frame_values(weak_view(indexed_video(), 0, 16)) == [0] * 16
    assert frame_values(weak_view(indexed_video(), 3, 16)) == [0] * 13 + [1, 2, 3]


def test_weak_view_consecutive_overlap():
    video = indexed_video()
    for t in range(16, 40):
        a = frame_values(weak_view(video, t, 16))
        b = frame_values(weak_view(video, t + 1, 16))
        assert a[1:] == b[:-1]  # exactly T-1 shared frames


def test_weak_view_range_check():
    with pytest.raises(InputError):
        weak_view(indexed_video(8), 8, 4)
    with pytest.raises(InputError):
        weak_view(indexed_video(8), -1, 4)


def test_strong_view_large_history():
    window = strong_view(indexed_video(128), 100, 16, RngStream(0))
    values = frame_values(window)
    assert values[-1] == 100
    history = values[:-1]
    assert len(set(history)) == 15  # without replacement
    assert history == sorted(history)
    assert all(0 <= v < 100 for v in history)


def test_strong_view_small_history_with_replacement():
    window = strong_view(indexed_video(64), 5, 16, RngStream(3))
    values = frame_values(window)
    assert values[-1] == 5
    assert all(0 <= v <= 4 for v in values[:-1])
    assert values[:-1] == sorted(values[:-1])


def test_strong_view_deterministic_replay():
    video = indexed_video()
    a = strong_view(video, 77, 16, RngStream(9, (1, 2)))
    b = strong_view(video, 77, 16, RngStream(9, (1, 2)))
    assert np.array_equal(a.frames, b.frames)


def test_strong_view_properties_random_cases(rng):
    video = indexed_video(200)
    for case in range(100):
        t = int(rng.integers(1, 200))
        values = frame_values(strong_view(video, t, 8, RngStream(5, (case,))))
        assert values[-1] == t
        assert all(v < t for v in values[:-1])


def test_zero_ops_is_normalized_identity(rng):
    frames = rng.random((4, 1, 8, 8)).astype(np.float32)
    window = FrameWindow(frames=frames, query_index=3)
    policy = AugmentPolicy(kind="weak", pixel_ops=[], num_ops=0, crop_fraction=1.0)
    mean, std = np.array([0.25]), np.array([0.5])
    out = apply_pixel_policy(window, policy, RngStream(0), (mean, std))
    np.testing.assert_allclose(out.frames, (frames - 0.25) / 0.5, atol=1e-6)


def test_rotate_magnitude_zero_is_identity(rng):
    frames = rng.random((2, 1, 16, 16)).astype(np.float32)
    window = FrameWindow(frames=frames, query_index=1)
    policy = AugmentPolicy(kind="strong", pixel_ops=[("rotate", 0.0)], num_ops=1)
    out = apply_pixel_policy(window, policy, RngStream(1), None)
    np.testing.assert_allclose(out.frames, frames, atol=1e-6)


def test_cutout_zeros_a_shared_square():
    frames = np.ones((3, 1, 32, 32), dtype=np.float32)
    window = FrameWindow(frames=frames, query_index=2)
    policy = AugmentPolicy(kind="strong", pixel_ops=[("cutout", 9.0)], num_ops=1)
    out = apply_pixel_policy(window, policy, RngStream(4), None).frames
    side = round(0.9 * 0.5 * 32)
    for t in range(3):
        zero_rows, zero_cols = np.where(out[t, 0] == 0.0)
        assert len(zero_rows) == side * side
        assert zero_rows.max() - zero_rows.min() + 1 == side
        assert zero_cols.max() - zero_cols.min() + 1 == side
        assert np.array_equal(out[t], out[0])  # identical across the window


def test_policy_preserves_shape_and_finiteness(rng):
    policy = strong_policy()
    mean, std = np.array([0.5]), np.array([0.25])
    for case in range(20):
        frames = rng.random((5, 1, 16, 16)).astype(np.float32)
        window = FrameWindow(frames=frames, query_index=4)
        out = apply_pixel_policy(window, policy, RngStream(7, (case,)), (mean, std))
        assert out.frames.shape == frames.shape
        assert np.isfinite(out.frames).all()


def test_policy_replay_bit_exact(rng):
    frames = rng.random((4, 1, 16, 16)).astype(np.float32)
    window = FrameWindow(frames=frames, query_index=3)
    for policy in (weak_policy(), strong_policy()):
        a = apply_pixel_policy(window, policy, RngStream(11, (3,)), None)
        b = apply_pixel_policy(window, policy, RngStream(11, (3,)), None)
        assert np.array_equal(a.frames, b.frames)


def test_policy_validation():
    with pytest.raises(InputError):
        AugmentPolicy(pixel_ops=[("sharpen", 5.0)])
    with pytest.raises(InputError):
        AugmentPolicy(pixel_ops=[("rotate", 11.0)])
    with pytest.raises(InputError):
        AugmentPolicy(num_ops=-1)


def test_policy_json_round_trip():
    policy = strong_policy()
    again = AugmentPolicy.from_dict(policy.to_dict())
    assert again == policy
