"""Synthetic surgical-workflow videos and their on-disk format.

Phase sequences follow a semi-Markov chain: a phase dwells for a
negative-binomial number of frames, then jumps per a row-stochastic
transition matrix (self-transitions excluded), which allows revisits like the
repetition-heavy procedures this stands in for. Each phase renders as a fixed
spatial pattern plus per-frame Gaussian noise; an ambiguous pair of phases
shares one render spec, so those phases can only be told apart from temporal
context.

On disk, a video is a directory of raw little-endian float32 frames with a
JSON sidecar and a frame_index,phase_id CSV; a dataset is four split
directories plus a manifest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .rng import RngStream

SPLITS = ("train_labeled", "train_unlabeled", "val", "test")

PATTERNS = ("grating_h", "grating_v", "grating_d", "checker", "blob", "rings")


@dataclass
class PhaseRender:
    pattern: str
    intensity: float
    frequency: float

    def to_dict(self):
        return {"pattern": self.pattern, "intensity": self.intensity, "frequency": self.frequency}


@dataclass
class WorkflowModel:
    num_phases: int
    transition: np.ndarray  # (C, C), rows sum to 1, zero diagonal
    dwell_mean: np.ndarray  # per phase, frames
    dwell_shape: np.ndarray  # negative-binomial r per phase
    renders: list[PhaseRender]
    ambiguous_pairs: list[tuple[int, int]]
    noise_sigma: float = 0.08
    frame_size: int = 32
    channels: int = 1

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.dwell_mean = np.asarray(self.dwell_mean, dtype=np.float64)
        self.dwell_shape = np.asarray(self.dwell_shape, dtype=np.float64)
        c = self.num_phases
        if self.transition.shape != (c, c):
            raise ConfigurationError("transition matrix must be (C, C)")
        if not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigurationError("transition rows must sum to 1")
        if np.any(np.diag(self.transition) != 0.0):
            raise ConfigurationError("self-transitions are excluded")
        if np.any(self.dwell_mean < 1.0):
            raise ConfigurationError("dwell means must be >= 1 frame")
        if len(self.renders) != c:
            raise ConfigurationError("one render spec per phase required")
        if not self.ambiguous_pairs:
            raise ConfigurationError("at least one ambiguous phase pair is required")
        for a, b in self.ambiguous_pairs:
            if self.renders[a].to_dict() != self.renders[b].to_dict():
                raise ConfigurationError(f"ambiguous pair ({a}, {b}) must share a render spec")

    def to_dict(self):
        return {
            "num_phases": self.num_phases,
            "transition": self.transition.tolist(),
            "dwell_mean": self.dwell_mean.tolist(),
            "dwell_shape": self.dwell_shape.tolist(),
            "renders": [r.to_dict() for r in self.renders],
            "ambiguous_pairs": [list(p) for p in self.ambiguous_pairs],
            "noise_sigma": self.noise_sigma,
            "frame_size": self.frame_size,
            "channels": self.channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkflowModel":
        return cls(
            num_phases=d["num_phases"],
            transition=np.array(d["transition"]),
            dwell_mean=np.array(d["dwell_mean"]),
            dwell_shape=np.array(d["dwell_shape"]),
            renders=[PhaseRender(**r) for r in d["renders"]],
            ambiguous_pairs=[tuple(p) for p in d["ambiguous_pairs"]],
            noise_sigma=d["noise_sigma"],
            frame_size=d["frame_size"],
            channels=d["channels"],
        )


@dataclass
class LabeledVideo:
    frames: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    video_id: str
    fps: float = 1.0

    def __post_init__(self):
        if len(self.frames) != len(self.labels):
            raise DataError(
                f"{self.video_id}: {len(self.frames)} frames vs {len(self.labels)} labels"
            )


_PATTERN_ORDER = ("grating_h", "checker", "blob", "rings", "grating_d", "grating_v")


def make_workflow(
    num_phases: int = 5, frame_size: int = 32, noise_sigma: float = 0.08
) -> WorkflowModel:
    """Workflow whose phases 1 and 3 share a render and differ only in what
    precedes them (1 follows 0; 3 follows 2). Requires >= 4 phases. The chain
    runs forward with revisits: phase 3 may fall back to 2, and the last phase
    returns to 2 or restarts at 0."""
    c = num_phases
    if c < 4:
        raise ConfigurationError("workflow needs >= 4 phases for a context-resolvable pair")
    transition = np.zeros((c, c))
    for i in range(c - 1):
        transition[i, i + 1] = 1.0
    if 3 < c - 1:
        transition[3] = 0.0
        transition[3, 2], transition[3, 4] = 0.35, 0.65
    transition[c - 1, 2], transition[c - 1, 0] = 0.7, 0.3
    renders = [
        PhaseRender(
            _PATTERN_ORDER[i % len(_PATTERN_ORDER)],
            0.9 - 0.1 * (i // len(_PATTERN_ORDER)),
            1.5 + 0.5 * (i % 3),
        )
        for i in range(c)
    ]
    renders[3] = PhaseRender(renders[1].pattern, renders[1].intensity, renders[1].frequency)
    dwell = np.array([12.0 if i in (1, 3) else 20.0 + 2.0 * (i % 3) for i in range(c)])
    return WorkflowModel(
        num_phases=c,
        transition=transition,
        dwell_mean=dwell,
        dwell_shape=np.full(c, 4.0),
        renders=renders,
        ambiguous_pairs=[(1, 3)],
        noise_sigma=noise_sigma,
        frame_size=frame_size,
    )


def default_workflow(frame_size: int = 32, noise_sigma: float = 0.08) -> WorkflowModel:
    return make_workflow(5, frame_size=frame_size, noise_sigma=noise_sigma)


def render_phase(spec: PhaseRender, frame_size: int, channels: int) -> np.ndarray:
    """Deterministic base image of one phase, values in [0, 1]."""
    h = w = frame_size
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    f = spec.frequency
    if spec.pattern == "grating_h":
        base = np.sin(2 * math.pi * f * y / h)
    elif spec.pattern == "grating_v":
        base = np.sin(2 * math.pi * f * x / w)
    elif spec.pattern == "grating_d":
        base = np.sin(2 * math.pi * f * (x + y) / (h + w))
    elif spec.pattern == "checker":
        base = np.sin(2 * math.pi * f * y / h) * np.sin(2 * math.pi * f * x / w)
    elif spec.pattern == "blob":
        r2 = (y - (h - 1) / 2) ** 2 + (x - (w - 1) / 2) ** 2
        sigma = h / (2.0 * f)
        base = 2.0 * np.exp(-r2 / (2 * sigma**2)) - 1.0
    elif spec.pattern == "rings":
        r = np.sqrt((y - (h - 1) / 2) ** 2 + (x - (w - 1) / 2) ** 2)
        base = np.sin(2 * math.pi * f * r / h)
    else:
        raise ConfigurationError(f"unknown pattern {spec.pattern!r}")
    img = 0.5 + 0.5 * spec.intensity * base
    return np.broadcast_to(img.astype(np.float32), (channels, h, w)).copy()


def generate_video(
    model: WorkflowModel, length: int, rng: RngStream, video_id: str = "video"
) -> LabeledVideo:
    """Sample a semi-Markov phase track and render noisy frames for it."""
    if length < 1:
        raise ConfigurationError("video length must be >= 1")
    gen = rng.generator()
    labels = np.empty(length, dtype=np.int64)
    pos, phase = 0, 0
    while pos < length:
        mean, shape = model.dwell_mean[phase], model.dwell_shape[phase]
        if shape <= 0:  # sentinel: deterministic dwell
            dwell = int(round(mean))
        else:
            extra = max(mean - 1.0, 1e-9)
            p = shape / (shape + extra)
            dwell = 1 + int(gen.negative_binomial(shape, p))
        take = min(dwell, length - pos)
        labels[pos : pos + take] = phase
        pos += take
        phase = int(gen.choice(model.num_phases, p=model.transition[phase]))
    base = np.stack(
        [render_phase(r, model.frame_size, model.channels) for r in model.renders]
    )
    noise = gen.normal(0.0, model.noise_sigma, size=(length, model.channels, model.frame_size, model.frame_size))
    frames = np.clip(base[labels] + noise, 0.0, 1.0).astype(np.float32)
    return LabeledVideo(frames=frames, labels=labels, video_id=video_id)


# -- on-disk format ----------------------------------------------------------


def save_video(directory, video: LabeledVideo) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.ascontiguousarray(video.frames, dtype="<f4")
    (directory / "frames.bin").write_bytes(frames.tobytes())
    sidecar = {
        "shape": list(frames.shape),
        "dtype": "float32",
        "order": "NCHW",
        "fps": video.fps,
        "video_id": video.video_id,
    }
    (directory / "frames.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    with open(directory / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "phase_id"])
        for i, phase in enumerate(video.labels):
            writer.writerow([i, int(phase)])


def load_video(directory) -> LabeledVideo:
    directory = Path(directory)
    sidecar_path = directory / "frames.json"
    if not sidecar_path.exists():
        raise DataError(f"missing sidecar {sidecar_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text())
        shape = tuple(sidecar["shape"])
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{sidecar_path}: malformed sidecar ({exc})") from exc
    if sidecar.get("dtype") != "float32":
        raise DataError(f"{sidecar_path}: unsupported dtype {sidecar.get('dtype')!r}")
    raw = (directory / "frames.bin").read_bytes()
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(raw) != expected:
        raise DataError(f"{directory}: frames.bin has {len(raw)} bytes, expected {expected}")
    frames = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    labels = _read_labels(directory / "labels.csv", n_frames=shape[0])
    return LabeledVideo(
        frames=frames,
        labels=labels,
        video_id=sidecar.get("video_id", directory.name),
        fps=float(sidecar.get("fps", 1.0)),
    )


def _read_labels(path: Path, n_frames: int) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing annotations {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame_index", "phase_id"]:
        raise DataError(f"{path}: expected header frame_index,phase_id")
    body = rows[1:]
    if len(body) != n_frames:
        raise DataError(f"{path}: {len(body)} annotation rows for {n_frames} frames")
    labels = np.empty(n_frames, dtype=np.int64)
    for i, row in enumerate(body):
        if len(row) != 2 or int(row[0]) != i:
            raise DataError(f"{path}: malformed row {i}: {row}")
        labels[i] = int(row[1])
    return labels


def dataset_statistics(videos: list[LabeledVideo]):
    """Per-channel pixel mean and (population) std over a list of videos."""
    stacked = np.concatenate([v.frames for v in videos], axis=0)
    mean = stacked.mean(axis=(0, 2, 3))
    std = stacked.std(axis=(0, 2, 3))
    return mean.astype(np.float64), std.astype(np.float64)


def normalization_stats(mean: np.ndarray, std: np.ndarray):
    """Stats as used for normalization: zero stds are guarded to 1."""
    std = np.asarray(std, dtype=np.float64).copy()
    std[std == 0.0] = 1.0
    return np.asarray(mean, dtype=np.float64), std


# -- benchmark tree ----------------------------------------------------------


def make_benchmark(
    out_dir,
    seed: int = 0,
    num_train: int = 24,
    num_val: int = 6,
    num_test: int = 10,
    labeled_fraction: float = 0.1,
    length_range: tuple[int, int] = (150, 250),
    workflow: WorkflowModel | None = None,
) -> dict:
    """Generate the default benchmark tree; returns the manifest dict.

    The labeled subset is floor(fraction * num_train) videos (at least 1) and
    must jointly contain every phase; violating draws are resampled with a
    derived stream so the result stays a pure function of the seed.
    """
    out_dir = Path(out_dir)
    workflow = workflow or default_workflow()
    root = RngStream(seed)

    videos: dict[str, LabeledVideo] = {}
    roles = [("train", num_train), ("val", num_val), ("test", num_test)]
    ids_by_role: dict[str, list[str]] = {}
    counter = 0
    for role_idx, (role, count) in enumerate(roles):
        ids = []
        for j in range(count):
            vid = f"video_{counter:04d}"
            length = int(root.child(1, role_idx, j).generator().integers(*length_range))
            videos[vid] = generate_video(
                workflow, length, root.child(2, role_idx, j), video_id=vid
            )
            ids.append(vid)
            counter += 1
        ids_by_role[role] = ids

    train_ids = ids_by_role["train"]
    n_labeled = max(1, int(math.floor(labeled_fraction * num_train)))
    n_labeled = min(n_labeled, num_train)
    for attempt in range(1000):
        gen = root.child(3, attempt).generator()
        picked = sorted(gen.choice(num_train, size=n_labeled, replace=False).tolist())
        labeled_ids = [train_ids[i] for i in picked]
        present = np.unique(np.concatenate([videos[v].labels for v in labeled_ids]))
        if len(present) == workflow.num_phases:
            break
    else:
        raise DataError("could not draw a labeled subset containing every phase")

    unlabeled_ids = [v for v in train_ids if v not in labeled_ids]
    splits = {
        "train_labeled": labeled_ids,
        "train_unlabeled": unlabeled_ids,
        "val": ids_by_role["val"],
        "test": ids_by_role["test"],
    }
    for split, ids in splits.items():
        for vid in ids:
            save_video(out_dir / split / vid, videos[vid])

    mean, std = dataset_statistics([videos[v] for v in labeled_ids])
    manifest = {
        "seed": seed,
        "labeled_fraction": labeled_fraction,
        "splits": splits,
        "generator": workflow.to_dict(),
        "stats": {"mean": mean.tolist(), "std": std.tolist()},
        "num_phases": workflow.num_phases,
        "frame_size": workflow.frame_size,
        "channels": workflow.channels,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"missing manifest {path}")
    return json.loads(path.read_text())


def load_split(dataset_dir, split: str) -> list[LabeledVideo]:
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
    manifest = load_manifest(dataset_dir)
    return [load_video(Path(dataset_dir) / split / vid) for vid in manifest["splits"][split]]
