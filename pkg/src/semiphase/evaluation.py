"""Online sliding-window inference and phase-recognition metrics.

Prediction at frame t uses the consecutive window ending at t (left-padded at
the video start), optionally refined by the causal TCN over the running
feature sequence, so the whole pipeline is strictly causal. Metrics follow
confusion-matrix definitions per video and per phase; phases absent from both
prediction and ground truth of a video are excluded from that video's
phase-level averages, and 0/0 inside a present phase counts as 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InputError
from .model import PhaseModel
from .synthdata import LabeledVideo
from .tcn import TemporalRefiner

# distinguishable colors for ribbon rendering (RGB)
_PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
]


@dataclass
class PredictionTrack:
    video_id: str
    phases: np.ndarray  # (N,) predicted phase ids
    confidence: np.ndarray  # (N,) max probability per frame


@torch.no_grad()
def online_predict(
    model: PhaseModel,
    video: LabeledVideo | np.ndarray,
    stats,
    refiner: TemporalRefiner | None = None,
    batch_size: int = 64,
) -> PredictionTrack:
    """Frame-wise phases for one video under the online (causal) protocol."""
    frames = video.frames if isinstance(video, LabeledVideo) else np.asarray(video)
    video_id = video.video_id if isinstance(video, LabeledVideo) else "video"
    if len(frames) == 0:
        raise InputError("cannot predict on an empty video")
    cfg = model.config
    mean = np.asarray(stats[0], dtype=np.float32).reshape(1, -1, 1, 1)
    std = np.maximum(np.asarray(stats[1], dtype=np.float32), 1e-6).reshape(1, -1, 1, 1)
    t_len = cfg.window_len
    n = len(frames)

    features = []
    probs = []
    for start in range(0, n, batch_size):
        ts = range(start, min(start + batch_size, n))
        windows = np.stack(
            [frames[[max(0, i) for i in range(t - t_len + 1, t + 1)]] for t in ts]
        )
        windows = (windows - mean) / std
        batch = torch.from_numpy(windows.astype(np.float32))
        feats, p = model(batch)
        features.append(feats)
        probs.append(p)
    probs = torch.cat(probs)
    if refiner is not None:
        probs = refiner.refine(torch.cat(features))
    probs = probs.numpy()
    return PredictionTrack(
        video_id=video_id,
        phases=probs.argmax(axis=1).astype(np.int64),
        confidence=probs.max(axis=1).astype(np.float64),
    )


@dataclass
class VideoMetrics:
    video_id: str
    accuracy: float
    per_phase: dict  # phase -> {"precision", "recall", "jaccard", "f1"} for present phases
    phase_mean: dict  # metric -> mean over present phases


@dataclass
class MetricsReport:
    videos: list[VideoMetrics]
    aggregate: dict  # metric -> {"mean", "std"} across videos
    per_phase_f1: dict  # phase -> mean F1 across videos where the phase occurs
    conventions: dict = field(
        default_factory=lambda: {
            "absent_phases_excluded": True,
            "zero_over_zero_is_zero": True,
            "std_ddof": 0,
        }
    )

    def to_dict(self) -> dict:
        return {
            "videos": [
                {
                    "video_id": v.video_id,
                    "accuracy": v.accuracy,
                    "per_phase": {str(k): dict(m) for k, m in v.per_phase.items()},
                    "phase_mean": dict(v.phase_mean),
                }
                for v in self.videos
            ],
            "aggregate": {k: dict(v) for k, v in self.aggregate.items()},
            "per_phase_f1": {str(k): v for k, v in self.per_phase_f1.items()},
            "conventions": dict(self.conventions),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def compute_metrics(
    tracks: list[PredictionTrack], ground_truth: list[np.ndarray], num_classes: int
) -> MetricsReport:
    """Accuracy per video plus phase-level precision/recall/Jaccard/F1."""
    if len(tracks) != len(ground_truth):
        raise InputError(f"{len(tracks)} tracks vs {len(ground_truth)} ground-truth label sets")
    videos = []
    metric_names = ("precision", "recall", "jaccard", "f1")
    for track, gt in zip(tracks, ground_truth):
        gt = np.asarray(gt)
        pred = np.asarray(track.phases)
        if len(gt) != len(pred):
            raise InputError(
                f"{track.video_id}: {len(pred)} predictions vs {len(gt)} labels"
            )
        accuracy = float((pred == gt).mean())
        per_phase = {}
        for c in range(num_classes):
            in_gt, in_pred = gt == c, pred == c
            if not (in_gt.any() or in_pred.any()):
                continue  # absent from both: excluded from this video
            tp = int((in_gt & in_pred).sum())
            fp = int((~in_gt & in_pred).sum())
            fn = int((in_gt & ~in_pred).sum())
            precision = _ratio(tp, tp + fp)
            recall = _ratio(tp, tp + fn)
            per_phase[c] = {
                "precision": precision,
                "recall": recall,
                "jaccard": _ratio(tp, tp + fp + fn),
                "f1": _ratio(2 * precision * recall, precision + recall)
                if precision + recall > 0
                else 0.0,
            }
        phase_mean = {
            name: float(np.mean([m[name] for m in per_phase.values()]))
            for name in metric_names
        }
        videos.append(
            VideoMetrics(
                video_id=track.video_id, accuracy=accuracy,
                per_phase=per_phase, phase_mean=phase_mean,
            )
        )

    aggregate = {}
    acc = np.array([v.accuracy for v in videos])
    aggregate["accuracy"] = {"mean": float(acc.mean()), "std": float(acc.std())}
    for name in metric_names:
        vals = np.array([v.phase_mean[name] for v in videos])
        aggregate[name] = {"mean": float(vals.mean()), "std": float(vals.std())}

    per_phase_f1 = {}
    for c in range(num_classes):
        vals = [v.per_phase[c]["f1"] for v in videos if c in v.per_phase]
        if vals:
            per_phase_f1[c] = float(np.mean(vals))
    return MetricsReport(videos=videos, aggregate=aggregate, per_phase_f1=per_phase_f1)


def export_ribbon(
    track: PredictionTrack,
    ground_truth: np.ndarray,
    csv_path,
    image_path=None,
    px_per_frame: int = 2,
    band_height: int = 12,
) -> None:
    """Write the frame,gt_phase,pred_phase CSV and optionally a two-row
    (ground truth above, prediction below) ribbon image."""
    gt = np.asarray(ground_truth)
    if len(gt) != len(track.phases):
        raise InputError("track and ground truth lengths differ")
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "gt_phase", "pred_phase"])
        for i, (g, p) in enumerate(zip(gt, track.phases)):
            writer.writerow([i, int(g), int(p)])
    if image_path is None:
        return
    n = len(gt)
    img = np.zeros((2 * band_height, n * px_per_frame, 3), dtype=np.uint8)
    for i in range(n):
        sl = slice(i * px_per_frame, (i + 1) * px_per_frame)
        img[:band_height, sl] = _PALETTE[int(gt[i]) % len(_PALETTE)]
        img[band_height:, sl] = _PALETTE[int(track.phases[i]) % len(_PALETTE)]
    Image.fromarray(img).save(image_path)


def read_ribbon_csv(path):
    """Parse a ribbon CSV back into (gt, pred) arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["frame", "gt_phase", "pred_phase"]:
        raise InputError(f"{path}: expected header frame,gt_phase,pred_phase")
    gt = np.array([int(r[1]) for r in rows[1:]], dtype=np.int64)
    pred = np.array([int(r[2]) for r in rows[1:]], dtype=np.int64)
    return gt, pred
