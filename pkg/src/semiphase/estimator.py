"""Scikit-learn-style estimator facade.

PhaseRecognizer wraps the whole training recipe behind fit/predict so the
model composes with sklearn tooling (get_params/set_params/clone). X is a
list of videos, each an (N, C, H, W) or (N, H, W) array; y is a list of
per-frame phase-id arrays aligned with X.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import ModelConfig, RunConfig, TrainConfig
from .evaluation import online_predict
from .synthdata import LabeledVideo
from .trainer import DatasetBundle, Trainer
from .validation import check_labels, check_video, check_video_list


class PhaseRecognizer(BaseEstimator):
    """Online per-frame phase classifier trained semi-supervised.

    Parameters mirror the run configuration; see TrainConfig/ModelConfig for
    semantics. `mode` picks the ablation: "sup", "sup+tcr", "sup+tcr+clp",
    or "sup+tcr+clp+tcn".
    """

    def __init__(
        self,
        num_phases=5,
        mode="sup+tcr+clp",
        frame_size=32,
        channels=1,
        patch_size=8,
        embed_dim=64,
        depth=2,
        heads=4,
        window_len=16,
        warmup_epochs=3,
        semi_epochs=12,
        batch_size=16,
        base_lr=0.005,
        lr_halving_epochs=(8, 12),
        momentum=0.9,
        weight_decay=0.001,
        delta=0.6,
        alpha=0.9,
        eta=0.9,
        margin=0.3,
        k_neg=3,
        labeled_stride=1,
        unlabeled_stride=4,
        seed=0,
    ):
        self.num_phases = num_phases
        self.mode = mode
        self.frame_size = frame_size
        self.channels = channels
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.depth = depth
        self.heads = heads
        self.window_len = window_len
        self.warmup_epochs = warmup_epochs
        self.semi_epochs = semi_epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.lr_halving_epochs = lr_halving_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.delta = delta
        self.alpha = alpha
        self.eta = eta
        self.margin = margin
        self.k_neg = k_neg
        self.labeled_stride = labeled_stride
        self.unlabeled_stride = unlabeled_stride
        self.seed = seed

    def _configs(self):
        model = ModelConfig(
            frame_size=self.frame_size,
            channels=self.channels,
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depth=self.depth,
            heads=self.heads,
            window_len=self.window_len,
            num_classes=self.num_phases,
        )
        train = TrainConfig(
            mode=self.mode,
            warmup_epochs=self.warmup_epochs,
            semi_epochs=self.semi_epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            lr_halving_epochs=tuple(self.lr_halving_epochs),
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            delta=self.delta,
            alpha=self.alpha,
            eta=self.eta,
            margin=self.margin,
            k_neg=self.k_neg,
            labeled_stride=self.labeled_stride,
            unlabeled_stride=self.unlabeled_stride,
            seed=self.seed,
        )
        return model, train

    def fit(self, X, y, unlabeled=None):
        """Train on labeled videos X with per-frame labels y, optionally
        leveraging unlabeled videos. Returns self."""
        videos = check_video_list(X)
        if y is None or len(videos) != len(y):
            raise ValueError("y must provide one label array per video")
        labeled = []
        for i, (frames, labels) in enumerate(zip(videos, y)):
            arr = check_video(frames, channels=self.channels, frame_size=self.frame_size)
            lab = check_labels(labels, len(arr), num_classes=self.num_phases)
            labeled.append(LabeledVideo(frames=arr, labels=lab, video_id=f"labeled_{i:04d}"))
        unlabeled_videos = []
        for i, frames in enumerate(check_video_list(unlabeled) if unlabeled is not None else []):
            arr = check_video(frames, channels=self.channels, frame_size=self.frame_size)
            unlabeled_videos.append(
                LabeledVideo(
                    frames=arr,
                    labels=np.zeros(len(arr), dtype=np.int64),  # placeholder, never read
                    video_id=f"unlabeled_{i:04d}",
                )
            )
        model_cfg, train_cfg = self._configs()
        bundle = DatasetBundle.from_videos(labeled, unlabeled_videos, self.num_phases)
        trainer = Trainer(RunConfig(model=model_cfg, train=train_cfg), bundle=bundle)
        state = trainer.execute()
        self.teacher_model_ = state.teacher
        self.student_model_ = state.student
        self.refiner_ = state.refiner
        self.bank_ = state.bank
        self.stats_ = bundle.stats
        self.classes_ = np.arange(self.num_phases)
        return self

    def _check_fitted(self):
        if not hasattr(self, "teacher_model_"):
            raise NotFittedError("PhaseRecognizer must be fitted before predicting")

    def predict(self, X):
        """Per-frame phase ids; a list in, a list out (single video in, array out)."""
        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim in (3, 4)
        tracks = [
            online_predict(
                self.teacher_model_,
                check_video(v, channels=self.channels, frame_size=self.frame_size),
                self.stats_,
                refiner=self.refiner_,
            ).phases
            for v in check_video_list(X)
        ]
        return tracks[0] if single else tracks

    def predict_proba(self, X):
        """Per-frame phase probability matrices (online, causal)."""
        import torch

        self._check_fitted()
        single = isinstance(X, np.ndarray) and X.ndim in (3, 4)
        outputs = []
        for v in check_video_list(X):
            arr = check_video(v, channels=self.channels, frame_size=self.frame_size)
            mean, std = self.stats_
            mean = np.asarray(mean, dtype=np.float32).reshape(1, -1, 1, 1)
            std = np.maximum(np.asarray(std, dtype=np.float32), 1e-6).reshape(1, -1, 1, 1)
            t_len = self.window_len
            probs = []
            with torch.no_grad():
                feats_all = []
                for start in range(0, len(arr), 64):
                    ts = range(start, min(start + 64, len(arr)))
                    wins = np.stack(
                        [arr[[max(0, i) for i in range(t - t_len + 1, t + 1)]] for t in ts]
                    )
                    feats, p = self.teacher_model_(
                        torch.from_numpy(((wins - mean) / std).astype(np.float32))
                    )
                    feats_all.append(feats)
                    probs.append(p)
                probs = torch.cat(probs)
                if self.refiner_ is not None:
                    probs = self.refiner_.refine(torch.cat(feats_all))
            outputs.append(probs.numpy())
        return outputs[0] if single else outputs

    def score(self, X, y):
        """Mean per-video frame accuracy."""
        self._check_fitted()
        videos = check_video_list(X)
        preds = self.predict(videos)
        accs = []
        for pred, labels in zip(preds, y):
            lab = check_labels(labels, len(pred))
            accs.append(float((pred == lab).mean()))
        return float(np.mean(accs))
