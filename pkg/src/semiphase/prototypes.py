"""Class-prototype bank in normalized feature space.

Prototypes start as per-class means of normalized labeled features, evolve by
EMA, and anchor a triplet loss: pull a feature toward its class prototype,
push it from the mean of its k nearest foreign prototypes by a margin. The
bank is a gradient-free constant inside the loss; only features carry grads.
"""

from __future__ import annotations

import hashlib

import torch

from .errors import InputError, StateError
from .model import normalize_features


class PrototypeBank:
    def __init__(
        self,
        num_classes: int,
        embed_dim: int,
        eta: float = 0.9,
        margin: float = 0.3,
        k_neg: int = 3,
        dtype=torch.float32,
    ):
        if not 0.0 <= eta < 1.0:
            raise InputError("eta must lie in [0, 1)")
        if margin <= 0:
            raise InputError("margin must be positive")
        if k_neg < 1:
            raise InputError("k_neg must be >= 1")
        self.num_classes = num_classes
        self.embed_dim = embed_dim
        self.eta = eta
        self.margin = margin
        self.k_neg = k_neg
        self.vectors = torch.zeros(num_classes, embed_dim, dtype=dtype)
        self.initialized = False

    # -- lifecycle ---------------------------------------------------------

    def init_from_features(self, features: torch.Tensor, classes: torch.Tensor) -> None:
        """Set each prototype to the mean of its class's normalized features."""
        classes = classes.to(torch.long)
        for c in range(self.num_classes):
            mask = classes == c
            if not bool(mask.any()):
                raise InputError(f"prototype init: class {c} has no labeled features")
            self.vectors[c] = features[mask].mean(dim=0).to(self.vectors.dtype)
        self.initialized = True

    def _require_init(self):
        if not self.initialized:
            raise StateError("prototype bank has not been initialized")

    # -- queries -----------------------------------------------------------

    def nearest_negatives(self, feature: torch.Tensor, label: int) -> list[int]:
        """The min(k_neg, C-1) non-target classes closest to the feature,
        ascending by Euclidean distance, ties broken by lower class index."""
        self._require_init()
        dists = torch.linalg.vector_norm(self.vectors - feature.detach(), dim=1)
        order = sorted(
            (c for c in range(self.num_classes) if c != label),
            key=lambda c: (float(dists[c]), c),
        )
        return order[: min(self.k_neg, self.num_classes - 1)]

    def triplet_loss(self, feature: torch.Tensor, label: int) -> torch.Tensor:
        """max(d(f, proto_y) - d(f, mean of k nearest negatives) + margin, 0)."""
        self._require_init()
        # snapshot: the loss must keep reading this state even if the bank
        # is EMA-updated before backward runs
        protos = self.vectors.detach().clone().to(feature.dtype)
        neg = protos[self.nearest_negatives(feature, label)].mean(dim=0)
        d_pos = torch.linalg.vector_norm(feature - protos[label])
        d_neg = torch.linalg.vector_norm(feature - neg)
        return torch.clamp(d_pos - d_neg + self.margin, min=0.0)

    def triplet_loss_batch(self, features: torch.Tensor, classes: torch.Tensor) -> torch.Tensor:
        """Vectorized per-sample triplet losses for (N, D) features."""
        self._require_init()
        protos = self.vectors.detach().clone().to(features.dtype)  # snapshot, as above
        # exact pairwise distances (the matmul shortcut is approximate)
        dists = torch.cdist(features, protos, compute_mode="donot_use_mm_for_euclid_dist")
        classes = classes.to(torch.long)
        idx = torch.arange(features.shape[0])
        d_pos = dists[idx, classes]
        # hide the target class, then a stable sort keeps ties in class order
        masked = dists.detach().clone()
        masked[idx, classes] = float("inf")
        order = torch.argsort(masked, dim=1, stable=True)
        k = min(self.k_neg, self.num_classes - 1)
        neg_mean = protos[order[:, :k]].mean(dim=1)  # (N, D)
        d_neg = torch.linalg.vector_norm(features - neg_mean, dim=1)
        return torch.clamp(d_pos - d_neg + self.margin, min=0.0)

    # -- updates -----------------------------------------------------------

    @torch.no_grad()
    def update(self, label: int, feature: torch.Tensor) -> None:
        """Single-row EMA pull: proto_y <- eta * proto_y + (1 - eta) * f."""
        self._require_init()
        if not 0 <= label < self.num_classes:
            raise InputError(f"class {label} outside [0, {self.num_classes})")
        f = feature.detach().to(self.vectors.dtype)
        self.vectors[label].mul_(self.eta).add_(f, alpha=1.0 - self.eta)

    def state_hash(self) -> str:
        return hashlib.sha256(self.vectors.contiguous().numpy().tobytes()).hexdigest()


def init_prototypes(
    labeled_features: list[tuple[torch.Tensor, int]],
    num_classes: int,
    eta: float = 0.9,
    margin: float = 0.3,
    k_neg: int = 3,
) -> PrototypeBank:
    """Build and initialize a bank from (normalized feature, class) pairs."""
    if not labeled_features:
        raise InputError("prototype init requires at least one labeled feature")
    features = torch.stack([normalize_features(f.detach()) for f, _ in labeled_features])
    classes = torch.tensor([c for _, c in labeled_features])
    bank = PrototypeBank(
        num_classes, features.shape[1], eta=eta, margin=margin, k_neg=k_neg,
        dtype=features.dtype,
    )
    bank.init_from_features(features, classes)
    return bank
