"""Teacher-student consistency machinery: confidence gating, the pseudo-label
cross-entropy over strong views, and exponential moving-average parameter
updates of the teacher."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigurationError, InputError
from .model import LOG_EPS, PhaseDistribution


@dataclass
class GateConfig:
    delta: float = 0.6

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ConfigurationError("delta must lie in [0, 1]")


@dataclass
class EmaConfig:
    alpha: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigurationError("alpha must lie in [0, 1)")


@dataclass
class PseudoLabel:
    class_index: int
    confidence: float
    teacher_feature: torch.Tensor | None = None  # normalized weak-view feature


def confidence_gate(
    teacher_dist: PhaseDistribution | torch.Tensor,
    cfg: GateConfig,
    teacher_feature: torch.Tensor | None = None,
) -> PseudoLabel | None:
    """Pseudo-label iff the teacher's max probability reaches delta.

    The boundary is inclusive (max prob == delta passes); argmax ties resolve
    to the lowest class index.
    """
    probs = teacher_dist.probs if isinstance(teacher_dist, PhaseDistribution) else teacher_dist
    conf, cls = probs.max(dim=-1)  # first maximal index on ties
    if float(conf) < cfg.delta:
        return None
    return PseudoLabel(
        class_index=int(cls), confidence=float(conf), teacher_feature=teacher_feature
    )


def gate_batch(teacher_probs: torch.Tensor, delta: float):
    """Vectorized gate: (N, C) probs -> (pass mask, argmax classes, max probs)."""
    conf, classes = teacher_probs.max(dim=-1)
    return conf >= delta, classes, conf


def consistency_loss(
    student_dists,
    pseudo: list[PseudoLabel | None],
    batch_size: int,
) -> torch.Tensor:
    """Eq.-style gated cross-entropy, normalized by the FULL batch size.

    student_dists: (N, C) probability rows over strong views, aligned with
    `pseudo`; entries whose pseudo-label is None contribute nothing, so the
    loss is 0 when every sample was gated out.
    """
    probs = torch.as_tensor(student_dists) if not torch.is_tensor(student_dists) else student_dists
    if probs.shape[0] != len(pseudo):
        raise InputError(
            f"{probs.shape[0]} student rows vs {len(pseudo)} pseudo-label slots"
        )
    total = probs.new_zeros(())
    for row, label in zip(probs, pseudo):
        if label is None:
            continue
        total = total - torch.log(row[label.class_index].clamp_min(LOG_EPS))
    return total / batch_size


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, cfg: EmaConfig) -> None:
    """theta_T <- alpha * theta_T + (1 - alpha) * theta_S over all tensors."""
    t_state, s_state = teacher.state_dict(), student.state_dict()
    if list(t_state.keys()) != list(s_state.keys()):
        raise ConfigurationError("teacher/student parameter names differ")
    for name, t_val in t_state.items():
        s_val = s_state[name]
        if t_val.shape != s_val.shape:
            raise ConfigurationError(f"shape mismatch for {name}: {t_val.shape} vs {s_val.shape}")
        if t_val.is_floating_point():
            t_val.mul_(cfg.alpha).add_(s_val, alpha=1.0 - cfg.alpha)


@torch.no_grad()
def copy_parameters(dst: nn.Module, src: nn.Module) -> None:
    """Exact parameter copy (teacher initialization)."""
    dst.load_state_dict(src.state_dict())


def freeze(module: nn.Module) -> nn.Module:
    """Detach a module from gradient tracking (teacher role)."""
    for p in module.parameters():
        p.requires_grad_(False)
    return module
