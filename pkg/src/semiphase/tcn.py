"""Causal dilated temporal refinement head.

A stack of stages, each a chain of kernel-2 dilated causal layers with
dilation doubling per level (1, 2, 4, ...). A layer computes
relu(W_now x[t] + W_past x[t - d]) + residual, so output t never reads
positions beyond t; one stage with L levels sees exactly 2^L - 1 past
positions. Later stages refine the previous stage's softmax output. Layers
are built from Linear ops and explicit shifts, which keeps prefixes of a
sequence bitwise independent of anything appended after them.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import InputError
from .model import PhaseDistribution


def shift_right(x: torch.Tensor, d: int) -> torch.Tensor:
    """x[t] -> x[t - d], zero-filled at the left edge. x: (L, C)."""
    if d == 0:
        return x
    pad = x.new_zeros(min(d, x.shape[0]), x.shape[1])
    return torch.cat([pad, x[:-d]], dim=0) if d < x.shape[0] else pad


class DilatedCausalLayer(nn.Module):
    def __init__(self, channels: int, dilation: int):
        super().__init__()
        self.dilation = dilation
        self.now = nn.Linear(channels, channels)
        self.past = nn.Linear(channels, channels, bias=False)
        self.out = nn.Linear(channels, channels)

    def forward(self, x):  # x: (L, C)
        h = F.relu(self.now(x) + self.past(shift_right(x, self.dilation)))
        return x + self.out(h)


class TcnStage(nn.Module):
    def __init__(self, in_dim: int, channels: int, levels: int, num_classes: int):
        super().__init__()
        self.inp = nn.Linear(in_dim, channels)
        self.layers = nn.ModuleList(
            DilatedCausalLayer(channels, 2 ** level) for level in range(levels)
        )
        self.logits = nn.Linear(channels, num_classes)

    def forward(self, x):  # x: (L, in_dim) -> (L, num_classes)
        x = self.inp(x)
        for layer in self.layers:
            x = layer(x)
        return self.logits(x)


class TemporalRefiner(nn.Module):
    """Multi-stage causal TCN over a per-frame feature sequence."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        stages = []
        in_dim = config.embed_dim
        for _ in range(config.tcn_stages):
            stages.append(
                TcnStage(in_dim, config.tcn_channels, config.tcn_levels, config.num_classes)
            )
            in_dim = config.num_classes
        self.stages = nn.ModuleList(stages)

    def forward(self, features):  # features: (L, embed_dim)
        """Per-stage logits; later stages consume the previous stage's probs."""
        if features.ndim != 2 or features.shape[0] == 0:
            raise InputError("tcn_refine requires a nonempty (L, embed_dim) sequence")
        outputs = []
        x = features
        for stage in self.stages:
            logits = stage(x)
            outputs.append(logits)
            x = F.softmax(logits, dim=-1)
        return outputs

    def refine(self, features) -> torch.Tensor:
        """Refined (L, num_classes) distributions from the final stage."""
        return F.softmax(self.forward(features)[-1], dim=-1)


def tcn_refine(features, refiner: TemporalRefiner) -> list[PhaseDistribution]:
    """Op-level wrapper: feature sequence -> one distribution per position."""
    probs = refiner.refine(features)
    return [PhaseDistribution(probs=row) for row in probs]


def receptive_field(levels: int, stages: int = 1) -> int:
    """Number of PAST positions a single output can depend on."""
    return stages * (2 ** levels - 1)
