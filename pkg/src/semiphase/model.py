"""Tiny divided space-time attention video encoder and linear phase head.

The encoder keeps one class-token copy per frame. Each block applies temporal
attention (tokens at the same grid position attend across frames), then
spatial attention (tokens within a frame attend to each other), then an MLP,
all with pre-norm residuals. The readout averages the per-frame class tokens
after the final norm.

Everything is a pure function of (input, parameters): no dropout, no batch
statistics, so forward passes are deterministic and teacher/student copies
stay exactly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import ConfigurationError, NumericalError

LOG_EPS = 1e-12  # floor inside log() so losses never hit -inf


@dataclass
class FrameWindow:
    """Ordered stack of window_len frames; the query frame sits last."""

    frames: np.ndarray  # (T, C, H, W) float
    query_index: int


@dataclass
class FeatureEmbedding:
    vector: torch.Tensor  # (embed_dim,)
    normalized: bool = False


@dataclass
class PhaseDistribution:
    probs: torch.Tensor  # (num_classes,), rows sum to 1


class Attention(nn.Module):
    """Multi-head self-attention over the last-but-one (sequence) dim."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):  # x: (N, L, D)
        n, length, dim = x.shape
        qkv = self.qkv(x).reshape(n, length, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)  # each (N, heads, L, dh)
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(n, length, dim)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class DividedBlock(nn.Module):
    """Temporal attention, spatial attention, MLP; pre-norm residuals."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm_t = nn.LayerNorm(dim)
        self.attn_t = Attention(dim, heads)
        self.norm_s = nn.LayerNorm(dim)
        self.attn_s = Attention(dim, heads)
        self.norm_mlp = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, 4 * dim)

    def forward(self, x):  # x: (B, T, P, D)
        b, t, p, d = x.shape
        # time: same grid position attends across frames
        h = self.norm_t(x).permute(0, 2, 1, 3).reshape(b * p, t, d)
        h = self.attn_t(h).reshape(b, p, t, d).permute(0, 2, 1, 3)
        x = x + h
        # space: tokens within one frame attend to each other
        h = self.norm_s(x).reshape(b * t, p, d)
        h = self.attn_s(h).reshape(b, t, p, d)
        x = x + h
        return x + self.mlp(self.norm_mlp(x))


class VideoEncoder(nn.Module):
    """Maps a (B, T, C, H, W) frame window batch to (B, embed_dim) features."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_embed = nn.Conv2d(
            config.channels, d, kernel_size=config.patch_size, stride=config.patch_size
        )
        self.cls_token = nn.Parameter(torch.zeros(1, 1, 1, d))
        self.spatial_pos = nn.Parameter(torch.zeros(1 + config.patches_per_frame, d))
        self.temporal_pos = nn.Parameter(torch.zeros(config.window_len, d))
        self.blocks = nn.ModuleList(
            DividedBlock(d, config.heads) for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(d)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        nn.init.trunc_normal_(self.spatial_pos, std=0.02)
        nn.init.trunc_normal_(self.temporal_pos, std=0.02)

    def forward(self, x):  # x: (B, T, C, H, W)
        cfg = self.config
        b, t, c, h, w = x.shape
        if (t, c, h, w) != (cfg.window_len, cfg.channels, cfg.frame_size, cfg.frame_size):
            raise ConfigurationError(
                f"window shape {(t, c, h, w)} does not match config "
                f"{(cfg.window_len, cfg.channels, cfg.frame_size, cfg.frame_size)}"
            )
        x = self.patch_embed(x.reshape(b * t, c, h, w))  # (B*T, D, H/P, W/P)
        x = x.flatten(2).transpose(1, 2)  # (B*T, S, D), patches in row-major order
        x = x.reshape(b, t, -1, cfg.embed_dim)
        cls = self.cls_token.expand(b, t, 1, cfg.embed_dim)
        x = torch.cat([cls, x], dim=2)  # (B, T, 1+S, D)
        x = x + self.spatial_pos.unsqueeze(0).unsqueeze(0)
        x = x + self.temporal_pos.unsqueeze(0).unsqueeze(2)
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        return x[:, :, 0, :].mean(dim=1)  # average the per-frame class tokens


class PhaseModel(nn.Module):
    """Encoder plus linear phase classifier; the unit teacher EMA covers."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = VideoEncoder(config)
        self.head = nn.Linear(config.embed_dim, config.num_classes)

    def forward(self, x):
        """Returns (features, probs) for a (B, T, C, H, W) window batch."""
        features = self.encoder(x)
        return features, self.classify(features)

    def classify(self, features):  # features: (B, D)
        logits = self.head(features)
        if not torch.isfinite(logits).all():
            raise NumericalError("classifier produced non-finite logits")
        return F.softmax(logits, dim=-1)


def build_model(config: ModelConfig, seed: int, dtype=torch.float32) -> PhaseModel:
    """Construct a PhaseModel with seed-determined initial parameters."""
    gen_state = torch.random.get_rng_state()
    try:
        torch.manual_seed(seed)
        model = PhaseModel(config)
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def window_to_tensor(window: FrameWindow, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(window.frames), dtype=dtype)


def encode(window: FrameWindow, model: PhaseModel) -> FeatureEmbedding:
    """Class-token embedding of one window (unnormalized)."""
    dtype = next(model.parameters()).dtype
    x = window_to_tensor(window, dtype).unsqueeze(0)
    return FeatureEmbedding(vector=model.encoder(x)[0], normalized=False)


def classify(feature: FeatureEmbedding, model: PhaseModel) -> PhaseDistribution:
    """Softmax phase distribution from an embedding."""
    if feature.vector.shape[-1] != model.config.embed_dim:
        raise ConfigurationError(
            f"feature length {feature.vector.shape[-1]} != embed_dim {model.config.embed_dim}"
        )
    return PhaseDistribution(probs=model.classify(feature.vector.unsqueeze(0))[0])


def normalize_features(features: torch.Tensor) -> torch.Tensor:
    """Project feature rows onto the unit sphere (prototype-space convention)."""
    return F.normalize(features, p=2, dim=-1, eps=1e-12)
