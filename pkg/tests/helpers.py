"""Shared test utilities: independent reference implementations and
finite-difference gradient checks. Everything here is written against the
math, not against the package internals, so it stays a genuine oracle."""

import math

import numpy as np
import torch
from scipy.special import erf


def finite_diff_grads(loss_fn, tensors, sample_per_tensor=40, h=1e-6, seed=0):
    """Central finite differences of loss_fn() w.r.t. sampled elements.

    tensors: dict name -> torch tensor (modified in place and restored).
    Returns dict name -> list of (flat_index, fd_gradient).
    """
    gen = np.random.default_rng(seed)
    out = {}
    with torch.no_grad():
        for name, tensor in tensors.items():
            flat = tensor.reshape(-1)
            n = flat.numel()
            if n <= sample_per_tensor:
                idx = np.arange(n)
            else:
                idx = gen.choice(n, size=sample_per_tensor, replace=False)
            entries = []
            for i in idx:
                i = int(i)
                orig = flat[i].item()
                step = h * max(1.0, abs(orig))
                flat[i] = orig + step
                up = loss_fn()
                flat[i] = orig - step
                down = loss_fn()
                flat[i] = orig
                entries.append((i, (up - down) / (2.0 * step)))
            out[name] = entries
    return out


def max_rel_error(analytic, fd_entries, atol=1e-8):
    """Worst relative error between analytic grads and finite differences.

    The atol floor absorbs central-difference rounding noise (~eps/h) on
    elements whose true gradient is zero, e.g. attention key biases.
    """
    worst = 0.0
    for name, entries in fd_entries.items():
        grad = analytic[name].reshape(-1)
        for i, fd in entries:
            a = float(grad[i])
            if abs(a - fd) <= atol:
                continue
            rel = abs(a - fd) / max(abs(a), abs(fd))
            worst = max(worst, rel)
    return worst


# -- loop-level reference forward pass (float64) -----------------------------


def _layernorm(x, weight, bias, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * weight + bias


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _attention_seq(seq, w_qkv, b_qkv, w_proj, b_proj, heads):
    """Multi-head self-attention on one (L, D) sequence, explicit loops."""
    length, dim = seq.shape
    dh = dim // heads
    qkv = seq @ w_qkv.T + b_qkv  # (L, 3D)
    q, k, v = qkv[:, :dim], qkv[:, dim : 2 * dim], qkv[:, 2 * dim :]
    out = np.zeros((length, dim))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        for i in range(length):
            scores = np.array([qh[i] @ kh[j] for j in range(length)]) / math.sqrt(dh)
            scores = np.exp(scores - scores.max())
            weights = scores / scores.sum()
            out[i, sl] = sum(weights[j] * vh[j] for j in range(length))
    return out @ w_proj.T + b_proj


def reference_encode(window, model):
    """Nested-loop forward pass of the divided space-time encoder."""
    cfg = model.config
    sd = {k: v.detach().double().numpy() for k, v in model.state_dict().items()}
    t_len, chans, height, width = window.shape
    patch = cfg.patch_size
    rows, cols = height // patch, width // patch
    n_patches = rows * cols
    dim = cfg.embed_dim
    x = np.zeros((t_len, 1 + n_patches, dim))

    w_p = sd["encoder.patch_embed.weight"]
    b_p = sd["encoder.patch_embed.bias"]
    for t in range(t_len):
        x[t, 0] = sd["encoder.cls_token"][0, 0, 0]
        for r in range(rows):
            for c in range(cols):
                s = r * cols + c
                for d in range(dim):
                    acc = b_p[d]
                    for ch in range(chans):
                        for i in range(patch):
                            for j in range(patch):
                                acc += w_p[d, ch, i, j] * window[t, ch, r * patch + i, c * patch + j]
                    x[t, 1 + s, d] = acc
    for t in range(t_len):
        for p in range(1 + n_patches):
            x[t, p] = x[t, p] + sd["encoder.spatial_pos"][p] + sd["encoder.temporal_pos"][t]

    for b in range(cfg.depth):
        pre = f"encoder.blocks.{b}."
        y = _layernorm(x, sd[pre + "norm_t.weight"], sd[pre + "norm_t.bias"])
        delta = np.zeros_like(x)
        for p in range(1 + n_patches):
            delta[:, p, :] = _attention_seq(
                y[:, p, :],
                sd[pre + "attn_t.qkv.weight"], sd[pre + "attn_t.qkv.bias"],
                sd[pre + "attn_t.proj.weight"], sd[pre + "attn_t.proj.bias"],
                cfg.heads,
            )
        x = x + delta
        y = _layernorm(x, sd[pre + "norm_s.weight"], sd[pre + "norm_s.bias"])
        delta = np.zeros_like(x)
        for t in range(t_len):
            delta[t] = _attention_seq(
                y[t],
                sd[pre + "attn_s.qkv.weight"], sd[pre + "attn_s.qkv.bias"],
                sd[pre + "attn_s.proj.weight"], sd[pre + "attn_s.proj.bias"],
                cfg.heads,
            )
        x = x + delta
        y = _layernorm(x, sd[pre + "norm_mlp.weight"], sd[pre + "norm_mlp.bias"])
        hidden = _gelu(y @ sd[pre + "mlp.fc1.weight"].T + sd[pre + "mlp.fc1.bias"])
        x = x + hidden @ sd[pre + "mlp.fc2.weight"].T + sd[pre + "mlp.fc2.bias"]

    x = _layernorm(x, sd["encoder.norm.weight"], sd["encoder.norm.bias"])
    return np.mean(x[:, 0, :], axis=0)
