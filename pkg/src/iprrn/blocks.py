"""Differentiable building blocks shared by the prebuilder and the
recurrent reconstructor.

Conventions fixed here and relied on everywhere else:

* all convolutions are stride-1, zero-padded to preserve spatial size;
* pixel shuffle maps input channel ``c*s^2 + dy*s + dx`` to output offset
  ``(dy, dx)`` of channel ``c`` (so a matching unshuffle is an exact inverse);
* bicubic resampling uses the Catmull-Rom kernel (a = -0.5), with the kernel
  support widened by the scale factor when downscaling (antialiasing), and
  edge samples replicated.  Outputs are never clamped here; clamping is an
  export/metric-time policy.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import effective_reduction
from .errors import ConfigError


class SEBlock(nn.Module):
    """Channel attention: global average pooling, a two-layer bottleneck
    (no biases), sigmoid gating, per-channel rescaling.

    Every gate lies strictly inside (0, 1) for finite inputs, so the block
    can attenuate but never zero out or amplify a channel.
    """

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        self.channels = channels
        self.reduction = effective_reduction(channels, reduction)
        if channels % self.reduction != 0:
            raise ConfigError(
                f"reduction {self.reduction} does not divide {channels} channels"
            )
        reduced = channels // self.reduction
        self.w1 = nn.Parameter(torch.empty(reduced, channels))
        self.w2 = nn.Parameter(torch.empty(channels, reduced))

    def gates(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(-2, -1))
        return torch.sigmoid(F.linear(F.relu(F.linear(pooled, self.w1)), self.w2))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != self.channels:
            raise ConfigError(
                f"expected {self.channels} channels, got {x.shape[-3]}"
            )
        return x * self.gates(x)[..., :, None, None]


class ResidualBlock(nn.Module):
    """conv3x3 -> ReLU -> conv3x3 with an identity skip."""

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class ResidualDenseBlock(nn.Module):
    """Three densely connected conv3x3+ReLU stages, a 1x1 fusion back to the
    input width, and a local residual connection.

    Each stage consumes the concatenation of the block input and all earlier
    stage outputs, so the fusion conv sees ``width + 3 * growth`` channels.
    """

    def __init__(self, width: int, growth: int):
        super().__init__()
        self.stage1 = nn.Conv2d(width, growth, 3, padding=1)
        self.stage2 = nn.Conv2d(width + growth, growth, 3, padding=1)
        self.stage3 = nn.Conv2d(width + 2 * growth, growth, 3, padding=1)
        self.fuse = nn.Conv2d(width + 3 * growth, width, 1)

    def forward(self, x):
        feats = x
        for stage in (self.stage1, self.stage2, self.stage3):
            feats = torch.cat([feats, F.relu(stage(feats))], dim=-3)
        return x + self.fuse(feats)


def residual_stack(width: int, n_blocks: int) -> nn.Sequential:
    return nn.Sequential(*[ResidualBlock(width) for _ in range(n_blocks)])


def pixel_shuffle(x: torch.Tensor, scale: int) -> torch.Tensor:
    """Rearrange ``s^2 * C`` channels into a ``C``-channel map at ``s`` times
    the spatial resolution (bijective; see module docstring for the layout)."""
    if scale < 1:
        raise ConfigError(f"scale must be >= 1, got {scale}")
    if x.shape[-3] % (scale * scale) != 0:
        raise ConfigError(
            f"channel count {x.shape[-3]} not divisible by scale^2 = {scale * scale}"
        )
    return F.pixel_shuffle(x, scale)


def pixel_unshuffle(x: torch.Tensor, scale: int) -> torch.Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    if scale < 1:
        raise ConfigError(f"scale must be >= 1, got {scale}")
    if x.shape[-2] % scale != 0 or x.shape[-1] % scale != 0:
        raise ConfigError(
            f"spatial dims {tuple(x.shape[-2:])} not divisible by scale {scale}"
        )
    return F.pixel_unshuffle(x, scale)


def _cubic(t: np.ndarray) -> np.ndarray:
    # Keys cubic with a = -0.5 (Catmull-Rom)
    at = np.abs(t)
    at2, at3 = at * at, at * at * at
    near = 1.5 * at3 - 2.5 * at2 + 1.0
    far = -0.5 * at3 + 2.5 * at2 - 4.0 * at + 2.0
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


_weight_cache: dict = {}


def resize_weights(in_size: int, out_size: int) -> np.ndarray:
    """Dense (out_size, in_size) resampling matrix for one axis.

    Output sample i is taken at source coordinate (i + 0.5) * in/out - 0.5;
    rows are normalized to sum exactly 1, so constants are reproduced and,
    because the kernel is symmetric, so are linear ramps away from the edges.
    """
    key = (in_size, out_size)
    cached = _weight_cache.get(key)
    if cached is not None:
        return cached
    scale = in_size / out_size
    support_scale = max(scale, 1.0)
    support = 2.0 * support_scale
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        center = (i + 0.5) * scale - 0.5
        lo = int(math.floor(center - support)) + 1
        hi = int(math.floor(center + support))
        taps = np.arange(lo, hi + 1)
        w = _cubic((taps - center) / support_scale)
        w /= w.sum()
        np.add.at(weights[i], np.clip(taps, 0, in_size - 1), w)
    _weight_cache[key] = weights
    return weights


_torch_weight_cache: dict = {}


def _torch_resize_weights(in_size, out_size, dtype, device) -> torch.Tensor:
    key = (in_size, out_size, dtype, device)
    cached = _torch_weight_cache.get(key)
    if cached is None:
        cached = torch.from_numpy(resize_weights(in_size, out_size)).to(
            dtype=dtype, device=device
        )
        _torch_weight_cache[key] = cached
    return cached


def bicubic_resize(x: torch.Tensor, factor: float) -> torch.Tensor:
    """Separable bicubic resampling of the last two axes by ``factor``.

    Upscaling interpolates; downscaling antialiases.  Values may overshoot
    the input range (cubic ringing) and are intentionally left unclamped.
    """
    if factor <= 0:
        raise ConfigError(f"resize factor must be > 0, got {factor}")
    h, w = x.shape[-2], x.shape[-1]
    out_h, out_w = round(h * factor), round(w * factor)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"factor {factor} collapses {h}x{w} below one pixel")
    if (out_h, out_w) == (h, w):
        return x
    wh = _torch_resize_weights(h, out_h, x.dtype, x.device)
    ww = _torch_resize_weights(w, out_w, x.dtype, x.device)
    return torch.einsum("oh,...hw,pw->...op", wh, x, ww)


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministic fan-in Kaiming-normal init for conv weights and the
    channel-attention matrices; biases start at zero.

    Convs marked ``zero_init`` (the residual-emitting output heads) start at
    zero instead, so a freshly built model reproduces plain bicubic upscaling
    and learns the residual from there rather than un-learning init noise.
    """
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            if getattr(m, "zero_init", False):
                m.weight.data.zero_()
            else:
                fan_in = (
                    (m.in_channels // m.groups) * m.kernel_size[0] * m.kernel_size[1]
                )
                gain = getattr(m, "init_gain", 1.0)
                m.weight.data.normal_(
                    0.0, gain * math.sqrt(2.0 / fan_in), generator=generator
                )
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, SEBlock):
            for wmat in (m.w1, m.w2):
                wmat.data.normal_(
                    0.0, math.sqrt(2.0 / wmat.shape[1]), generator=generator
                )
