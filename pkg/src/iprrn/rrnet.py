"""Unidirectional recurrent reconstructor.

Per time step the recurrent unit consumes the current frame, its left
neighbor, and the carried hidden state; it emits the next hidden state and
the super-resolved frame.  The hidden state is split into a temporal part
(ReLU-activated, propagated for its own sake) and a spatial part (linear,
pixel-shuffled into the residual that sharpens the bicubic upscale).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import ResidualDenseBlock, bicubic_resize, pixel_shuffle
from .errors import ConfigError, InputError


@dataclass
class HiddenState:
    """Carried recurrent state at LR resolution.

    ``temporal`` and ``spatial`` share every dimension except channels.
    Wherever the two are consumed together they are concatenated in this
    fixed order: temporal first, then spatial.
    """

    temporal: torch.Tensor
    spatial: torch.Tensor

    @property
    def channels(self) -> int:
        return self.temporal.shape[-3] + self.spatial.shape[-3]

    def concat(self) -> torch.Tensor:
        return torch.cat([self.temporal, self.spatial], dim=-3)

    def detach(self) -> "HiddenState":
        return HiddenState(self.temporal.detach(), self.spatial.detach())


@dataclass
class StepOutput:
    hidden: HiddenState
    sr_frame: torch.Tensor


class PropagationHead(nn.Module):
    """Maps trunk features into hidden-state space: a conv+ReLU generates the
    temporal channels, a plain conv (no activation) the spatial channels.

    ``spatial_channels`` may be zero for cores whose hidden state is a single
    undivided feature map.
    """

    def __init__(self, in_width: int, temporal_channels: int, spatial_channels: int):
        super().__init__()
        self.temporal_conv = nn.Conv2d(in_width, temporal_channels, 3, padding=1)
        self.spatial_conv = (
            nn.Conv2d(in_width, spatial_channels, 3, padding=1)
            if spatial_channels > 0
            else None
        )
        if self.spatial_conv is not None:
            # residual-emitting head: zero start = pure-bicubic start
            self.spatial_conv.zero_init = True

    def forward(self, feats: torch.Tensor) -> HiddenState:
        temporal = F.relu(self.temporal_conv(feats))
        if self.spatial_conv is None:
            spatial = feats.new_zeros(feats.shape[:-3] + (0,) + feats.shape[-2:])
        else:
            spatial = self.spatial_conv(feats)
        return HiddenState(temporal, spatial)


class RecurrentCore(nn.Module):
    """Shared unrolling logic for step-based reconstructors.

    Subclasses set ``scale``, ``frame_channels``, ``hidden_temporal`` and
    ``hidden_spatial`` and implement :meth:`step`.  The unroll is strictly
    causal and keeps only one hidden state and one previous frame alive, so
    memory is constant in the sequence length.
    """

    scale: int
    frame_channels: int
    hidden_temporal: int
    hidden_spatial: int

    def step(self, h_prev: HiddenState, frame_prev, frame_cur) -> StepOutput:
        raise NotImplementedError

    def initial_state(self, like_frame: torch.Tensor) -> HiddenState:
        """All-zero hidden state shaped to match a reference LR frame."""
        lead = like_frame.shape[:-3]
        h, w = like_frame.shape[-2:]
        make = lambda c: like_frame.new_zeros(lead + (c, h, w))
        return HiddenState(make(self.hidden_temporal), make(self.hidden_spatial))

    def _check_hidden(self, h: HiddenState) -> None:
        if (h.temporal.shape[-3], h.spatial.shape[-3]) != (
            self.hidden_temporal,
            self.hidden_spatial,
        ):
            raise ConfigError(
                f"hidden split ({h.temporal.shape[-3]}, {h.spatial.shape[-3]}) "
                f"does not match configured ({self.hidden_temporal}, "
                f"{self.hidden_spatial})"
            )

    def run_sequence(
        self, frames: torch.Tensor, h0: Optional[HiddenState] = None
    ) -> torch.Tensor:
        """Reconstruct a whole sequence; frame t's left neighbor at t=1 is a
        copy of frame 1.  ``frames`` is (N, C, H, W) or batched (B, N, C, H, W).
        """
        if frames.dim() not in (4, 5):
            raise InputError(f"expected 4D or 5D frame tensor, got {frames.dim()}D")
        if frames.shape[-4] == 0:
            raise InputError("empty frame sequence")
        h = self.initial_state(frames[..., 0, :, :, :]) if h0 is None else h0
        self._check_hidden(h)
        prev = frames[..., 0, :, :, :]
        outputs = []
        for t in range(frames.shape[-4]):
            cur = frames[..., t, :, :, :]
            out = self.step(h, prev, cur)
            outputs.append(out.sr_frame)
            h, prev = out.hidden, cur
        return torch.stack(outputs, dim=-4)


class RRNet(RecurrentCore):
    """Residual-dense recurrent reconstructor.

    Step: concat [cur, prev, hidden] -> conv3x3+ReLU -> chain of residual
    dense blocks -> propagation head; the spatial head channels are
    pixel-shuffled into the upscaled-residual and added to a bicubic upscale
    of the current frame.  SR outputs are left unclamped to keep gradients
    alive; clamp at export/metric time.
    """

    def __init__(
        self,
        scale: int = 4,
        frame_channels: int = 3,
        hidden_temporal: int = 128,
        hidden_spatial: int = 48,
        trunk_width: int = 128,
        rdb_growth: int = 64,
        n_rdb: int = 10,
    ):
        super().__init__()
        if hidden_spatial != scale * scale * frame_channels:
            raise ConfigError(
                f"hidden_spatial must be scale^2 * frame_channels = "
                f"{scale * scale * frame_channels}, got {hidden_spatial}"
            )
        self.scale = scale
        self.frame_channels = frame_channels
        self.hidden_temporal = hidden_temporal
        self.hidden_spatial = hidden_spatial
        in_channels = 2 * frame_channels + hidden_temporal + hidden_spatial
        self.conv_in = nn.Conv2d(in_channels, trunk_width, 3, padding=1)
        self.rdbs = nn.Sequential(
            *[ResidualDenseBlock(trunk_width, rdb_growth) for _ in range(n_rdb)]
        )
        self.head = PropagationHead(trunk_width, hidden_temporal, hidden_spatial)

    def step(self, h_prev: HiddenState, frame_prev, frame_cur) -> StepOutput:
        if frame_prev.shape != frame_cur.shape:
            raise InputError(
                f"frame shapes differ: {tuple(frame_prev.shape)} vs "
                f"{tuple(frame_cur.shape)}"
            )
        self._check_hidden(h_prev)
        x = torch.cat([frame_cur, frame_prev, h_prev.concat()], dim=-3)
        feats = F.relu(self.conv_in(x))
        deep = self.rdbs(feats)
        hidden = self.head(deep)
        residual = pixel_shuffle(hidden.spatial, self.scale)
        sr = bicubic_resize(frame_cur, self.scale) + residual
        return StepOutput(hidden, sr)


def stream_frames(
    core: RecurrentCore, frames: Iterable[torch.Tensor], h0: HiddenState
) -> Iterable[torch.Tensor]:
    """Yield SR frames one by one from an iterable of LR frames, holding only
    the hidden state and the previous frame."""
    prev = None
    for cur in frames:
        out = core.step(h0, prev if prev is not None else cur, cur)
        h0, prev = out.hidden, cur
        yield out.sr_frame
