"""Plain residual-block recurrent reconstructor.

A deliberately simple unidirectional core used to test how well the
hidden-state prebuilder transplants onto other recurrent methods: one input
conv, a stack of residual blocks, a ReLU conv producing the (undivided)
hidden state and a linear conv producing the pixel-shuffle residual.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import bicubic_resize, pixel_shuffle, residual_stack
from .errors import InputError
from .rrnet import HiddenState, RecurrentCore, StepOutput


class SimpleRecurrentNet(RecurrentCore):
    def __init__(
        self,
        scale: int = 4,
        frame_channels: int = 3,
        width: int = 64,
        n_blocks: int = 5,
    ):
        super().__init__()
        self.scale = scale
        self.frame_channels = frame_channels
        self.hidden_temporal = width
        self.hidden_spatial = 0
        self.conv_in = nn.Conv2d(2 * frame_channels + width, width, 3, padding=1)
        self.blocks = residual_stack(width, n_blocks)
        self.hidden_conv = nn.Conv2d(width, width, 3, padding=1)
        self.sr_conv = nn.Conv2d(width, scale * scale * frame_channels, 3, padding=1)
        self.sr_conv.zero_init = True

    def step(self, h_prev: HiddenState, frame_prev, frame_cur) -> StepOutput:
        if frame_prev.shape != frame_cur.shape:
            raise InputError(
                f"frame shapes differ: {tuple(frame_prev.shape)} vs "
                f"{tuple(frame_cur.shape)}"
            )
        self._check_hidden(h_prev)
        x = torch.cat([frame_cur, frame_prev, h_prev.concat()], dim=-3)
        feats = self.blocks(F.relu(self.conv_in(x)))
        hidden = HiddenState(
            F.relu(self.hidden_conv(feats)),
            feats.new_zeros(feats.shape[:-3] + (0,) + feats.shape[-2:]),
        )
        residual = pixel_shuffle(self.sr_conv(feats), self.scale)
        sr = bicubic_resize(frame_cur, self.scale) + residual
        return StepOutput(hidden, sr)
