"""Initial-hidden-state prebuilder.

Plain unidirectional recurrence hands the first recurrent unit an all-zero
hidden state, so early frames are reconstructed from less information than
late ones.  This network runs once per sequence, pooling the first m LR
frames into the hidden state the first unit starts from: a grouped conv
extracts per-frame shallow features, channel attention plus a 1x1 conv
screens them down, a residual stack deepens them, and a propagation head
(same structure as the reconstructor's, separate weights) maps them into
hidden-state space.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import SEBlock, residual_stack
from .errors import ConfigError, InputError
from .rrnet import HiddenState, PropagationHead


class IPNet(nn.Module):
    def __init__(
        self,
        num_frames: int = 7,
        frame_channels: int = 3,
        group_width: int = 16,
        width: int = 128,
        n_res_blocks: int = 5,
        se_enabled: bool = True,
        se_reduction: int = 16,
        hidden_temporal: int = 128,
        hidden_spatial: int = 48,
    ):
        super().__init__()
        if num_frames < 1:
            raise ConfigError("num_frames must be >= 1 (0 means: no prebuilder)")
        self.num_frames = num_frames
        self.frame_channels = frame_channels
        shallow_width = num_frames * group_width
        self.shallow = nn.Conv2d(
            num_frames * frame_channels, shallow_width, 3, padding=1,
            groups=num_frames,
        )
        self.se = SEBlock(shallow_width, se_reduction) if se_enabled else None
        self.reduce = nn.Conv2d(shallow_width, width, 1)
        self.deep = residual_stack(width, n_res_blocks)
        self.head = PropagationHead(width, hidden_temporal, hidden_spatial)
        # start the prebuilt state small: a fresh prebuilder must not drown
        # the first recurrent unit in init noise (zero would gate the ReLU
        # head shut permanently)
        self.head.temporal_conv.init_gain = 0.1

    def shallow_extract(self, frames: torch.Tensor) -> torch.Tensor:
        """Grouped 3x3 conv over the first m frames stacked on the channel
        axis; each frame gets its own filter bank."""
        if frames.dim() not in (4, 5):
            raise InputError(f"expected 4D or 5D frame tensor, got {frames.dim()}D")
        if frames.shape[-4] != self.num_frames:
            raise InputError(
                f"need exactly {self.num_frames} frames, got {frames.shape[-4]}"
            )
        if frames.shape[-3] != self.frame_channels:
            raise InputError(
                f"expected {self.frame_channels}-channel frames, got "
                f"{frames.shape[-3]}"
            )
        stacked = frames.reshape(
            frames.shape[:-4]
            + (self.num_frames * self.frame_channels,)
            + frames.shape[-2:]
        )
        return self.shallow(stacked)

    def filter_features(self, shallow: torch.Tensor) -> torch.Tensor:
        """Channel attention (identity when disabled) followed by the 1x1
        screening conv."""
        if self.se is not None:
            shallow = self.se(shallow)
        return self.reduce(shallow)

    def deep_extract(self, filtered: torch.Tensor) -> torch.Tensor:
        return self.deep(filtered)

    def forward(self, frames: torch.Tensor) -> HiddenState:
        """Build the initial hidden state from a sequence's first m frames.

        Accepts (N, C, H, W) or batched (B, N, C, H, W) with N >= m and uses
        the leading m frames; shorter sequences are the caller's problem
        (the pipeline left-pads by repeating the first frame).
        """
        if frames.dim() not in (4, 5):
            raise InputError(f"expected 4D or 5D frame tensor, got {frames.dim()}D")
        if frames.shape[-4] < self.num_frames:
            raise InputError(
                f"prebuilder needs {self.num_frames} frames, sequence has "
                f"{frames.shape[-4]}"
            )
        early = frames[..., : self.num_frames, :, :, :]
        return self.head(self.deep_extract(self.filter_features(
            self.shallow_extract(early))))

    prebuild_hidden = forward


def pad_leading(frames: torch.Tensor, num_frames: int) -> torch.Tensor:
    """Left-pad a too-short sequence by repeating its first frame until the
    prebuilder's m frames are available.  No new content is invented."""
    n = frames.shape[-4]
    if n >= num_frames:
        return frames
    first = frames[..., 0:1, :, :, :]
    reps = [1] * frames.dim()
    reps[-4] = num_frames - n
    return torch.cat([first.repeat(*reps), frames], dim=-4)
