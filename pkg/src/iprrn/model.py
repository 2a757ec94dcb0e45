"""Pipeline wrapper: optional prebuilder in front of a recurrent core.

With the prebuilder disabled the wrapper degenerates exactly to plain
zero-initialized unidirectional recurrence.  With it enabled, the first m
frames are read before the first SR frame is emitted ("frame t is available
after reading max(t, m) inputs"), and gradients flow from every output frame
back into the prebuilder through the initial hidden state.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Optional

import torch
from torch import nn

from .baseline import SimpleRecurrentNet
from .blocks import init_weights
from .config import ModelConfig
from .errors import InputError
from .ipnet import IPNet, pad_leading
from .rrnet import HiddenState, RecurrentCore, RRNet


class VideoSR(nn.Module):
    def __init__(self, core: RecurrentCore, ipnet: Optional[IPNet] = None):
        super().__init__()
        self.core = core
        self.ipnet = ipnet

    @property
    def scale(self) -> int:
        return self.core.scale

    @property
    def prebuild_frames(self) -> int:
        return self.ipnet.num_frames if self.ipnet is not None else 0

    def prebuild(self, frames: torch.Tensor) -> HiddenState:
        """Initial hidden state for a sequence: prebuilt from its leading
        frames, or all zeros when no prebuilder is configured.  Sequences
        shorter than m are left-padded by repeating the first frame."""
        if frames.shape[-4] == 0:
            raise InputError("empty frame sequence")
        if self.ipnet is None:
            return self.core.initial_state(frames[..., 0, :, :, :])
        return self.ipnet(pad_leading(frames, self.ipnet.num_frames))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """SR frames for (N, C, H, W) or batched (B, N, C, H, W) input."""
        return self.core.run_sequence(frames, self.prebuild(frames))

    def super_resolve(self, frames: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.forward(frames)

    def stream(self, frames: Iterable[torch.Tensor]) -> Iterator[torch.Tensor]:
        """Lazily super-resolve an iterable of (C, H, W) LR frames.

        Live state is one hidden state, one previous frame and (only until
        the prebuilder has run) a buffer of at most m frames, independent of
        the sequence length.
        """
        it = iter(frames)
        need = max(self.prebuild_frames, 1)
        buffer = []
        for frame in it:
            buffer.append(frame)
            if len(buffer) == need:
                break
        if not buffer:
            raise InputError("empty frame sequence")
        h = self.prebuild(torch.stack(buffer, dim=-4))
        prev = buffer[0]
        for cur in buffer:
            out = self.core.step(h, prev, cur)
            h, prev = out.hidden, cur
            yield out.sr_frame
        del buffer
        for cur in it:
            out = self.core.step(h, prev, cur)
            h, prev = out.hidden, cur
            yield out.sr_frame


def build_model(config: ModelConfig) -> VideoSR:
    """Construct and deterministically initialize the configured model."""
    config.validate()
    if config.arch == "simple_recurrent":
        core: RecurrentCore = SimpleRecurrentNet(
            scale=config.scale,
            frame_channels=config.frame_channels,
            width=config.baseline_width,
            n_blocks=config.baseline_blocks,
        )
    else:
        core = RRNet(
            scale=config.scale,
            frame_channels=config.frame_channels,
            hidden_temporal=config.hidden_temporal,
            hidden_spatial=config.hidden_spatial,
            trunk_width=config.trunk_width,
            rdb_growth=config.rdb_growth,
            n_rdb=config.n_rdb,
        )
    ipnet = None
    if config.ipnet_enabled:
        ipnet = IPNet(
            num_frames=config.ipnet_frames,
            frame_channels=config.frame_channels,
            group_width=config.shallow_group_width,
            width=config.ipnet_width,
            n_res_blocks=config.n_res_blocks,
            se_enabled=config.se_enabled,
            se_reduction=config.se_reduction,
            hidden_temporal=core.hidden_temporal,
            hidden_spatial=core.hidden_spatial,
        )
    model = VideoSR(core, ipnet)
    generator = torch.Generator().manual_seed(config.seed)
    init_weights(model, generator)
    return model
