"""Recurrent video super-resolution with a prebuilt initial hidden state.

A unidirectional recurrent reconstructor upgrades each LR frame using its
left neighbor and a carried hidden state; a prebuilder network pools the
first few frames into the initial hidden state so the earliest frames are
not reconstructed from nothing.  The package bundles the model, the HR->LR
degradation pipeline, PSNR/SSIM evaluation (including the per-video
max-minus-min PSNR gap), a trainer and an ablation harness.
"""

from .baseline import SimpleRecurrentNet
from .config import (
    AblationPlan,
    AblationVariant,
    DegradationSpec,
    ModelConfig,
    RunConfig,
    TrainConfig,
    load_config,
    load_plan,
)
from .data import ClipRecord, degrade, sample_patch, synth_sequence
from .errors import ConfigError, InputError
from .ipnet import IPNet
from .metrics import MetricsReport, gap_report, psnr, sequence_report, ssim
from .model import VideoSR, build_model
from .rrnet import HiddenState, RRNet, StepOutput
from .trainer import (
    DivergenceError,
    ablate,
    count_params,
    evaluate,
    l1_loss,
    load_checkpoint,
    restore_model,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AblationPlan",
    "AblationVariant",
    "ClipRecord",
    "ConfigError",
    "DegradationSpec",
    "DivergenceError",
    "HiddenState",
    "IPNet",
    "InputError",
    "MetricsReport",
    "ModelConfig",
    "RRNet",
    "RunConfig",
    "SimpleRecurrentNet",
    "StepOutput",
    "TrainConfig",
    "VideoSR",
    "ablate",
    "build_model",
    "count_params",
    "degrade",
    "evaluate",
    "gap_report",
    "l1_loss",
    "load_checkpoint",
    "load_config",
    "load_plan",
    "psnr",
    "restore_model",
    "sample_patch",
    "save_checkpoint",
    "sequence_report",
    "ssim",
    "synth_sequence",
    "train",
]
