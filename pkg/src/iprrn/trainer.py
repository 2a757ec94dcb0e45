"""End-to-end training and the ablation harness.

Per batch the prebuilder runs once per sequence and the reconstructor is
unrolled over the whole training sequence (no truncation), so gradients
from every output frame reach every parameter, prebuilder included.  The
optimizer is Adam with a step-decayed learning rate: the decay applies when
the 0-based epoch index is a positive multiple of ``decay_every``.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import AblationPlan, ModelConfig, RunConfig, TrainConfig, apply_overrides
from .data import ClipRecord, sample_patch
from .errors import InputError
from .metrics import MetricsReport, sequence_report
from .model import VideoSR, build_model

CHECKPOINT_NAME = "checkpoint.pt"
DIVERGED_NAME = "diverged.pt"
TRAIN_LOG_NAME = "train_log.csv"


class DivergenceError(RuntimeError):
    """Training loss went non-finite; a diagnostic checkpoint may be saved."""


def l1_loss(sr_seq: torch.Tensor, hr_seq: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over every frame, pixel and channel of the
    sequence; all frames contribute."""
    if sr_seq.shape != hr_seq.shape:
        raise InputError(
            f"sequence shapes differ: {tuple(sr_seq.shape)} vs {tuple(hr_seq.shape)}"
        )
    return F.l1_loss(sr_seq, hr_seq)


def count_params(config: ModelConfig) -> int:
    """Exact trainable-scalar count of the configured model."""
    model = build_model(config)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(
    path,
    model: VideoSR,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: int,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> Path:
    """Self-describing checkpoint: weights, optimizer moments, configs,
    epoch counter and RNG state in one file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": 1,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "epoch": epoch,
        "model_config": dataclasses.asdict(model_config),
        "train_config": dataclasses.asdict(train_config),
        "torch_rng_state": torch.get_rng_state(),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    payload["model_config"] = ModelConfig(**payload["model_config"])
    payload["train_config"] = TrainConfig(**payload["train_config"])
    return payload


def restore_model(path) -> tuple:
    """Rebuild the model a checkpoint describes and load its weights."""
    payload = load_checkpoint(path)
    model = build_model(payload["model_config"])
    model.load_state_dict(payload["model_state"])
    return model, payload


@dataclass
class EpochStats:
    epoch: int
    loss: float
    lr: float


@dataclass
class TrainResult:
    model: VideoSR
    history: list
    checkpoint_path: Optional[Path] = None

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss if self.history else math.nan


def _assemble_batch(clips: Sequence[ClipRecord], rng, cfg: TrainConfig):
    n_frames = min(min(c.lr_frames.shape[0] for c in clips), cfg.seq_len)
    lrs, hrs = [], []
    for clip in clips:
        total = clip.lr_frames.shape[0]
        start = int(rng.integers(0, total - n_frames + 1)) if total > n_frames else 0
        cropped = ClipRecord(
            clip.id,
            clip.hr_frames[start : start + n_frames],
            clip.lr_frames[start : start + n_frames],
            clip.meta,
        )
        if cfg.hr_patch is not None and (
            cropped.hr_frames.shape[-2] > cfg.hr_patch
            or cropped.hr_frames.shape[-1] > cfg.hr_patch
        ):
            cropped = sample_patch(cropped, cfg.hr_patch, rng)
        lrs.append(cropped.lr_frames)
        hrs.append(cropped.hr_frames)
    return torch.stack(lrs), torch.stack(hrs)


def train(
    dataset: Sequence[ClipRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir=None,
    model: Optional[VideoSR] = None,
    device: str = "cpu",
) -> TrainResult:
    """Run the full training loop; deterministic given the configs' seeds.

    Writes ``train_log.csv`` and a final checkpoint under ``out_dir`` when
    given.  A non-finite loss aborts with a diagnostic checkpoint.
    """
    if not dataset:
        raise InputError("empty dataset")
    model_config.validate()
    train_config.validate()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(train_config.seed)
    if model is None:
        model = build_model(model_config)
    model = model.to(device).train()
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=train_config.lr0,
        betas=(train_config.beta1, train_config.beta2),
    )

    history = []
    for epoch in range(train_config.max_epochs):
        lr = train_config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        rng = np.random.default_rng([train_config.seed, epoch])
        order = rng.permutation(len(dataset))
        losses = []
        for lo in range(0, len(order), train_config.batch_size):
            batch_ids = order[lo : lo + train_config.batch_size]
            lr_batch, hr_batch = _assemble_batch(
                [dataset[i] for i in batch_ids], rng, train_config
            )
            lr_batch = lr_batch.to(device)
            hr_batch = hr_batch.to(device)
            optimizer.zero_grad()
            loss = l1_loss(model(lr_batch), hr_batch)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                diag = None
                if out_dir is not None:
                    diag = save_checkpoint(
                        out_dir / DIVERGED_NAME, model, model_config,
                        train_config, epoch, optimizer,
                    )
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}"
                    + (f"; diagnostic checkpoint: {diag}" if diag else "")
                )
            loss.backward()
            if train_config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(
                    model.parameters(), train_config.grad_clip
                )
            optimizer.step()
            losses.append(loss_value)
        history.append(EpochStats(epoch, float(np.mean(losses)), lr))

    checkpoint_path = None
    if out_dir is not None:
        with (out_dir / TRAIN_LOG_NAME).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "lr"])
            for row in history:
                writer.writerow([row.epoch, repr(row.loss), repr(row.lr)])
        checkpoint_path = save_checkpoint(
            out_dir / CHECKPOINT_NAME, model, model_config, train_config,
            train_config.max_epochs, optimizer,
        )
    return TrainResult(model=model, history=history, checkpoint_path=checkpoint_path)


def evaluate(
    model: VideoSR,
    clips: Sequence[ClipRecord],
    channel_mode: str = "Y",
    border_crop: int = 0,
    notes: Optional[dict] = None,
) -> list:
    """Super-resolve each clip and score it against its HR frames.  SR
    outputs are clamped to [0, 1] here, at the metric boundary."""
    reports = []
    for clip in clips:
        sr = model.super_resolve(clip.lr_frames).clamp(0.0, 1.0)
        reports.append(
            sequence_report(
                clip.hr_frames, sr, clip_id=clip.id,
                channel_mode=channel_mode, border_crop=border_crop,
                notes=notes,
            )
        )
    return reports


def gradient_coverage(model: VideoSR, lr_batch, hr_batch) -> dict:
    """Gradient norm per parameter group after one backward pass; every
    group of a healthy model is strictly positive."""
    model.zero_grad(set_to_none=True)
    loss = l1_loss(model(lr_batch), hr_batch)
    loss.backward()
    groups: dict = {}
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:2])
        norm = float(p.grad.norm()) if p.grad is not None else 0.0
        groups[key] = groups.get(key, 0.0) + norm
    model.zero_grad(set_to_none=True)
    return groups


@dataclass
class VariantResult:
    name: str
    params: int = 0
    train_time_s: float = 0.0
    mean_psnr: float = math.nan
    mean_ssim: float = math.nan
    first_frame_psnr: float = math.nan
    gap_psnr: float = math.nan
    error: Optional[str] = None
    reports: list = field(default_factory=list)


def summarize_reports(reports: Sequence[MetricsReport]) -> dict:
    finite_means = [r.mean_psnr for r in reports if math.isfinite(r.mean_psnr)]
    firsts = [r.per_frame_psnr[0] for r in reports
              if math.isfinite(r.per_frame_psnr[0])]
    return {
        "mean_psnr": float(np.mean(finite_means)) if finite_means else math.inf,
        "mean_ssim": float(np.mean([r.mean_ssim for r in reports])),
        "first_frame_psnr": float(np.mean(firsts)) if firsts else math.inf,
        "gap_psnr": float(np.mean([r.gap_psnr for r in reports])),
    }


def _warm_start(model: VideoSR, source: VideoSR) -> int:
    """Copy every parameter whose name and shape match (used to transplant a
    trained core underneath a freshly initialized prebuilder)."""
    own = model.state_dict()
    loaded = 0
    for name, tensor in source.state_dict().items():
        if name in own and own[name].shape == tensor.shape:
            own[name].copy_(tensor)
            loaded += 1
    model.load_state_dict(own)
    return loaded


def ablate(
    base: RunConfig,
    plan: AblationPlan,
    dataset: Sequence[ClipRecord],
    eval_clips: Optional[Sequence[ClipRecord]] = None,
    out_dir=None,
    channel_mode: str = "Y",
) -> list:
    """Train and evaluate every plan variant on shared data and seeds.

    Variants resolve their configs as base + overrides.  ``init_from``
    warm-starts from another variant's trained weights (name/shape matched),
    which is how the prebuilder is transplanted onto an already-trained
    core and fine-tuned.  A failing variant is recorded and the run
    continues.
    """
    eval_clips = eval_clips if eval_clips is not None else dataset
    out_dir = Path(out_dir) if out_dir is not None else None
    results: list = []
    trained: dict = {}
    for variant in plan.variants:
        result = VariantResult(name=variant.name)
        try:
            cfg = apply_overrides(base, variant.overrides)
            model = build_model(cfg.model)
            if variant.init_from is not None:
                source = trained.get(variant.init_from)
                if source is None:
                    raise InputError(
                        f"variant {variant.name!r}: init_from "
                        f"{variant.init_from!r} has no trained model"
                    )
                _warm_start(model, source)
            result.params = sum(p.numel() for p in model.parameters())
            started = time.perf_counter()
            variant_dir = out_dir / variant.name if out_dir is not None else None
            outcome = train(dataset, cfg.model, cfg.train, out_dir=variant_dir,
                            model=model)
            result.train_time_s = time.perf_counter() - started
            trained[variant.name] = outcome.model
            result.reports = evaluate(outcome.model, eval_clips,
                                      channel_mode=channel_mode)
            for key, value in summarize_reports(result.reports).items():
                setattr(result, key, value)
        except Exception as exc:  # record and keep going
            result.error = f"{type(exc).__name__}: {exc}"
        results.append(result)
    if out_dir is not None:
        write_ablation_report(results, out_dir)
    return results


_REPORT_COLUMNS = [
    ("variant", lambda r: r.name),
    ("params", lambda r: r.params),
    ("train_time_s", lambda r: f"{r.train_time_s:.2f}"),
    ("psnr", lambda r: f"{r.mean_psnr:.4f}"),
    ("ssim", lambda r: f"{r.mean_ssim:.4f}"),
    ("first_frame_psnr", lambda r: f"{r.first_frame_psnr:.4f}"),
    ("gap_psnr", lambda r: f"{r.gap_psnr:.4f}"),
    ("error", lambda r: r.error or ""),
]


def render_markdown_table(results: Sequence[VariantResult]) -> str:
    header = [name for name, _ in _REPORT_COLUMNS]
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
    ]
    for r in results:
        lines.append("| " + " | ".join(str(fn(r)) for _, fn in _REPORT_COLUMNS) + " |")
    return "\n".join(lines) + "\n"


def write_ablation_report(results: Sequence[VariantResult], out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([name for name, _ in _REPORT_COLUMNS])
        for r in results:
            writer.writerow([fn(r) for _, fn in _REPORT_COLUMNS])
    (out_dir / "ablation.md").write_text(render_markdown_table(results))
