"""Evaluation: PSNR and SSIM, per-frame curves, and the max-minus-min
PSNR gap that measures how uneven reconstruction quality is across a video.

Luminance mode ("Y") converts RGB with the BT.601 studio-swing matrix
(Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255 for inputs in [0, 1]),
the convention inherited from the classic SR evaluation scripts; it is
recorded in every report rather than left implicit.  Inputs are clamped to
[0, 1] here — metrics are an export boundary, models never clamp.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch
from scipy.signal import fftconvolve

from .errors import InputError

_Y_WEIGHTS = np.array([65.481, 128.553, 24.966]) / 255.0
_Y_OFFSET = 16.0 / 255.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(frame) -> np.ndarray:
    if isinstance(frame, torch.Tensor):
        frame = frame.detach().cpu().numpy()
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InputError(f"expected a (C, H, W) frame, got shape {arr.shape}")
    return np.clip(arr, 0.0, 1.0)


def rgb_to_y(frame: np.ndarray) -> np.ndarray:
    """Studio-swing luminance plane of a (3, H, W) RGB frame in [0, 1]."""
    if frame.shape[0] != 3:
        raise InputError(f"luminance conversion needs 3 channels, got {frame.shape[0]}")
    return np.tensordot(_Y_WEIGHTS, frame, axes=1) + _Y_OFFSET


def _planes(ref, test, channel_mode: str, border_crop: int):
    a, b = _as_array(ref), _as_array(test)
    if a.shape != b.shape:
        raise InputError(f"frame shapes differ: {a.shape} vs {b.shape}")
    mode = channel_mode.upper()
    if mode not in ("Y", "RGB"):
        raise InputError(f"channel_mode must be Y or RGB, got {channel_mode!r}")
    if mode == "Y" and a.shape[0] == 3:
        a, b = rgb_to_y(a)[None], rgb_to_y(b)[None]
    if border_crop > 0:
        if 2 * border_crop >= min(a.shape[-2:]):
            raise InputError(f"border_crop {border_crop} devours the whole frame")
        a = a[..., border_crop:-border_crop, border_crop:-border_crop]
        b = b[..., border_crop:-border_crop, border_crop:-border_crop]
    return a, b


def psnr(ref, test, channel_mode: str = "Y", border_crop: int = 0) -> float:
    """10 log10(1 / MSE) on the selected representation; identical inputs
    return the +inf sentinel (callers exclude it from aggregates)."""
    a, b = _planes(ref, test, channel_mode, border_crop)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_plane(a: np.ndarray, b: np.ndarray) -> float:
    half = SSIM_WINDOW // 2
    coords = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(coords**2) / (2 * SSIM_SIGMA**2))
    g /= g.sum()
    win = g[:, None] * g[None, :]
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    mu_a = fftconvolve(a, win, mode="valid")
    mu_b = fftconvolve(b, win, mode="valid")
    var_a = fftconvolve(a * a, win, mode="valid") - mu_a**2
    var_b = fftconvolve(b * b, win, mode="valid") - mu_b**2
    cov = fftconvolve(a * b, win, mode="valid") - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    return float(ssim_map.mean())


def ssim(ref, test, channel_mode: str = "Y", border_crop: int = 0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), k1=0.01,
    k2=0.03, unit dynamic range, averaged over all fully valid windows."""
    a, b = _planes(ref, test, channel_mode, border_crop)
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise InputError(
            f"frame {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    return float(np.mean([_ssim_plane(a[c], b[c]) for c in range(a.shape[0])]))


@dataclass
class GapStats:
    mean_psnr: float
    min_psnr: float
    max_psnr: float
    gap_psnr: float
    n_inf: int


def gap_report(per_frame_psnr: Sequence[float]) -> GapStats:
    """Min/max/gap over the finite entries; +inf sentinels are counted and
    excluded (a frame reproduced exactly carries no gap information)."""
    values = list(per_frame_psnr)
    if not values:
        raise InputError("empty PSNR list")
    finite = [v for v in values if math.isfinite(v)]
    n_inf = sum(1 for v in values if math.isinf(v))
    if len(finite) + n_inf != len(values):
        raise InputError("PSNR list contains NaN")
    if not finite:
        return GapStats(math.inf, math.inf, math.inf, 0.0, n_inf)
    return GapStats(
        mean_psnr=float(np.mean(finite)),
        min_psnr=min(finite),
        max_psnr=max(finite),
        gap_psnr=max(finite) - min(finite),
        n_inf=n_inf,
    )


@dataclass
class MetricsReport:
    """Per-frame curves plus sequence aggregates for one clip."""

    clip_id: str
    per_frame_psnr: list
    per_frame_ssim: list
    mean_psnr: float
    min_psnr: float
    max_psnr: float
    gap_psnr: float
    mean_ssim: float
    n_inf: int
    channel_mode: str
    border_crop: int
    notes: dict = field(default_factory=dict)


def sequence_report(
    ref_frames,
    test_frames,
    clip_id: str = "",
    channel_mode: str = "Y",
    border_crop: int = 0,
    notes: Optional[dict] = None,
) -> MetricsReport:
    if len(ref_frames) != len(test_frames):
        raise InputError(
            f"sequence lengths differ: {len(ref_frames)} vs {len(test_frames)}"
        )
    if len(ref_frames) == 0:
        raise InputError("empty sequence")
    psnrs = [psnr(r, t, channel_mode, border_crop) for r, t in zip(ref_frames, test_frames)]
    ssims = [ssim(r, t, channel_mode, border_crop) for r, t in zip(ref_frames, test_frames)]
    stats = gap_report(psnrs)
    return MetricsReport(
        clip_id=clip_id,
        per_frame_psnr=psnrs,
        per_frame_ssim=ssims,
        mean_psnr=stats.mean_psnr,
        min_psnr=stats.min_psnr,
        max_psnr=stats.max_psnr,
        gap_psnr=stats.gap_psnr,
        mean_ssim=float(np.mean(ssims)),
        n_inf=stats.n_inf,
        channel_mode=channel_mode.upper(),
        border_crop=border_crop,
        notes=dict(notes or {}),
    )


def write_metrics_csv(reports: Sequence[MetricsReport], path) -> None:
    """One row per frame plus one summary row per clip; the summary row
    carries the clip's mean PSNR/SSIM and its max-minus-min gap."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip", "frame_idx", "psnr", "ssim", "gap"])
        for report in reports:
            for i, (p, s) in enumerate(
                zip(report.per_frame_psnr, report.per_frame_ssim), start=1
            ):
                writer.writerow([report.clip_id, i, repr(p), repr(s), ""])
            writer.writerow(
                [
                    report.clip_id,
                    "summary",
                    repr(report.mean_psnr),
                    repr(report.mean_ssim),
                    repr(report.gap_psnr),
                ]
            )


def plot_psnr_curves(series: dict, path, title: str = "") -> None:
    """Per-frame PSNR curves, one line per labelled series."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for label, values in series.items():
        vals = np.asarray([v if math.isfinite(v) else np.nan for v in values])
        ax.plot(np.arange(1, len(vals) + 1), vals, marker="o", markersize=3,
                label=label)
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
