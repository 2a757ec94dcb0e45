"""Dataset handling: HR ingestion, the HR->LR degradation pipeline,
synthetic clips for desk-scale experiments, and aligned patch sampling.

Frame sequences are float tensors of shape (N, C, H, W) with values in
[0, 1].  On disk a clip is a directory of zero-padded 8-bit PNG frames
(``<root>/<clip_id>/00000001.png``, ...) and a corpus root carries a
``manifest.txt`` with one ``<clip_id> <split>`` line per clip.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy.ndimage import gaussian_filter

from .blocks import bicubic_resize
from .config import DegradationSpec
from .errors import InputError

MANIFEST_NAME = "manifest.txt"


@dataclass
class ClipRecord:
    """An HR/LR frame-sequence pair; LR dims are exactly HR dims / scale."""

    id: str
    hr_frames: torch.Tensor
    lr_frames: torch.Tensor
    meta: dict = field(default_factory=dict)


def gaussian_kernel(size: int, sigma: float) -> torch.Tensor:
    """Normalized isotropic 2-D Gaussian, peak at the center tap."""
    half = size // 2
    coords = torch.arange(size, dtype=torch.float64) - half
    g1 = torch.exp(-(coords**2) / (2 * sigma**2))
    k = g1[:, None] * g1[None, :]
    return k / k.sum()


def degrade(hr: torch.Tensor, spec: DegradationSpec) -> torch.Tensor:
    """Apply the HR->LR forward model to a frame or frame sequence.

    ``gaussian_downsample``: per-frame convolution with a normalized Gaussian
    (reflect padding, so borders stay energy-preserving) followed by stride-s
    subsampling at offset 0.  ``bicubic``: antialiased bicubic downscale.
    Outputs are clamped to [0, 1]: degradation is a pipeline boundary.
    """
    spec.validate()
    h, w = hr.shape[-2], hr.shape[-1]
    s = spec.scale
    if h % s != 0 or w % s != 0:
        raise InputError(f"HR dims {h}x{w} not divisible by scale {s}")
    if spec.mode == "bicubic":
        return bicubic_resize(hr, 1.0 / s).clamp(0.0, 1.0)
    lead = hr.shape[:-2]
    x = hr.reshape((-1, 1) + hr.shape[-2:])
    kernel = gaussian_kernel(spec.kernel_size, spec.blur_sigma).to(hr.dtype)
    pad = spec.kernel_size // 2
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    x = F.conv2d(x, kernel[None, None])
    x = x[..., ::s, ::s]
    return x.reshape(lead + x.shape[-2:]).clamp(0.0, 1.0)


def _lowpass_texture(rng: np.random.Generator, channels, h, w, cutoff=0.15):
    """Band-limited random texture in [0.1, 0.9] (margin for shift ringing)."""
    noise = rng.standard_normal((channels, h, w))
    spectrum = np.fft.fft2(noise)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    spectrum *= (np.hypot(fy, fx) <= cutoff)
    tex = np.fft.ifft2(spectrum).real
    lo, hi = tex.min(), tex.max()
    return 0.1 + 0.8 * (tex - lo) / (hi - lo + 1e-12)


def _subpixel_shift(img: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Circular shift of the last two axes; exact roll for integer offsets,
    Fourier phase shift otherwise."""
    if abs(dy - round(dy)) < 1e-9 and abs(dx - round(dx)) < 1e-9:
        return np.roll(img, (round(dy), round(dx)), axis=(-2, -1))
    h, w = img.shape[-2:]
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    phase = np.exp(-2j * np.pi * (fy * dy + fx * dx))
    return np.fft.ifft2(np.fft.fft2(img) * phase).real


def synth_sequence(
    kind: str,
    n: int,
    h: int,
    w: int,
    seed: int,
    velocity: tuple = (0.5, 0.25),
    channels: int = 3,
) -> torch.Tensor:
    """Deterministic synthetic HR sequence.

    ``translating_texture`` shifts one band-limited texture by ``velocity``
    pixels per frame with wrap-around, so consecutive frames carry genuine
    sub-pixel information about each other.  ``rotating_pattern`` evaluates a
    smooth analytic pattern on a slowly rotating grid.  ``random_smooth`` is
    temporally correlated low-pass noise.
    """
    if n < 1:
        raise InputError("need at least one frame")
    rng = np.random.default_rng(seed)
    if kind == "translating_texture":
        base = _lowpass_texture(rng, channels, h, w)
        frames = np.stack(
            [_subpixel_shift(base, t * velocity[0], t * velocity[1]) for t in range(n)]
        )
    elif kind == "rotating_pattern":
        yy, xx = np.meshgrid(
            np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij"
        )
        freqs = rng.uniform(0.5, 2.0, size=(channels, 2))
        phases = rng.uniform(0, 2 * np.pi, size=(channels, 2))
        omega = 2 * np.pi / max(n, 2) * 0.15
        frames = np.empty((n, channels, h, w))
        for t in range(n):
            a = t * omega
            u = math.cos(a) * yy - math.sin(a) * xx
            v = math.sin(a) * yy + math.cos(a) * xx
            for c in range(channels):
                frames[t, c] = (
                    0.5
                    + 0.25 * np.sin(2 * np.pi * freqs[c, 0] * u + phases[c, 0])
                    + 0.15 * np.cos(2 * np.pi * freqs[c, 1] * v + phases[c, 1])
                )
    elif kind == "random_smooth":
        noise = rng.standard_normal((n, channels, h, w))
        smooth = gaussian_filter(noise, sigma=(1.5, 0.0, 2.0, 2.0), mode="wrap")
        lo, hi = smooth.min(), smooth.max()
        frames = 0.1 + 0.8 * (smooth - lo) / (hi - lo + 1e-12)
    else:
        raise InputError(f"unknown synthetic kind {kind!r}")
    return torch.from_numpy(np.clip(frames, 0.0, 1.0)).float()


def make_synthetic_dataset(
    n_clips: int,
    n_frames: int,
    hr_size: int,
    spec: DegradationSpec,
    seed: int = 0,
    kind: str = "translating_texture",
) -> list:
    """In-memory corpus of degraded synthetic clips with per-clip velocities
    drawn from the master seed."""
    rng = np.random.default_rng(seed)
    clips = []
    for k in range(n_clips):
        clip_seed = int(rng.integers(0, 2**31 - 1))
        speed = rng.uniform(0.2, 0.9, size=2) * rng.choice([-1.0, 1.0], size=2)
        hr = synth_sequence(
            kind, n_frames, hr_size, hr_size, clip_seed, velocity=tuple(speed)
        )
        clips.append(
            ClipRecord(
                id=f"synth{k:04d}",
                hr_frames=hr,
                lr_frames=degrade(hr, spec),
                meta={"kind": kind, "seed": clip_seed, "velocity": tuple(speed)},
            )
        )
    return clips


def sample_patch(clip: ClipRecord, hr_patch: int, rng: np.random.Generator) -> ClipRecord:
    """Random aligned HR/LR crop; HR offsets are multiples of the scale so
    the LR crop is exactly the HR crop divided by it."""
    n, c, h, w = clip.hr_frames.shape
    if h < hr_patch or w < hr_patch:
        raise InputError(f"frame {h}x{w} smaller than patch {hr_patch}")
    s = h // clip.lr_frames.shape[-2]
    if hr_patch % s != 0:
        raise InputError(f"patch size {hr_patch} not divisible by scale {s}")
    oy = s * int(rng.integers(0, (h - hr_patch) // s + 1))
    ox = s * int(rng.integers(0, (w - hr_patch) // s + 1))
    meta = dict(clip.meta, crop=(oy, ox))
    return ClipRecord(
        id=clip.id,
        hr_frames=clip.hr_frames[..., oy : oy + hr_patch, ox : ox + hr_patch],
        lr_frames=clip.lr_frames[
            ..., oy // s : (oy + hr_patch) // s, ox // s : (ox + hr_patch) // s
        ],
        meta=meta,
    )


def frame_to_png(frame: torch.Tensor) -> Image.Image:
    arr = (frame.detach().clamp(0, 1) * 255).round().byte().cpu().numpy()
    if arr.shape[0] == 1:
        return Image.fromarray(arr[0], mode="L")
    return Image.fromarray(np.transpose(arr, (1, 2, 0)), mode="RGB")


def png_to_frame(path: Path) -> torch.Tensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(np.transpose(arr, (2, 0, 1)))


def save_clip(clip_dir: Path, frames: torch.Tensor) -> None:
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames, start=1):
        frame_to_png(frame).save(clip_dir / f"{i:08d}.png")


def load_clip(clip_dir: Path) -> torch.Tensor:
    paths = sorted(Path(clip_dir).glob("*.png"))
    if not paths:
        raise InputError(f"no PNG frames in {clip_dir}")
    return torch.stack([png_to_frame(p) for p in paths])


def write_manifest(root: Path, entries: list) -> None:
    """entries: iterable of (clip_id, split) pairs."""
    lines = [f"{clip_id} {split}" for clip_id, split in entries]
    (Path(root) / MANIFEST_NAME).write_text("\n".join(lines) + "\n")


def read_manifest(root: Path) -> list:
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected '<clip_id> <split>'")
        entries.append((parts[0], parts[1]))
    return entries


def load_dataset(
    root: Path, spec: DegradationSpec, split: Optional[str] = None
) -> list:
    """Load HR clips listed in the manifest and degrade them on the fly."""
    root = Path(root)
    clips = []
    for clip_id, clip_split in read_manifest(root):
        if split is not None and clip_split != split:
            continue
        hr = load_clip(root / clip_id)
        clips.append(
            ClipRecord(
                id=clip_id,
                hr_frames=hr,
                lr_frames=degrade(hr, spec),
                meta={"source": str(root / clip_id), "split": clip_split,
                      "degradation": dataclasses.asdict(spec)},
            )
        )
    if not clips:
        raise InputError(f"no clips for split={split!r} under {root}")
    return clips


def build_synthetic_corpus(
    root: Path,
    n_clips: int,
    n_frames: int,
    hr_size: int,
    seed: int = 0,
    kind: str = "translating_texture",
    val_fraction: float = 0.1,
) -> list:
    """Write a synthetic HR corpus (PNG trees + manifest) and return its
    manifest entries.  Every tenth-ish clip goes to the val split."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    n_val = max(1, int(round(n_clips * val_fraction))) if n_clips > 1 else 0
    for k in range(n_clips):
        clip_seed = int(rng.integers(0, 2**31 - 1))
        speed = rng.uniform(0.2, 0.9, size=2) * rng.choice([-1.0, 1.0], size=2)
        frames = synth_sequence(
            kind, n_frames, hr_size, hr_size, clip_seed, velocity=tuple(speed)
        )
        clip_id = f"clip{k:04d}"
        save_clip(root / clip_id, frames)
        split = "val" if k >= n_clips - n_val else "train"
        entries.append((clip_id, split))
    write_manifest(root, entries)
    return entries
