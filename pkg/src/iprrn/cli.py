"""Command-line entry point: train / eval / degrade / ablate / synth.

Every command reads its inputs, writes only under ``--out``, and leaves a
``manifest.json`` there recording the command, the fully resolved config,
a content hash of the input files and the seed — reruns with an equal
manifest fingerprint produce equal outputs.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import torch

from . import data as data_mod
from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .config import DegradationSpec, RunConfig, load_config, load_plan
from .errors import ConfigError, InputError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

CACHE_ENV = "IPRRN_CACHE"
MANIFEST_JSON = "manifest.json"


def content_hash(paths) -> str:
    """SHA-1 over the names and bytes of the given input files."""
    digest = hashlib.sha1()
    for path in paths:
        path = Path(path)
        digest.update(path.name.encode())
        if path.is_file():
            digest.update(path.read_bytes())
    return digest.hexdigest()


def write_run_manifest(out_dir: Path, command: str, config: dict,
                       inputs, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "fingerprint": {
            "command": command,
            "config": config,
            "inputs_hash": content_hash(inputs),
            "seed": seed,
        },
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "argv": sys.argv[1:],
    }
    (out_dir / MANIFEST_JSON).write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset_cached(root: Path, spec: DegradationSpec, split):
    """load_dataset with an optional on-disk cache of degraded clips,
    keyed by data root, manifest contents and degradation spec."""
    cache_root = os.environ.get(CACHE_ENV)
    if not cache_root:
        return data_mod.load_dataset(root, spec, split)
    key = hashlib.sha1(
        json.dumps(
            {
                "root": str(Path(root).resolve()),
                "manifest": content_hash([Path(root) / data_mod.MANIFEST_NAME]),
                "spec": dataclasses.asdict(spec),
                "split": split,
            },
            sort_keys=True,
        ).encode()
    ).hexdigest()
    cache_path = Path(cache_root) / f"dataset-{key}.pt"
    if cache_path.is_file():
        payload = torch.load(cache_path, weights_only=True)
        return [
            data_mod.ClipRecord(c["id"], c["hr"], c["lr"], c["meta"])
            for c in payload
        ]
    clips = data_mod.load_dataset(root, spec, split)
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        [{"id": c.id, "hr": c.hr_frames, "lr": c.lr_frames, "meta": c.meta}
         for c in clips],
        cache_path,
    )
    return clips


def _require_dir(path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise ConfigError(f"{what} not found: {path}")
    return path


def _apply_seed(run: RunConfig, seed) -> RunConfig:
    if seed is None:
        return run
    return RunConfig(
        model=dataclasses.replace(run.model, seed=seed),
        train=dataclasses.replace(run.train, seed=seed),
        degradation=run.degradation,
    )


def cmd_train(args) -> int:
    run = _apply_seed(load_config(args.config), args.seed)
    data_root = _require_dir(args.data_root, "data root")
    out_dir = Path(args.out)
    dataset = load_dataset_cached(data_root, run.degradation, split="train")
    write_run_manifest(
        out_dir, "train", run.to_dict(),
        [Path(args.config), data_root / data_mod.MANIFEST_NAME],
        run.train.seed,
    )
    result = trainer_mod.train(
        dataset, run.model, run.train, out_dir=out_dir, device=args.device
    )
    print(f"trained {run.train.max_epochs} epochs, final loss "
          f"{result.final_loss:.6f}; checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _eval_degradation(args, scale: int) -> DegradationSpec:
    return DegradationSpec(
        blur_sigma=args.blur_sigma,
        kernel_size=args.kernel_size,
        scale=scale,
        mode=args.degrade_mode,
    ).validate()


def cmd_eval(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.is_file():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    data_root = _require_dir(args.data_root, "data root")
    out_dir = Path(args.out)
    model, payload = trainer_mod.restore_model(checkpoint)
    scale = payload["model_config"].scale
    spec = _eval_degradation(args, scale)
    clips = load_dataset_cached(data_root, spec, split=args.split)
    for clip in clips:
        if clip.hr_frames.shape[-2] % scale or clip.hr_frames.shape[-1] % scale:
            raise InputError(
                f"clip {clip.id}: HR dims {tuple(clip.hr_frames.shape[-2:])} "
                f"not divisible by checkpoint scale {scale}"
            )
    write_run_manifest(
        out_dir, "eval",
        {"checkpoint": str(checkpoint), "degradation": dataclasses.asdict(spec),
         "channel_mode": args.channel_mode, "border_crop": args.border_crop},
        [checkpoint, data_root / data_mod.MANIFEST_NAME],
        payload["train_config"].seed,
    )
    notes = {
        "degradation": json.dumps(dataclasses.asdict(spec)),
        "luminance": "BT.601 studio swing",
    }
    reports = []
    compare_reports = None
    for clip in clips:
        if args.debug_identity:
            sr = clip.hr_frames.clone()
        else:
            sr = model.super_resolve(clip.lr_frames).clamp(0.0, 1.0)
        reports.append(
            metrics_mod.sequence_report(
                clip.hr_frames, sr, clip_id=clip.id,
                channel_mode=args.channel_mode, border_crop=args.border_crop,
                notes=notes,
            )
        )
        data_mod.save_clip(out_dir / "sr" / clip.id, sr)
    metrics_mod.write_metrics_csv(reports, out_dir / "metrics.csv")
    if args.compare is not None:
        other, _ = trainer_mod.restore_model(Path(args.compare))
        compare_reports = trainer_mod.evaluate(
            other, clips, channel_mode=args.channel_mode,
            border_crop=args.border_crop,
        )
        metrics_mod.write_metrics_csv(compare_reports, out_dir / "metrics_compare.csv")
    if args.per_frame_plot:
        for i, report in enumerate(reports):
            series = {checkpoint.stem: report.per_frame_psnr}
            if compare_reports is not None:
                series[Path(args.compare).stem] = compare_reports[i].per_frame_psnr
            metrics_mod.plot_psnr_curves(
                series, out_dir / "plots" / f"{report.clip_id}.png",
                title=report.clip_id,
            )
    mean = sum(r.mean_psnr for r in reports) / len(reports)
    print(f"evaluated {len(reports)} clips; mean PSNR {mean:.2f} dB "
          f"({args.channel_mode}-channel)")
    return EXIT_OK


def cmd_degrade(args) -> int:
    hr_root = _require_dir(args.hr_root, "HR root")
    out_dir = Path(args.out)
    spec = DegradationSpec(
        blur_sigma=args.blur_sigma, kernel_size=args.kernel_size,
        scale=args.scale, mode=args.degrade_mode,
    ).validate()
    clip_dirs = sorted(d for d in hr_root.iterdir()
                       if d.is_dir() and any(d.glob("*.png")))
    if not clip_dirs:
        raise ConfigError(f"no clip directories with PNG frames under {hr_root}")
    existing = [d for d in clip_dirs if (out_dir / d.name).exists()]
    if existing and not args.force:
        raise ConfigError(
            f"output already contains {len(existing)} of these clips under "
            f"{out_dir}; rerun with --force to overwrite"
        )
    write_run_manifest(out_dir, "degrade",
                       {"degradation": dataclasses.asdict(spec),
                        "hr_root": str(hr_root)},
                       [hr_root / data_mod.MANIFEST_NAME], None)
    done = 0
    for clip_dir in clip_dirs:
        hr = data_mod.load_clip(clip_dir)
        try:
            lr = data_mod.degrade(hr, spec)
        except InputError as exc:
            print(f"warning: skipping {clip_dir.name}: {exc}", file=sys.stderr)
            continue
        data_mod.save_clip(out_dir / clip_dir.name, lr)
        done += 1
    manifest_src = hr_root / data_mod.MANIFEST_NAME
    if manifest_src.is_file():
        (out_dir / data_mod.MANIFEST_NAME).write_text(manifest_src.read_text())
    print(f"degraded {done}/{len(clip_dirs)} clips into {out_dir}")
    if done == 0:
        raise InputError("every clip failed to degrade")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base, plan = load_plan(args.plan)
    base = _apply_seed(base, args.seed)
    data_root = _require_dir(args.data_root, "data root")
    out_dir = Path(args.out)
    dataset = load_dataset_cached(data_root, base.degradation, split="train")
    try:
        eval_clips = load_dataset_cached(data_root, base.degradation, split="val")
    except InputError:
        eval_clips = dataset
    write_run_manifest(
        out_dir, "ablate",
        {"plan": plan.name, "base": base.to_dict(),
         "variants": [dataclasses.asdict(v) for v in plan.variants]},
        [Path(args.plan), data_root / data_mod.MANIFEST_NAME],
        base.train.seed,
    )
    results = trainer_mod.ablate(base, plan, dataset, eval_clips=eval_clips,
                                 out_dir=out_dir)
    print(trainer_mod.render_markdown_table(results))
    if all(r.error is not None for r in results):
        raise InputError("every ablation variant failed")
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    if (out_dir / data_mod.MANIFEST_NAME).exists() and not args.force:
        raise ConfigError(
            f"{out_dir} already holds a corpus; rerun with --force to overwrite"
        )
    write_run_manifest(
        out_dir, "synth",
        {"clips": args.clips, "frames": args.frames, "size": args.size,
         "kind": args.kind},
        [], args.seed,
    )
    entries = data_mod.build_synthetic_corpus(
        out_dir, args.clips, args.frames, args.size, seed=args.seed,
        kind=args.kind,
    )
    print(f"wrote {len(entries)} clips under {out_dir}")
    return EXIT_OK


def _add_degradation_flags(parser, with_scale: bool) -> None:
    if with_scale:
        parser.add_argument("--scale", type=int, default=4)
    parser.add_argument("--blur-sigma", type=float, default=1.6)
    parser.add_argument("--kernel-size", type=int, default=13)
    parser.add_argument("--degrade-mode", default="gaussian_downsample",
                        choices=["gaussian_downsample", "bicubic"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iprrn",
        description="Recurrent video super-resolution with a prebuilt "
                    "initial hidden state: training, evaluation, degradation "
                    "and ablation workflows.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--device", default="cpu")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    p.add_argument("checkpoint")
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--channel-mode", default="Y", choices=["Y", "RGB"])
    p.add_argument("--border-crop", type=int, default=0)
    p.add_argument("--per-frame-plot", action="store_true")
    p.add_argument("--compare", default=None,
                   help="second checkpoint for paired per-frame curves")
    p.add_argument("--debug-identity", action="store_true",
                   help="score HR against itself (pipeline smoke test)")
    _add_degradation_flags(p, with_scale=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("degrade", help="write an LR mirror of an HR tree")
    p.add_argument("--hr-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_degradation_flags(p, with_scale=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("ablate", help="run an ablation plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic HR corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=20)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--kind", default="translating_texture",
                   choices=["translating_texture", "rotating_pattern",
                            "random_smooth"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure, stable non-zero contract
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
