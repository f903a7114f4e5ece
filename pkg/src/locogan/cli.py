"""Command-line interface.

Subcommands: train, sample, interpolate, tile, transplant, verify,
metrics.  Every command taking --seed is fully deterministic: repeated
invocations write byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, load_checkpoint, load_generator
from .config import ConfigError, load_config
from .geometry import FootprintMap, NonPositiveOutput, latent_size_for_target, stack_output_size
from .imageio import encode_image
from .latent import (
    AxisWorld,
    LatentGeometry,
    LatentImage,
    RegionOutOfBounds,
    geometry_for_sample,
    interpolate_latents,
    sample_latent,
    tile_periodic,
    transplant,
)
from .metrics import generated_crop_set, patch_statistics_distance, real_crop_set
from .model import generate
from .training import EmptyDataset, train
from .verify import run_checks

SAMPLE_PAD = 1  # noise-padding margin used when solving latent sizes for sampling


@dataclass
class SeamReport:
    """Wrap-around discrepancy of a tiled image at its period boundaries."""

    period: int  # pixels
    axes: str
    x_max: float | None
    x_mean: float | None
    y_max: float | None
    y_mean: float | None
    tolerance: float
    passed: bool

    def as_dict(self) -> dict:
        return asdict(self)


def seam_report(values: np.ndarray, period: int, axes: str, tolerance: float = 0.05) -> SeamReport:
    """Compare every pixel with its neighbour one period over, per tiled axis."""
    x_max = x_mean = y_max = y_mean = None
    if "x" in axes and values.shape[2] > period:
        d = np.abs(values[:, :, :-period] - values[:, :, period:])
        x_max, x_mean = float(d.max()), float(d.mean())
    if axes == "xy" and values.shape[1] > period:
        d = np.abs(values[:, :-period, :] - values[:, period:, :])
        y_max, y_mean = float(d.max()), float(d.mean())
    worst = max(v for v in (x_max, y_max) if v is not None)
    return SeamReport(period, axes, x_max, x_mean, y_max, y_mean, tolerance, worst < tolerance)


def _apply_thread_cap() -> None:
    cap = os.environ.get("LOCOGAN_THREADS")
    if cap:
        torch.set_num_threads(max(1, int(cap)))


def _sample_image(net, cfg, height: int, width: int, seed: int):
    fmap = FootprintMap.build(cfg.g_config.layers)
    geom, (nh, nw) = geometry_for_sample(
        cfg.latent_spec.coordinate, height, width, fmap, pad=SAMPLE_PAD
    )
    rng = np.random.default_rng(seed)
    lat = sample_latent(cfg.latent_spec, nh, nw, rng, geometry=geom)
    return generate(net, lat), lat


def cmd_train(args) -> int:
    run_cfg = load_config(args.config)
    src = run_cfg.dataset_source()
    images = src.images()  # raises with the offending path before training
    extent = (images[0].shape[1], images[0].shape[2])
    out_dir = Path(args.out or "runs")
    resume = None
    if args.checkpoint:
        resume = load_checkpoint(args.checkpoint)
        cfg = resume.cfg
        if args.steps is not None:
            cfg.total_steps = args.steps
    else:
        cfg = run_cfg.train_config(source_extent=extent)
        if args.steps is not None:
            cfg.total_steps = args.steps
    state, written = train(cfg, src, out_dir, resume=resume)
    print(f"trained to step {state.step}; checkpoints: {', '.join(p.name for p in written)}")
    return 0


def cmd_sample(args) -> int:
    if args.width < 1 or args.height < 1:
        raise ValueError("--width and --height must be >= 1")
    net, cfg, _ = load_generator(args.checkpoint)
    img, _ = _sample_image(net, cfg, args.height, args.width, args.seed)
    out = Path(args.out or f"sample-{args.height}x{args.width}-seed{args.seed}.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    encode_image(out, img.values)
    print(f"wrote {out} ({img.height}x{img.width})")
    return 0


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise ValueError("--steps must be >= 2")
    net, cfg, _ = load_generator(args.checkpoint)
    fmap = FootprintMap.build(cfg.g_config.layers)
    size_a = (args.height_a, args.width_a)
    size_b = (args.height_b, args.width_b)
    geom_a, (nha, nwa) = geometry_for_sample(cfg.latent_spec.coordinate, *size_a, fmap, SAMPLE_PAD)
    geom_b, (nhb, nwb) = geometry_for_sample(cfg.latent_spec.coordinate, *size_b, fmap, SAMPLE_PAD)
    lat_a = sample_latent(cfg.latent_spec, nha, nwa, np.random.default_rng(args.seed_a), geometry=geom_a)
    lat_b = sample_latent(cfg.latent_spec, nhb, nwb, np.random.default_rng(args.seed_b), geometry=geom_b)
    out_dir = Path(args.out or "interpolation")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(args.steps):
        t = i / (args.steps - 1)
        mixed, size = interpolate_latents(lat_a, lat_b, t, size_a, size_b, fmap, SAMPLE_PAD)
        img = generate(net, mixed)
        path = out_dir / f"frame-{i:03d}.png"
        encode_image(path, img.values)
        paths.append(path)
    print(f"wrote {len(paths)} frames to {out_dir}")
    return 0


def cmd_tile(args) -> int:
    net, cfg, _ = load_generator(args.checkpoint)
    cspec = cfg.latent_spec.coordinate
    fmap = FootprintMap.build(cfg.g_config.layers)
    scale = int(fmap.scale)
    period = args.period or (cspec.period or 0)
    if period < scale or period % scale != 0:
        raise ValueError(f"--period must be a positive multiple of {scale}, got {period}")
    p = period // scale
    mode = args.mode
    if mode == "strip" and cspec.mode not in ("periodic_x", "periodic_xy"):
        raise ValueError(f"strip tiling needs an x-periodic checkpoint, got {cspec.mode!r}")
    if mode == "plane" and cspec.mode != "periodic_xy":
        raise ValueError(f"plane tiling needs an xy-periodic checkpoint, got {cspec.mode!r}")
    if cspec.period != period:
        raise ValueError(f"checkpoint was trained with period {cspec.period}, got {period}")

    width, height = args.width, args.height
    rng = np.random.default_rng(args.seed)

    def tiled_axis_latent(target: int) -> int:
        for n in range(1, target + scale * 8):
            try:
                if stack_output_size(n, fmap.layers) >= target:
                    return ((n + p - 1) // p) * p
            except NonPositiveOutput:
                continue
        raise ValueError(f"no latent size covers a {target}px tile for this stack")

    nw = tiled_axis_latent(width)
    if mode == "plane":
        nh = tiled_axis_latent(height)
        crop = (0, 0, height, width)
    else:
        nh, off_y = latent_size_for_target(height, fmap.layers, SAMPLE_PAD)
        crop = (off_y, 0, height, width)

    ref_h, ref_w = cspec.reference_extent
    wx = AxisWorld(2.0 / (ref_w - 1) if ref_w > 1 else 0.0, -1.0)
    if mode == "plane":
        wy = AxisWorld(2.0 / (ref_h - 1) if ref_h > 1 else 0.0, -1.0)
        y_world = AxisWorld(wy.scale * scale, wy.scale * float(fmap.offset) + wy.offset)
    else:
        # linear y: stretch [-1, 1] over the emitted height
        ws = 2.0 / (height - 1) if height > 1 else 0.0
        y_world = AxisWorld(ws * scale, ws * (float(fmap.offset) - crop[0]) - 1.0)
    geom = LatentGeometry(
        x_world=AxisWorld(wx.scale * scale, wx.scale * float(fmap.offset) + wx.offset),
        y_world=y_world,
        crop=crop,
    )
    lat = sample_latent(cfg.latent_spec, nh, nw, rng, geometry=geom)
    if not args.semi:
        lat = tile_periodic(lat, p, "xy" if mode == "plane" else "x", fmap)
    img = generate(net, lat)
    report = seam_report(img.values, period, "xy" if mode == "plane" else "x",
                         tolerance=args.tolerance)
    out = Path(args.out or f"tile-{mode}.png")
    out.parent.mkdir(parents=True, exist_ok=True)
    encode_image(out, img.values)
    report_path = out.with_suffix(".seam.json")
    report_path.write_text(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    print(f"wrote {out} ({img.height}x{img.width}); seam report: {report_path}")
    print(json.dumps(report.as_dict(), sort_keys=True))
    if args.semi:
        return 0
    return 0 if report.passed else 1


def cmd_transplant(args) -> int:
    net, cfg, _ = load_generator(args.checkpoint)
    size = (args.height, args.width)
    img_a, lat_a = _sample_image(net, cfg, *size, args.seed_a)
    img_b, lat_b = _sample_image(net, cfg, *size, args.seed_b)
    rx, ry, rw, rh = args.region
    mixed = transplant(lat_b, lat_a, (ry, rx, rh, rw), args.channels)
    img = generate(net, mixed)
    out_dir = Path(args.out or "transplant")
    out_dir.mkdir(parents=True, exist_ok=True)
    encode_image(out_dir / "source-a.png", img_a.values)
    encode_image(out_dir / "source-b.png", img_b.values)
    encode_image(out_dir / "transplanted.png", img.values)
    print(f"wrote 3 images to {out_dir}")
    return 0


def cmd_verify(args) -> int:
    g_net = d_net = None
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint)
        g_net, d_net = state.generator, state.discriminator
    results = run_checks(g_net, d_net)
    report = {r.name: r.as_dict() for r in results}
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    failed = 0
    for r in results:
        status = "SKIP" if r.skipped else ("PASS" if r.passed else "FAIL")
        print(f"[{status}] {r.name}: {r.detail}")
        failed += 0 if (r.passed or r.skipped) else 1
    return 1 if failed else 0


def cmd_metrics(args) -> int:
    net, cfg, step = load_generator(args.checkpoint)
    run_cfg = load_config(args.config)
    src = run_cfg.dataset_source()
    fmap = FootprintMap.build(cfg.g_config.layers)
    rng_real = np.random.default_rng(args.seed)
    rng_fake = np.random.default_rng(args.seed + 1)
    real = real_crop_set(src, args.samples, fmap, rng_real, pad=cfg.latent_pad)
    fake = generated_crop_set(net, cfg.latent_spec, src, args.samples, fmap, rng_fake,
                              pad=cfg.latent_pad)
    dist = patch_statistics_distance(real, fake, projections=args.projections, seed=args.seed)
    record = {"step": step, "samples": args.samples, "patch_distance": dist}
    print(json.dumps(record, sort_keys=True))
    if args.out:
        Path(args.out).write_text(json.dumps(record, indent=2, sort_keys=True))
    return 0


def _region(text: str) -> tuple[int, int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("region must be x,y,w,h")
    return tuple(parts)  # type: ignore[return-value]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locogan")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a folder of images or one pattern image")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--out", help="output directory (default: runs)")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="decode one image of any size")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="blend two seeds across two sizes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed-a", type=int, required=True)
    p.add_argument("--seed-b", type=int, required=True)
    p.add_argument("--width-a", type=int, required=True)
    p.add_argument("--height-a", type=int, required=True)
    p.add_argument("--width-b", type=int, required=True)
    p.add_argument("--height-b", type=int, required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("tile", help="decode a periodic strip or plane tile")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("strip", "plane"), default="strip")
    p.add_argument("--period", type=int, help="period in pixels (default: trained period)")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--semi", action="store_true",
                   help="fresh local noise per tile (semi-periodic)")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("transplant", help="copy a latent region between two seeds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed-a", type=int, required=True)
    p.add_argument("--seed-b", type=int, required=True)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--region", type=_region, required=True,
                   help="x,y,w,h in latent pixels")
    p.add_argument("--channels", choices=("global", "local", "both"), default="both")
    p.add_argument("--out")
    p.set_defaults(func=cmd_transplant)

    p = sub.add_parser("verify", help="run the structural property checks")
    p.add_argument("--checkpoint", help="check these weights (default: fresh)")
    p.add_argument("--out", help="write a JSON report here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="patch-statistics distance real vs generated")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--projections", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, EmptyDataset, RegionOutOfBounds,
            ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
