"""Command-line entry point: ``demix <verb> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import BenchConfig, report_markdown, run_bench, write_csv
from .config import RunConfig, load_config, parse_pairs
from .degrade import NoiseSchedule, degrade_values, make_rng, schedule_at
from .imageio import read_image, write_image
from .model import DemixParams
from .phantoms import KINDS, PhantomSpec, make_phantom, phantom_corpus
from .process import restore_iterative, restore_single_step
from .psf import PsfSpec, build_psf
from .train import train, write_history

log = logging.getLogger("demix")


def _meta_path(out) -> Path:
    return Path(str(out) + ".meta")


def write_meta(path, values: dict):
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def read_meta(path) -> dict:
    return parse_pairs(Path(path).read_text())


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    pairs = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    for flag, key in (("no_noise_encoder", "noise_encoder"), ("no_gated_fusion", "gated_fusion"), ("no_msssim", "msssim")):
        if getattr(args, flag, False):
            pairs[key] = "false"
    for key in ("epochs", "seed", "data", "out", "log"):
        v = getattr(args, key, None)
        if v is not None:
            pairs[key] = str(v)
    return cfg.with_overrides(pairs)


def cmd_phantom(args):
    spec = PhantomSpec(kind=args.kind, size=args.size, seed=args.seed, count=args.count,
                       levels=args.levels, period=args.period, low=args.low, high=args.high)
    write_image(args.out, make_phantom(spec))
    return 0


def cmd_degrade(args):
    if args.meta:
        meta = read_meta(args.meta)
        args.t = int(meta["t"])
        args.alpha = float(meta["alpha_t"])
        args.beta = float(meta["beta_t"])
        args.sigma_x = float(meta["sigma_x"])
        args.sigma_y = float(meta["sigma_y"])
        args.seed = int(meta["seed"])
        args.mode = meta.get("mode", args.mode)
    schedule = NoiseSchedule(T=args.T)
    alpha_t, beta_t = schedule_at(schedule, args.t)
    if args.alpha is not None:
        alpha_t = args.alpha
    if args.beta is not None:
        beta_t = args.beta
    kernel = build_psf(PsfSpec(sigma_x=args.sigma_x, sigma_y=args.sigma_y, mode=args.mode))
    image = read_image(args.input)
    noisy = degrade_values(image, kernel, alpha_t, beta_t, make_rng(args.seed))
    write_image(args.out, noisy)
    write_meta(_meta_path(args.out), {
        "t": args.t, "alpha_t": repr(alpha_t), "beta_t": repr(beta_t),
        "sigma_x": repr(args.sigma_x), "sigma_y": repr(args.sigma_y), "seed": args.seed, "mode": args.mode,
    })
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    params, history = train(cfg)
    params.save(cfg.out)
    write_history(cfg.log, history)
    log.info("wrote %s (%d parameters) and %s", cfg.out, params.count(), cfg.log)
    return 0


def cmd_denoise(args):
    params = DemixParams.load(args.checkpoint)
    t, sx, sy = args.t, args.sigma_x, args.sigma_y
    meta = _meta_path(args.input)
    if meta.exists():
        values = read_meta(meta)
        t = t if t is not None else int(values["t"])
        sx = sx if sx is not None else float(values["sigma_x"])
        sy = sy if sy is not None else float(values["sigma_y"])
    if t is None:
        raise SystemExit("denoise needs --t (or a .meta sidecar next to the input)")
    sx = 2.0 if sx is None else sx
    sy = 1.5 if sy is None else sy
    image = read_image(args.input)
    if args.iterative:
        out = restore_iterative(image, params, t, sx, sy)
    else:
        out = restore_single_step(image, params, t, sx, sy)
    write_image(args.out, out)
    return 0


def cmd_bench(args):
    levels = tuple(int(v) for v in args.levels.split(","))
    cfg = BenchConfig(levels=levels, seed=args.seed, methods=tuple(args.methods.split(",")),
                      sweep=not args.no_sweep, workers=args.workers)
    params = DemixParams.load(args.checkpoint) if args.checkpoint else None
    if params is not None:
        cfg = replace(cfg, schedule=params.cfg.schedule)
    if max(levels) > cfg.schedule.T:
        raise SystemExit(f"--levels {args.levels} exceeds the schedule length T={cfg.schedule.T}")
    if args.data:
        files = sorted(p for p in Path(args.data).iterdir() if p.suffix.lower() in (".pgm", ".pnm", ".png"))
        if not files:
            raise SystemExit(f"no images in {args.data}")
        images = [read_image(p) for p in files]
    else:
        images = phantom_corpus(args.n_images, args.size, seed=args.seed + 1000)
    tune_images = phantom_corpus(args.tune_images, args.size, seed=args.seed + 2000) if args.tune_images else None
    rows, _ = run_bench(cfg, images, params, tune_images)
    write_csv(args.csv, rows)
    md = report_markdown(rows)
    Path(args.markdown).write_text(md)
    print(md)
    return 0


def cmd_config_show(args):
    sys.stdout.write(_run_config(args).to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="demix", description="PSF-aware mixed-noise denoising toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("phantom", help="write a synthetic phantom image")
    s.add_argument("--kind", choices=KINDS, default="cysts")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--levels", type=int, default=6)
    s.add_argument("--period", type=float, default=12.0)
    s.add_argument("--low", type=float, default=0.15)
    s.add_argument("--high", type=float, default=0.85)
    s.add_argument("out")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("degrade", help="apply speckle, PSF blur and additive noise")
    s.add_argument("input")
    s.add_argument("out")
    s.add_argument("--t", type=int, default=50)
    s.add_argument("--T", type=int, default=200)
    s.add_argument("--alpha", type=float, help="override the speckle std")
    s.add_argument("--beta", type=float, help="override the additive std")
    s.add_argument("--sigma-x", type=float, default=2.0)
    s.add_argument("--sigma-y", type=float, default=1.5)
    s.add_argument("--mode", choices=("envelope", "literal-sine"), default="envelope")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--meta", help="re-run with the settings of an earlier .meta sidecar")
    s.set_defaults(func=cmd_degrade)

    def run_options(s):
        s.add_argument("--config", help="key = value config file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    s = sub.add_parser("train", help="train a model")
    run_options(s)
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--data", help="directory of training images (default: synthetic phantoms)")
    s.add_argument("--out", help="checkpoint path")
    s.add_argument("--log", help="per-epoch CSV log path")
    s.add_argument("--no-noise-encoder", action="store_true")
    s.add_argument("--no-gated-fusion", action="store_true")
    s.add_argument("--no-msssim", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", help="restore an image with a trained checkpoint")
    s.add_argument("input")
    s.add_argument("checkpoint")
    s.add_argument("out")
    s.add_argument("--t", type=int)
    s.add_argument("--sigma-x", type=float)
    s.add_argument("--sigma-y", type=float)
    s.add_argument("--iterative", action="store_true", help="deterministic reverse chain instead of one step")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("bench", help="benchmark grid to CSV and markdown")
    s.add_argument("--checkpoint")
    s.add_argument("--data", help="directory of clean test images (default: synthetic phantoms)")
    s.add_argument("--n-images", type=int, default=16)
    s.add_argument("--tune-images", type=int, default=4)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--methods", default="noisy,gaussian,nlmeans,demix")
    s.add_argument("--levels", default="50,100,150,200", help="comma-separated noise levels t")
    s.add_argument("--no-sweep", action="store_true")
    s.add_argument("--workers", type=int, default=1, help="evaluate grid cells in this many processes")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--csv", default="bench.csv")
    s.add_argument("--markdown", default="bench.md")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("config", help="configuration helpers")
    csub = s.add_subparsers(dest="action", required=True)
    c = csub.add_parser("show", help="print the effective configuration")
    run_options(c)
    c.set_defaults(func=cmd_config_show)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
