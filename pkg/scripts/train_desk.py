"""Train the desk-scale model and write checkpoint, per-epoch log and config.

    python3 scripts/train_desk.py --out runs/desk [--set key=value ...]
"""

import argparse
import logging
import time
from pathlib import Path

from demix.config import RunConfig, parse_pairs
from demix.train import train, write_history

DESK = dict(epochs="40", phantoms="64", phantom_size="96", patch_size="64", batch_size="4",
            patches_per_image="2", optimizer="adam", lr="0.002")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--no-noise-encoder", action="store_true")
    p.add_argument("--no-gated-fusion", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    overrides = dict(DESK)
    overrides.update(parse_pairs("\n".join(args.set)))
    if args.no_noise_encoder:
        overrides["noise_encoder"] = "false"
    if args.no_gated_fusion:
        overrides["gated_fusion"] = "false"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig().with_overrides(overrides).with_overrides(
        {"out": str(out / "model.ckpt"), "log": str(out / "train_log.csv")}
    )
    (out / "run.cfg").write_text(cfg.to_text())

    start = time.perf_counter()
    params, history = train(cfg)
    params.save(cfg.out)
    write_history(cfg.log, history)
    print(f"trained {params.count()} parameters in {(time.perf_counter() - start) / 60:.1f} min -> {cfg.out}")


if __name__ == "__main__":
    main()
