"""Benchmark a checkpoint on held-out phantoms: mixed grid plus single-noise sweep.

    python3 scripts/bench_desk.py runs/desk/model.ckpt --out runs/desk
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from demix.bench import BenchConfig, report_markdown, run_bench, write_csv
from demix.model import DemixParams
from demix.phantoms import phantom_corpus


def main():
    p = argparse.ArgumentParser()
    p.add_argument("checkpoint")
    p.add_argument("--out", default=".")
    p.add_argument("--n-images", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--iterative", action="store_true", help="also score the reverse chain (slow)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    params = DemixParams.load(args.checkpoint)
    methods = ("noisy", "gaussian", "nlmeans", "demix") + (("demix-iter",) if args.iterative else ())
    cfg = replace(BenchConfig(methods=methods, workers=args.workers), schedule=params.cfg.schedule)
    images = phantom_corpus(args.n_images, args.size, seed=1000)
    tune_images = phantom_corpus(4, args.size, seed=2000)
    rows, tuned = run_bench(cfg, images, params, tune_images)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "bench.csv", rows)
    md = report_markdown(rows)
    (out / "bench.md").write_text(md)
    print(md)
    for (method, cell), value in sorted(tuned.items(), key=lambda kv: (kv[0][0], kv[0][1].label)):
        print(f"tuned {method:8s} {cell.kind:20s} {cell.label}: {value:g}")


if __name__ == "__main__":
    main()
