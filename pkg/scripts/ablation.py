"""Train full and ablated variants with one seed and budget, then compare SSIM per level.

    python3 scripts/ablation.py --out runs/ablation
"""

import argparse
import logging
from pathlib import Path

from demix.bench import BenchConfig, run_bench, write_csv
from demix.config import RunConfig
from demix.phantoms import phantom_corpus
from demix.train import train, write_history

VARIANTS = {
    "full": {},
    "no-gated-fusion": {"gated_fusion": "false"},
    "no-noise-encoder": {"noise_encoder": "false"},
    "no-msssim": {"msssim": "false"},
}


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--epochs", default="40")
    p.add_argument("--variants", default="full,no-gated-fusion,no-noise-encoder")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    base = RunConfig().with_overrides(dict(
        epochs=args.epochs, batch_size="4", patches_per_image="2", optimizer="adam", lr="0.002",
    ))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    images = phantom_corpus(16, 64, seed=1000)
    bench = BenchConfig(psf_pairs=((2.0, 1.5),), sweep=False, methods=("demix",))
    table = {}
    for name in args.variants.split(","):
        cfg = base.with_overrides(VARIANTS[name])
        params, history = train(cfg)
        params.save(out / f"{name}.ckpt")
        write_history(out / f"{name}_log.csv", history)
        rows, _ = run_bench(bench, images, params)
        write_csv(out / f"{name}_bench.csv", rows)
        table[name] = {r.cell.t: r.ssim for r in rows}

    lines = ["| variant | " + " | ".join(f"t={t}" for t in bench.levels) + " |", "|---" * (len(bench.levels) + 1) + "|"]
    for name, scores in table.items():
        lines.append(f"| {name} | " + " | ".join(f"{scores[t]:.4f}" for t in bench.levels) + " |")
    text = "\n".join(lines) + "\n"
    (out / "ablation.md").write_text(text)
    print(text)


if __name__ == "__main__":
    main()
