"""Benchmark grid: methods x noise levels x PSF pairs, plus the single-noise sweep."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .baseline import NlmConfig, gaussian_filter, nlmeans
from .degrade import NoiseSchedule, degrade_values, make_rng, schedule_at
from .model import INFERENCE_MASK, DemixParams, demix_forward
from . import diffcore as dc
from .process import restore_iterative
from .psf import PsfSpec, build_psf
from .quality import psnr, ssim

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "alpha_t", "beta_t", "sigma_x", "sigma_y", "psnr", "ssim", "n_images")


@dataclass(frozen=True)
class Cell:
    """One degradation condition. ``t`` is the level fed to the model."""

    t: int
    alpha_t: float
    beta_t: float
    sigma_x: float
    sigma_y: float
    kind: str = "mixed"  # mixed | additive-only | multiplicative-only

    @property
    def label(self) -> str:
        return f"a={self.alpha_t:.3f} b={self.beta_t:.3f} psf=({self.sigma_x:g},{self.sigma_y:g})"


@dataclass(frozen=True)
class BenchConfig:
    levels: tuple = (50, 100, 150, 200)
    psf_pairs: tuple = ((2.0, 1.5), (4.0, 3.5))
    sweep_psf: tuple = (2.0, 1.5)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    psf_mode: str = "envelope"
    psf_size: int = 3
    methods: tuple = ("noisy", "gaussian", "nlmeans", "demix")
    nlm_h: tuple = (0.05, 0.1, 0.2, 0.4, 0.8)
    gaussian_sigma: tuple = (0.5, 1.0, 1.5, 2.0, 3.0)
    sweep: bool = True
    seed: int = 0
    workers: int = 1

    def grid(self) -> list[Cell]:
        cells = []
        for sx, sy in self.psf_pairs:
            for t in self.levels:
                a, b = schedule_at(self.schedule, t)
                cells.append(Cell(t, a, b, sx, sy))
        if self.sweep:
            sx, sy = self.sweep_psf
            for t in self.levels:
                a, b = schedule_at(self.schedule, t)
                cells.append(Cell(t, 0.0, b, sx, sy, "additive-only"))
                cells.append(Cell(t, a, 0.0, sx, sy, "multiplicative-only"))
        return cells


@dataclass
class BenchRow:
    method: str
    cell: Cell
    psnr: float
    ssim: float
    n_images: int

    def as_csv(self) -> list:
        c = self.cell
        return [self.method, f"{c.alpha_t:.6f}", f"{c.beta_t:.6f}", f"{c.sigma_x:g}", f"{c.sigma_y:g}",
                f"{self.psnr:.4f}", f"{self.ssim:.6f}", self.n_images]


def degrade_set(images, cell: Cell, cfg: BenchConfig, salt: int = 0) -> list[np.ndarray]:
    """Seeded degradations, one independent stream per (image, cell)."""
    kernel = build_psf(PsfSpec(sigma_x=cell.sigma_x, sigma_y=cell.sigma_y, size=cfg.psf_size, mode=cfg.psf_mode))
    code = int(round(cell.alpha_t * 1e6)), int(round(cell.beta_t * 1e6)), int(cell.sigma_x * 100), int(cell.sigma_y * 100)
    return [
        degrade_values(img, kernel, cell.alpha_t, cell.beta_t, make_rng([cfg.seed, salt, i, *code]))
        for i, img in enumerate(images)
    ]


def _score(preds, cleans):
    out = [np.clip(p, 0.0, 1.0) for p in preds]
    return float(np.mean([psnr(p, c) for p, c in zip(out, cleans)])), float(np.mean([ssim(p, c) for p, c in zip(out, cleans)]))


def tune(method, noisy, cleans, grid):
    """Pick the grid value maximising mean SSIM on a tuning set."""
    best, best_s = grid[0], -np.inf
    for v in grid:
        preds = [run_baseline(method, x, v) for x in noisy]
        s = _score(preds, cleans)[1]
        if s > best_s:
            best, best_s = v, s
    return best


def run_baseline(method, image, value):
    if method == "gaussian":
        return gaussian_filter(image, value)
    if method == "nlmeans":
        return nlmeans(image, NlmConfig(h=value))
    raise ValueError(f"unknown baseline {method!r}")


def demix_batch(params: DemixParams, noisy, cell: Cell, chunk: int = 8):
    out = []
    for k in range(0, len(noisy), chunk):
        x = np.stack(noisy[k : k + chunk])[:, None]
        with dc.no_grad():
            y = demix_forward(x, cell.t, (cell.sigma_x, cell.sigma_y), INFERENCE_MASK, params).data
        out.extend(y[:, 0])
    return out


def _run_cell(cfg: BenchConfig, cell: Cell, methods, images, params, tune_images):
    noisy = degrade_set(images, cell, cfg)
    tune_noisy = degrade_set(tune_images, cell, cfg, salt=1) if tune_images else None
    rows, tuned = [], {}
    for method in methods:
        if method == "noisy":
            preds = noisy
        elif method in ("gaussian", "nlmeans"):
            grid = cfg.nlm_h if method == "nlmeans" else cfg.gaussian_sigma
            value = tune(method, tune_noisy, tune_images, grid) if tune_images else grid[len(grid) // 2]
            tuned[(method, cell)] = value
            preds = [run_baseline(method, x, value) for x in noisy]
        elif method == "demix":
            preds = demix_batch(params, noisy, cell)
        elif method == "demix-iter":
            preds = [restore_iterative(x, params, cell.t, cell.sigma_x, cell.sigma_y) for x in noisy]
        else:
            raise ValueError(f"unknown method {method!r}")
        p, s = _score(preds, images)
        rows.append(BenchRow(method, cell, p, s, len(images)))
        log.info("%-12s %-40s psnr %.2f ssim %.4f", method, cell.label, p, s)
    return rows, tuned


def run_bench(cfg: BenchConfig, images, params: DemixParams | None = None, tune_images=None):
    """Evaluate every method on every cell; returns (rows, tuned parameters per cell).

    Cells are independent and read the model only, so with ``cfg.workers > 1``
    they run in a process pool. Results do not depend on the worker count.
    """
    methods = list(cfg.methods)
    if params is None:
        methods = [m for m in methods if not m.startswith("demix")]
    cells = cfg.grid()
    job = partial(_run_cell, cfg, methods=methods, images=images, params=params, tune_images=tune_images)
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(job, cells))
    else:
        results = [job(cell) for cell in cells]
    rows, tuned = [], {}
    for r, t in results:
        rows.extend(r)
        tuned.update(t)
    return rows, tuned


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def markdown_table(rows, kind: str = "mixed") -> str:
    """Methods as rows, cells of one kind as columns, entries 'PSNR / SSIM'."""
    cells = []
    for r in rows:
        if r.cell.kind == kind and r.cell not in cells:
            cells.append(r.cell)
    methods = list(dict.fromkeys(r.method for r in rows))
    lookup = {(r.method, r.cell): r for r in rows}
    head = "| method | " + " | ".join(c.label for c in cells) + " |"
    sep = "|---" * (len(cells) + 1) + "|"
    lines = [head, sep]
    for m in methods:
        vals = []
        for c in cells:
            r = lookup.get((m, c))
            vals.append(f"{r.psnr:.2f} / {r.ssim:.4f}" if r else "-")
        lines.append(f"| {m} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def report_markdown(rows) -> str:
    parts = []
    for kind in ("mixed", "additive-only", "multiplicative-only"):
        if any(r.cell.kind == kind for r in rows):
            parts.append(f"### {kind}\n\n" + markdown_table(rows, kind))
    return "\n".join(parts)
