"""Training loop: patch sampling, on-the-fly degradation, SGD."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .degrade import augment, degrade_values, make_rng, schedule_at
from .imageio import read_image
from .model import INFERENCE_MASK, DemixParams, demix_forward, init_params, sample_mask
from .phantoms import phantom_corpus
from .psf import build_psf
from .quality import loss_total, psnr

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_psnr: float
    val_noisy_psnr: float
    seconds: float


def load_corpus(cfg) -> list[np.ndarray]:
    """Images from ``cfg.data`` (a directory of PGM/PNG files) or seeded phantoms."""
    if cfg.data:
        from pathlib import Path

        files = sorted(p for p in Path(cfg.data).iterdir() if p.suffix.lower() in (".pgm", ".pnm", ".png"))
        return [read_image(p) for p in files]
    return phantom_corpus(cfg.phantoms, cfg.phantom_size, seed=cfg.seed)


def split_indices(n: int, val_fraction: float, partition: int, seed: int):
    """Seeded train/validation split; ``partition`` selects one of several resamplings."""
    perm = make_rng([seed, 7919, partition]).permutation(n)
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        raise TrainingError(f"{n} images leave nothing to train on")
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def random_crop(image, size, rng):
    H, W = image.shape
    if H < size or W < size:
        pad = ((0, max(size - H, 0)), (0, max(size - W, 0)))
        image = np.pad(image, pad, mode="reflect")
        H, W = image.shape
    r = int(rng.integers(H - size + 1))
    c = int(rng.integers(W - size + 1))
    return image[r : r + size, c : c + size]


def center_crop(image, size):
    H, W = image.shape
    r, c = max((H - size) // 2, 0), max((W - size) // 2, 0)
    return image[r : r + size, c : c + size]


class PairSampler:
    """Draws (sigma_x, sigma_y) from the PSF grid, t ~ U{1..T}, noise, and a mask."""

    def __init__(self, cfg, params: DemixParams):
        self.cfg = cfg
        self.schedule = cfg.schedule
        self.psi = params.grid.psi
        self._kernels = {}

    def kernel(self, sx, sy):
        key = (sx, sy)
        if key not in self._kernels:
            self._kernels[key] = build_psf(self.cfg.psf_spec(sx, sy))
        return self._kernels[key]

    def draw(self, clean, rng):
        m = self.psi.shape[1]
        sx = float(self.psi[0, rng.integers(m)])
        sy = float(self.psi[1, rng.integers(m)])
        t = int(rng.integers(1, self.schedule.T + 1))
        alpha_t, beta_t = schedule_at(self.schedule, t)
        noisy = degrade_values(clean, self.kernel(sx, sy), alpha_t, beta_t, rng)
        return noisy, t, (sx, sy), sample_mask(rng)


def train(cfg, images=None, params: DemixParams | None = None, on_epoch=None):
    """Train from scratch (or continue ``params``); returns (params, history)."""
    if images is None:
        images = load_corpus(cfg)
    if not images:
        raise TrainingError("empty training set")
    train_idx, val_idx = split_indices(len(images), cfg.val_fraction, cfg.partition, cfg.seed)
    if params is None:
        params = init_params(cfg.model_config(), seed=cfg.seed)
    if cfg.optimizer not in ("sgd", "adam"):
        raise TrainingError(f"unknown optimizer {cfg.optimizer!r}")
    sampler = PairSampler(cfg, params)
    trainable = list(params.trainable())
    velocity: dict = {}

    val_rng = make_rng([cfg.seed, 104729])
    val_set = []
    for i in val_idx:
        clean = center_crop(images[i], cfg.patch_size)
        val_set.append((clean,) + sampler.draw(clean, val_rng)[:3])
    val_noisy = float(np.mean([psnr(np.clip(n, 0, 1), c) for c, n, _, _ in val_set])) if val_set else float("nan")

    history = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        rng = make_rng([cfg.seed, 1, epoch])
        lr = cfg.lr_at(epoch)
        items = []
        for i in train_idx:
            for _ in range(cfg.patches_per_image):
                img = augment(images[i], rng) if cfg.augment else images[i]
                items.append(random_crop(img, cfg.patch_size, rng))
        order = rng.permutation(len(items))
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = [items[k] for k in order[b0 : b0 + cfg.batch_size]]
            draws = [sampler.draw(clean, rng) for clean in batch]
            clean = np.stack(batch)[:, None]
            noisy = np.stack([d[0] for d in draws])[:, None]
            t = np.array([d[1] for d in draws])
            sig = np.array([d[2] for d in draws])
            masks = [d[3] for d in draws]
            pred = demix_forward(noisy, t, sig, masks, params)
            loss = loss_total(pred, clean, use_msssim=cfg.msssim, scales=cfg.msssim_scales)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b0 // cfg.batch_size}")
            dc.backward(loss)
            if cfg.optimizer == "adam":
                dc.adam_step(trainable, lr, velocity)
            else:
                dc.sgd_step(trainable, lr, cfg.momentum, velocity)
            losses.append(value * len(batch))
        val = evaluate_pairs(params, val_set)
        stats = EpochStats(epoch + 1, lr, float(np.sum(losses) / len(items)), val, val_noisy, time.perf_counter() - start)
        history.append(stats)
        log.info(
            "epoch %d lr %.2g loss %.4f val psnr %.2f (noisy %.2f) %.1fs",
            stats.epoch, lr, stats.train_loss, val, val_noisy, stats.seconds,
        )
        if on_epoch is not None:
            on_epoch(stats)
    return params, history


def evaluate_pairs(params, pairs) -> float:
    if not pairs:
        return float("nan")
    clean = np.stack([p[0] for p in pairs])[:, None]
    noisy = np.stack([p[1] for p in pairs])[:, None]
    t = np.array([p[2] for p in pairs])
    sig = np.array([p[3] for p in pairs])
    with dc.no_grad():
        pred = demix_forward(noisy, t, sig, INFERENCE_MASK, params).data
    return float(np.mean([psnr(np.clip(pred[i, 0], 0, 1), clean[i, 0]) for i in range(len(pairs))]))


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "val_psnr", "val_noisy_psnr", "seconds"])
        for h in history:
            w.writerow([h.epoch, h.lr, f"{h.train_loss:.6f}", f"{h.val_psnr:.4f}", f"{h.val_noisy_psnr:.4f}", f"{h.seconds:.2f}"])
