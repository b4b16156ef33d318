"""Synthetic calibration phantoms with values in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degrade import make_rng

KINDS = ("point-targets", "step-wedge", "concentric-rings", "gradient", "checker", "cysts")


@dataclass(frozen=True)
class PhantomSpec:
    kind: str = "cysts"
    size: int = 64
    seed: int = 0
    count: int = 8  # point targets / inclusions
    levels: int = 6  # step-wedge bands
    period: float = 12.0  # rings / checker cell, in pixels
    low: float = 0.15
    high: float = 0.85

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown phantom kind {self.kind!r}; expected one of {KINDS}")
        if self.size < 4:
            raise ValueError("phantom size must be >= 4")
        if not 0.0 <= self.low <= self.high <= 1.0:
            raise ValueError("need 0 <= low <= high <= 1")


def _coords(n):
    y, x = np.mgrid[0:n, 0:n].astype(np.float64)
    return y, x


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    n = spec.size
    rng = make_rng(spec.seed)
    lo, hi = spec.low, spec.high
    y, x = _coords(n)
    if spec.kind == "point-targets":
        img = np.zeros((n, n))
        cells = rng.choice(n * n, size=min(spec.count, n * n), replace=False)
        img.flat[cells] = 1.0
        return img
    if spec.kind == "step-wedge":
        band = np.minimum((y * spec.levels / n).astype(int), spec.levels - 1)
        return lo + (hi - lo) * band / max(spec.levels - 1, 1)
    if spec.kind == "concentric-rings":
        cy, cx = rng.uniform(0.3 * n, 0.7 * n, size=2)
        r = np.hypot(y - cy, x - cx)
        return np.where((r // (spec.period / 2)) % 2 == 0, hi, lo)
    if spec.kind == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        u = (np.cos(theta) * x + np.sin(theta) * y)
        u = (u - u.min()) / max(u.max() - u.min(), 1e-12)
        return lo + (hi - lo) * u
    if spec.kind == "checker":
        cell = max(int(spec.period), 1)
        return np.where(((y // cell) + (x // cell)) % 2 == 0, hi, lo)
    # cysts: graded background with circular inclusions of mixed contrast
    theta = rng.uniform(0, 2 * np.pi)
    u = (np.cos(theta) * x + np.sin(theta) * y) / n
    img = lo + 0.25 * (hi - lo) * (1.0 + u)
    for _ in range(spec.count):
        cy, cx = rng.uniform(0, n, size=2)
        rad = rng.uniform(0.04 * n, 0.16 * n)
        val = rng.uniform(0.0, 1.0)
        img[np.hypot(y - cy, x - cx) <= rad] = val
    return np.clip(img, 0.0, 1.0)


def phantom_corpus(n_images: int, size: int = 64, seed: int = 0, kinds=KINDS) -> list[np.ndarray]:
    """Deterministic mixed corpus cycling through ``kinds`` with randomised parameters."""
    rng = make_rng(seed)
    out = []
    for k in range(n_images):
        kind = kinds[k % len(kinds)]
        lo = float(rng.uniform(0.0, 0.4))
        hi = float(rng.uniform(0.6, 1.0))
        spec = PhantomSpec(
            kind=kind,
            size=size,
            seed=int(rng.integers(2**31)),
            count=int(rng.integers(3, 12)),
            levels=int(rng.integers(3, 9)),
            period=float(rng.uniform(6, 20)),
            low=lo,
            high=hi,
        )
        out.append(make_phantom(spec))
    return out
