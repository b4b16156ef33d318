"""Classical reference denoisers: non-local means and Gaussian smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class NlmConfig:
    patch_radius: int = 3
    search_radius: int = 10
    h: float = 0.1
    sigma: float = 0.0  # noise std subtracted from patch distances; None -> estimate

    def __post_init__(self):
        if self.patch_radius < 1 or self.search_radius < 0:
            raise ValueError("patch radius must be >= 1 and search radius >= 0")
        if self.h <= 0:
            raise ValueError("filtering strength h must be positive")


def estimate_noise_sigma(image) -> float:
    """Immerkaer's fast Laplacian-based estimate of additive Gaussian noise std."""
    x = np.asarray(image, dtype=np.float64)
    H, W = x.shape
    lap = (
        x[:-2, :-2] - 2 * x[:-2, 1:-1] + x[:-2, 2:]
        - 2 * x[1:-1, :-2] + 4 * x[1:-1, 1:-1] - 2 * x[1:-1, 2:]
        + x[2:, :-2] - 2 * x[2:, 1:-1] + x[2:, 2:]
    )
    return float(np.sqrt(np.pi / 2.0) * np.abs(lap).sum() / (6.0 * (W - 2) * (H - 2)))


def _box_mean_valid(x: np.ndarray, r: int) -> np.ndarray:
    k = 2 * r + 1
    c = np.cumsum(np.cumsum(np.pad(x, ((1, 0), (1, 0))), axis=0), axis=1)
    s = c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]
    return s / (k * k)


def nlmeans(image, cfg: NlmConfig = NlmConfig()) -> np.ndarray:
    """Pixelwise non-local means with reflect-padded borders.

    Weight of candidate q for pixel p: exp(-max(d^2 - 2 sigma^2, 0) / h^2), where
    d^2 is the mean squared difference of the (2P+1)^2 patches around p and q.
    """
    x = np.asarray(image, dtype=np.float64)
    if cfg.search_radius == 0:
        return x.copy()
    P, S = cfg.patch_radius, cfg.search_radius
    H, W = x.shape
    sigma = estimate_noise_sigma(x) if cfg.sigma is None else cfg.sigma
    R = P + S
    xp = np.pad(x, R, mode="reflect") if R < min(H, W) else np.pad(x, R, mode="symmetric")
    # patch support of the whole image: rows/cols [-P, H+P)
    base = xp[S : S + H + 2 * P, S : S + W + 2 * P]
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    h2 = cfg.h * cfg.h
    floor = 2.0 * sigma * sigma
    for dy in range(-S, S + 1):
        for dx in range(-S, S + 1):
            shifted = xp[S + dy : S + dy + H + 2 * P, S + dx : S + dx + W + 2 * P]
            d2 = _box_mean_valid((base - shifted) ** 2, P)
            w = np.exp(-np.maximum(d2 - floor, 0.0) / h2)
            num += w * shifted[P : P + H, P : P + W]
            den += w
    return num / den


def gaussian_kernel_1d(sigma: float, truncate: float = 4.0) -> np.ndarray:
    r = max(int(np.ceil(truncate * sigma)), 1)
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_axis(x: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    r = len(g) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    mode = "reflect" if r < x.shape[axis] else "symmetric"
    xp = np.pad(x, pad, mode=mode)
    return sliding_window_view(xp, len(g), axis=axis) @ g[::-1]


def gaussian_filter(image, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, reflect borders, unit-sum kernel; sigma=0 is identity."""
    x = np.asarray(image, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return x.copy()
    g = gaussian_kernel_1d(sigma)
    return _filter_axis(_filter_axis(x, g, 0), g, 1)
