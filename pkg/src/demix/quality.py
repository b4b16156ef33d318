"""Losses (L1, 1 - MS-SSIM) and evaluation metrics (PSNR, SSIM, MS-SSIM).

Metric functions work on plain 2-D arrays with dynamic range 1. The ``*_tensor``
variants run through :mod:`demix.diffcore` so the training objective is
differentiable end to end; both share the same window and constants.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import diffcore as dc

WINDOW = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
# clamp for the tape version: pow() needs a positive base
_TAPE_FLOOR = 1e-8


def gaussian_window_1d(size=WINDOW, sigma=WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_window(size=WINDOW, sigma=WINDOW_SIGMA) -> np.ndarray:
    g = gaussian_window_1d(size, sigma)
    return np.outer(g, g)


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    x = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(x, k, axis=1) @ g


def _ssim_maps(a, b, size, sigma, k1, k2, data_range=1.0):
    g = gaussian_window_1d(size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a**2
    sbb = _filter_valid(b * b, g) - mu_b**2
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return lum * cs, cs


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"expected two 2-D images of equal shape, got {a.shape} and {b.shape}")
    return a, b


def ssim(a, b, window=WINDOW, sigma=WINDOW_SIGMA, k1=K1, k2=K2) -> float:
    """Gaussian-window SSIM averaged over valid window positions."""
    a, b = _check_pair(a, b)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    return float(_ssim_maps(a, b, window, sigma, k1, k2)[0].mean())


def usable_scales(shape, scales, window=WINDOW) -> int:
    n = scales
    while n > 1 and min(shape) < window * 2 ** (n - 1):
        n -= 1
    if n != scales:
        warnings.warn(f"image {tuple(shape)} too small for {scales} MS-SSIM scales, using {n}", stacklevel=3)
    return n


def ms_ssim_weights(scales: int) -> np.ndarray:
    w = np.asarray(MS_SSIM_WEIGHTS[:scales])
    return w / w.sum()


def _half(x):
    H, W = x.shape
    x = x[: H - H % 2, : W - W % 2]
    return x.reshape(x.shape[0] // 2, 2, x.shape[1] // 2, 2).mean(axis=(1, 3))


def ms_ssim(a, b, scales=3, window=WINDOW, sigma=WINDOW_SIGMA, k1=K1, k2=K2) -> float:
    """Multi-scale SSIM with the first ``scales`` canonical weights renormalised.

    Contrast-structure terms from every scale but the coarsest, full SSIM at
    the coarsest, 2x2 average pooling between scales. Negative terms are
    clamped to zero before exponentiation.
    """
    a, b = _check_pair(a, b)
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    scales = usable_scales(a.shape, scales, window)
    w = ms_ssim_weights(scales)
    val = 1.0
    for j in range(scales):
        s_map, cs_map = _ssim_maps(a, b, window, sigma, k1, k2)
        term = s_map.mean() if j == scales - 1 else cs_map.mean()
        val *= max(term, 0.0) ** w[j]
        if j < scales - 1:
            a, b = _half(a), _half(b)
    return float(val)


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, cap=PSNR_CAP) -> float:
    """10 log10(1 / MSE) in dB, capped at ``cap`` (identical images hit the cap)."""
    err = mse(a, b)
    if err == 0.0:
        return cap
    return float(min(10.0 * np.log10(1.0 / err), cap))


# ---------------------------------------------------------------- tape losses


def loss_l1(pred: dc.DiffTensor, target) -> dc.DiffTensor:
    """Mean absolute error."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise dc.DimensionError(f"loss_l1: prediction {pred.shape} vs target {target.shape}")
    return dc.mean(dc.absolute(dc.add_const(pred, -target)))


def _blur(x: dc.DiffTensor, kern: dc.DiffTensor) -> dc.DiffTensor:
    return dc.conv2d(x, kern, padding="valid")


def _blur_np(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    out = [_filter_valid(x[i, 0], g) for i in range(B)]
    return np.stack(out)[:, None]


def _ssim_terms_tensor(x: dc.DiffTensor, y: np.ndarray, window, sigma, k1, k2):
    """Per-sample mean SSIM and mean contrast-structure, shape (B,) each."""
    g = gaussian_window_1d(window, sigma)
    kern = dc.tensor(np.outer(g, g)[None, None])
    c1, c2 = k1**2, k2**2
    mu_y = _blur_np(y, g)
    syy = _blur_np(y * y, g) - mu_y**2
    mu_x = _blur(x, kern)
    sxx = dc.sub(_blur(dc.square(x), kern), dc.square(mu_x))
    sxy = dc.sub(_blur(dc.mul_const(x, y), kern), dc.mul_const(mu_x, mu_y))
    cs_num = dc.add_const(dc.scale(sxy, 2.0), c2)
    cs_den = dc.add_const(sxx, syy + c2)
    cs = dc.div(cs_num, cs_den)
    l_num = dc.add_const(dc.mul_const(mu_x, 2.0 * mu_y), c1)
    l_den = dc.add_const(dc.square(mu_x), mu_y**2 + c1)
    lum = dc.div(l_num, l_den)
    return dc.mean_per_sample(dc.mul(lum, cs)), dc.mean_per_sample(cs)


def _half_tensor(x: dc.DiffTensor) -> dc.DiffTensor:
    H, W = x.shape[2:]
    if H % 2 or W % 2:
        x = dc.crop(x, H - H % 2, W - W % 2)
    return dc.downsample2x_avg(x)


def ms_ssim_tensor(pred: dc.DiffTensor, target, scales=3, window=WINDOW, sigma=WINDOW_SIGMA, k1=K1, k2=K2):
    """Batch-mean MS-SSIM of (B, 1, H, W) predictions against fixed targets."""
    y = np.asarray(target, dtype=np.float64)
    if pred.shape != y.shape:
        raise dc.DimensionError(f"ms_ssim: prediction {pred.shape} vs target {y.shape}")
    if min(y.shape[2:]) < window:
        raise ValueError(f"image {y.shape[2:]} smaller than the {window}x{window} SSIM window")
    scales = usable_scales(y.shape[2:], scales, window)
    w = ms_ssim_weights(scales)
    x = pred
    factors = []
    for j in range(scales):
        s_val, cs_val = _ssim_terms_tensor(x, y, window, sigma, k1, k2)
        term = s_val if j == scales - 1 else cs_val
        factors.append(dc.power(dc.clamp_min(term, _TAPE_FLOOR), float(w[j])))
        if j < scales - 1:
            x = _half_tensor(x)
            Hh, Wh = y.shape[2] // 2, y.shape[3] // 2
            y = y[:, :, : 2 * Hh, : 2 * Wh].reshape(y.shape[0], 1, Hh, 2, Wh, 2).mean(axis=(3, 5))
    return dc.mean(dc.product(factors))


def loss_total(pred: dc.DiffTensor, target, use_msssim=True, scales=3, window=WINDOW, sigma=WINDOW_SIGMA):
    """L1 + (1 - MS-SSIM); with ``use_msssim=False`` just the L1 term."""
    l1 = loss_l1(pred, target)
    if not use_msssim:
        return l1
    ms = ms_ssim_tensor(pred, target, scales=scales, window=window, sigma=sigma)
    return dc.add(l1, dc.add_const(dc.scale(ms, -1.0), 1.0))


# ---------------------------------------------------------------- reports


@dataclass
class MetricRow:
    image_id: str
    t: int
    alpha_t: float
    beta_t: float
    sigma_x: float
    sigma_y: float
    method: str
    psnr: float
    ssim: float


@dataclass
class MetricReport:
    rows: list

    def add(self, row: MetricRow):
        self.rows.append(row)

    def mean(self, field: str, **match) -> float:
        vals = [getattr(r, field) for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]
        return float(np.mean(vals)) if vals else float("nan")

    def write_csv(self, path):
        names = list(MetricRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=names)
            writer.writeheader()
            for r in self.rows:
                writer.writerow(asdict(r))
