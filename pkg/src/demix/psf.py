"""Ultrasound point spread function: lateral Gaussian x axial Gabor.

Kernel layout is ``taps[j, i]``: rows run along the axial (depth) direction
``j``, columns along the lateral direction ``i``. Offsets are in samples and
range over ``-r..r`` with ``r = (size - 1) // 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import DimensionError

MODES = ("envelope", "literal-sine")


class DegenerateKernelError(ValueError):
    pass


@dataclass(frozen=True)
class PsfSpec:
    """PSF parameters. ``pitch`` is the axial sample spacing in metres.

    ``pitch=None`` means quarter-wavelength sampling, ``c / (4 f0)``, which
    puts the axial carrier at pi/2 radians per sample.
    """

    sigma_x: float = 2.0
    sigma_y: float = 1.5
    f0: float = 10e6
    c: float = 1540.0
    pitch: float | None = None
    size: int = 3
    mode: str = "envelope"

    def __post_init__(self):
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError(f"PSF size must be odd and >= 3, got {self.size}")
        if self.mode not in MODES:
            raise ValueError(f"unknown PSF mode {self.mode!r}; expected one of {MODES}")
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("PSF widths must be positive")
        if self.pitch is not None and self.pitch <= 0:
            raise ValueError("pitch must be positive")

    @property
    def sample_pitch(self) -> float:
        return self.c / (4.0 * self.f0) if self.pitch is None else self.pitch

    @property
    def phase_per_sample(self) -> float:
        return 2.0 * np.pi * self.f0 * self.sample_pitch / self.c

    def offsets(self) -> np.ndarray:
        r = (self.size - 1) // 2
        return np.arange(-r, r + 1, dtype=np.float64)


@dataclass(frozen=True)
class PsfKernel:
    taps: np.ndarray
    norm: float
    spec: PsfSpec | None = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    def to_text(self, fmt="%.12g") -> str:
        return "\n".join(" ".join(fmt % v for v in row) for row in self.taps) + "\n"


def lateral_profile(spec: PsfSpec) -> np.ndarray:
    i = spec.offsets()
    return np.exp(-(i**2) / (2.0 * spec.sigma_x**2))


def axial_profile(spec: PsfSpec) -> np.ndarray:
    """Gabor profile along depth.

    ``literal-sine`` uses the sine carrier as written; ``envelope`` swaps in the
    cosine (in-phase) carrier, giving an even low-pass profile.
    """
    j = spec.offsets()
    phase = spec.phase_per_sample * j
    carrier = np.sin(phase) if spec.mode == "literal-sine" else np.cos(phase)
    return carrier * np.exp(-(j**2) / (2.0 * spec.sigma_y**2))


def build_psf(spec: PsfSpec) -> PsfKernel:
    raw = np.outer(axial_profile(spec), lateral_profile(spec))
    norm = float(raw.sum())
    if np.all(np.abs(raw) < 1e-12):
        raise DegenerateKernelError(f"all PSF taps vanish for {spec}")
    if spec.mode == "envelope":
        if abs(norm) < 1e-12:
            raise DegenerateKernelError(f"envelope PSF has zero DC gain for {spec}")
        return PsfKernel(raw / norm, norm, spec)
    return PsfKernel(raw, norm, spec)


def identity_kernel() -> PsfKernel:
    return PsfKernel(np.ones((1, 1)), 1.0)


def _as_taps(kernel) -> np.ndarray:
    return kernel.taps if isinstance(kernel, PsfKernel) else np.asarray(kernel, dtype=np.float64)


def convolve(image: np.ndarray, kernel, padding: str = "reflect") -> np.ndarray:
    """True 2-D convolution (kernel flipped), same-size output.

    ``padding`` is ``reflect`` (mirror without repeating the edge) or ``zero``.
    """
    image = np.asarray(image, dtype=np.float64)
    taps = _as_taps(kernel)
    if image.ndim != 2:
        raise ValueError(f"convolve expects a 2-D image, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("convolve: image contains non-finite values")
    kh, kw = taps.shape
    H, W = image.shape
    if kh > H or kw > W:
        raise DimensionError(f"kernel {kh}x{kw} larger than image {H}x{W}")
    rh, rw = kh // 2, kw // 2
    mode = "reflect" if padding == "reflect" else "constant"
    xp = np.pad(image, ((rh, rh), (rw, rw)), mode=mode)
    flipped = taps[::-1, ::-1]
    out = np.zeros_like(image)
    for a in range(kh):
        for b in range(kw):
            if flipped[a, b] != 0.0:
                out += flipped[a, b] * xp[a : a + H, b : b + W]
    return out


def source_indices(n: int, r: int, padding: str = "reflect") -> np.ndarray:
    """Source index of each padded position along one axis (-1 for zero pad)."""
    p = np.arange(-r, n + r)
    if padding == "reflect":
        p = np.abs(p)
        p = np.where(p > n - 1, 2 * (n - 1) - p, p)
        return p
    return np.where((p >= 0) & (p < n), p, -1)
