"""Noise schedules and the mixed speckle + additive + PSF degradation sampler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .psf import PsfKernel, PsfSpec, build_psf, convolve, source_indices, _as_taps


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator so a (seed, stream) pair is reproducible anywhere."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class NoiseSchedule:
    T: int = 200
    alpha_min: float = 0.005
    alpha_max: float = 1.5
    beta_min: float = 0.005
    beta_max: float = 0.5

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("schedule needs T >= 2")

    @property
    def delta(self) -> float:
        return (self.alpha_max - self.alpha_min) / (self.T - 1)

    @property
    def gamma(self) -> float:
        return (self.beta_max - self.beta_min) / (self.T - 1)

    def alphas(self) -> np.ndarray:
        return self.alpha_min + np.arange(self.T) * self.delta

    def betas(self) -> np.ndarray:
        return self.beta_min + np.arange(self.T) * self.gamma

    def level_of(self, alpha_t: float) -> int:
        """Nearest level index for a speckle std."""
        t = int(round((alpha_t - self.alpha_min) / self.delta)) + 1
        return min(max(t, 1), self.T)


def schedule_at(s: NoiseSchedule, t: int) -> tuple[float, float]:
    if not 1 <= t <= s.T:
        raise ValueError(f"level t={t} outside 1..{s.T}")
    return s.alpha_min + (t - 1) * s.delta, s.beta_min + (t - 1) * s.gamma


@dataclass(frozen=True)
class DegradationSpec:
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    psf: PsfSpec = field(default_factory=PsfSpec)
    t: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.t <= self.schedule.T:
            raise ValueError(f"level t={self.t} outside 1..{self.schedule.T}")


def degrade_values(image, kernel, alpha_t: float, beta_t: float, rng) -> np.ndarray:
    """I0 (1 + alpha_t eps_m) * p + beta_t eps_a, unclipped."""
    rng = make_rng(rng)
    image = np.asarray(image, dtype=np.float64)
    eps_m = rng.standard_normal(image.shape)
    eps_a = rng.standard_normal(image.shape)
    return convolve(image * (1.0 + alpha_t * eps_m), kernel) + beta_t * eps_a


def degrade(image, spec: DegradationSpec) -> np.ndarray:
    alpha_t, beta_t = schedule_at(spec.schedule, spec.t)
    return degrade_values(image, build_psf(spec.psf), alpha_t, beta_t, spec.seed)


def k_field(image, kernel, padding: str = "reflect") -> np.ndarray:
    """Per-pixel std of ``(I0 * eps) conv p`` for unit i.i.d. Gaussian ``eps``.

    Away from the border this is ``sqrt(p^2 conv I0^2)``. At the border, taps
    whose padded positions reflect onto the same source pixel add coherently;
    that is accounted for exactly, so the field matches the sampler everywhere.
    """
    image = np.asarray(image, dtype=np.float64)
    taps = _as_taps(kernel)[::-1, ::-1]  # convolve() correlates with the flipped taps
    kh, kw = taps.shape
    H, W = image.shape
    rh, rw = kh // 2, kw // 2
    src_r = source_indices(H, rh, padding)
    src_c = source_indices(W, rw, padding)
    rows = np.stack([src_r[a : a + H] for a in range(kh)])  # (kh, H)
    cols = np.stack([src_c[b : b + W] for b in range(kw)])  # (kw, W)
    sq = image**2
    var = np.zeros_like(image)
    nz = [(a, b) for a in range(kh) for b in range(kw) if taps[a, b] != 0.0]
    for a, b in nz:
        ra, cb = rows[a], cols[b]
        valid = (ra >= 0)[:, None] & (cb >= 0)[None, :]
        src_sq = np.where(valid, sq[np.ix_(np.maximum(ra, 0), np.maximum(cb, 0))], 0.0)
        for a2, b2 in nz:
            same = (rows[a2] == ra)[:, None] & (cols[b2] == cb)[None, :]
            var += taps[a, b] * taps[a2, b2] * same * src_sq
    return np.sqrt(np.maximum(var, 0.0))


def increment_std(image, s: NoiseSchedule, kernel) -> np.ndarray:
    """sqrt(delta^2 K^2 + gamma^2): std of one forward step."""
    K = k_field(image, kernel)
    return np.sqrt(s.delta**2 * K**2 + s.gamma**2)


def forward_sample(image, s: NoiseSchedule, kernel, t: int, seed, draws: int | None = None) -> np.ndarray:
    """Gaussian-approximation marginal: I0 + t sqrt(delta^2 K^2 + gamma^2) eps.

    With ``draws`` set, returns a (draws, H, W) stack of independent samples.
    """
    if not 1 <= t <= s.T:
        raise ValueError(f"level t={t} outside 1..{s.T}")
    image = np.asarray(image, dtype=np.float64)
    shape = image.shape if draws is None else (draws,) + image.shape
    eps = make_rng(seed).standard_normal(shape)
    return image + t * increment_std(image, s, kernel) * eps


def forward_chain(image, s: NoiseSchedule, kernel, t: int, seed) -> np.ndarray:
    """Reach level ``t`` by ``t`` single-step increments.

    The increments reuse one noise draw, as in the derivation of the marginal
    from the per-step recursion (the same eps_m, eps_a appear at every step),
    so the result has the marginal's variance ``t^2 (delta^2 K^2 + gamma^2)``.
    """
    image = np.asarray(image, dtype=np.float64)
    step = increment_std(image, s, kernel) * make_rng(seed).standard_normal(image.shape)
    x = image.copy()
    for _ in range(t):
        x = x + step
    return x


AUG_ROTATIONS = (0, 90, 180, 270)
AUG_MEANS = (0.025, 0.05)
AUG_VARIANCES = (0.0, 0.001)


@dataclass(frozen=True)
class AugmentChoice:
    rotation: int
    mu: float
    var: float


def augment_choice(seed) -> AugmentChoice:
    rng = make_rng(seed)
    return AugmentChoice(
        int(rng.choice(AUG_ROTATIONS)),
        float(rng.choice(AUG_MEANS)),
        float(rng.choice(AUG_VARIANCES)),
    )


def augment(image, seed=0, choice: AugmentChoice | None = None) -> np.ndarray:
    """Rotate by a multiple of 90 degrees, then add Gaussian noise N(mu, var).

    The mean and variance are each drawn from the listed values; pass ``choice``
    to pin them.
    """
    rng = make_rng(seed)
    if choice is None:
        choice = augment_choice(rng)
    out = np.rot90(np.asarray(image, dtype=np.float64), k=choice.rotation // 90)
    noise = rng.standard_normal(out.shape) * np.sqrt(choice.var) if choice.var > 0 else 0.0
    return out + choice.mu + noise
