"""Closed-form process maths: reverse posterior and deterministic restoration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .degrade import NoiseSchedule, increment_std, make_rng
from .model import INFERENCE_MASK, DemixParams, predict


@dataclass(frozen=True)
class PosteriorStats:
    """Mean of q(I_{t-1} | I_t, I_0) and the scalar multiplying (delta^2 K^2 + gamma^2)."""

    mean: np.ndarray
    var_scale: float


def posterior_weights(t: int) -> tuple[float, float]:
    """Weights on (I_t, I_0) of the posterior mean; they sum to one."""
    if t < 1:
        raise ValueError(f"level t={t} must be >= 1")
    s = float(t - 1) ** 2
    return s / (s + 1.0), 1.0 / (s + 1.0)


def posterior(i_t, i_0, t: int) -> PosteriorStats:
    w_t, w_0 = posterior_weights(t)
    mean = w_t * np.asarray(i_t, dtype=np.float64) + w_0 * np.asarray(i_0, dtype=np.float64)
    return PosteriorStats(mean, w_t)


def posterior_variance(i_0, s: NoiseSchedule, kernel, t: int) -> np.ndarray:
    """Per-pixel posterior variance field var_scale * (delta^2 K^2 + gamma^2)."""
    return posterior(i_0, i_0, t).var_scale * increment_std(i_0, s, kernel) ** 2


@dataclass
class BayesReport:
    t: int
    expected_slope: float
    slopes: np.ndarray
    max_rel_error: float
    n_draws: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 0.03


def bayes_consistency_check(i_0, s: NoiseSchedule, kernel, t: int, n_draws: int = 100_000, seed=0) -> BayesReport:
    """Monte-Carlo check of the posterior mean.

    Draws I_{t-1} from its marginal (level t-1 around I_0) and I_t from one
    independent forward step, then regresses I_{t-1} - I_0 on I_t - I_0 per
    pixel. The fitted slope must match the posterior weight on I_t.
    """
    i_0 = np.asarray(i_0, dtype=np.float64)
    expected, _ = posterior_weights(t)
    step = increment_std(i_0, s, kernel)
    if t == 1 or np.all(step == 0.0):
        # I_{t-1} = I_0 exactly (t = 1) or no noise at all: nothing to regress
        return BayesReport(t, expected, np.full(i_0.shape, expected), 0.0, n_draws)
    rng = make_rng(seed)
    shape = (n_draws,) + i_0.shape
    prev = (t - 1) * step * rng.standard_normal(shape)
    cur = prev + step * rng.standard_normal(shape)
    cov = np.mean(prev * cur, axis=0) - prev.mean(axis=0) * cur.mean(axis=0)
    var = cur.var(axis=0)
    slopes = cov / var
    err = float(np.max(np.abs(slopes - expected) / expected))
    return BayesReport(t, expected, slopes, err, n_draws)


def restore_single_step(i_t, model: DemixParams, t: int, sigma_x: float, sigma_y: float, mask=INFERENCE_MASK):
    """One network evaluation: the direct clean-image prediction."""
    return predict(model, i_t, t, sigma_x, sigma_y, mask)


def restore_iterative(i_t, model, t_start: int, sigma_x: float = 2.0, sigma_y: float = 1.5, mask=INFERENCE_MASK):
    """Deterministic reverse chain from ``t_start`` down to 1, no injected noise.

    ``model`` is either DemixParams or any callable ``(x, t) -> clean estimate``.
    Each step applies x <- ((t-1)^2 x + I_theta(x, t)) / ((t-1)^2 + 1); the last
    step (t = 1) returns the network output itself.
    """
    if t_start < 1:
        raise ValueError("t_start must be >= 1")
    if isinstance(model, DemixParams):

        def estimate(x, t):
            return predict(model, x, t, sigma_x, sigma_y, mask)

    else:
        estimate = model
    x = np.asarray(i_t, dtype=np.float64)
    for t in range(t_start, 0, -1):
        w_t, w_0 = posterior_weights(t)
        x = w_t * x + w_0 * estimate(x, t)
    return x
