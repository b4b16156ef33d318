"""Mixed speckle/additive noise with PSF blur: degradation model, process maths,
a dual-encoder denoiser on a small numpy autodiff engine, metrics and baselines."""

from .degrade import NoiseSchedule, DegradationSpec, degrade, schedule_at
from .psf import PsfSpec, build_psf, convolve
from .model import ModelConfig, DemixParams, FusionMask, demix_forward, init_params, predict

__version__ = "0.1.0"
