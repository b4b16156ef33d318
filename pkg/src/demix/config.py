"""Run configuration, stored as a flat ``key = value`` text file."""

from __future__ import annotations

import math
import typing
from dataclasses import dataclass, fields, replace

from .degrade import NoiseSchedule
from .model import ModelConfig
from .psf import PsfSpec


@dataclass(frozen=True)
class RunConfig:
    # noise schedule
    T: int = 200
    alpha_min: float = 0.005
    alpha_max: float = 1.5
    beta_min: float = 0.005
    beta_max: float = 0.5
    # PSF
    sigma_x_min: float = 1.0
    sigma_x_max: float = 4.0
    sigma_y_min: float = 0.5
    sigma_y_max: float = 3.5
    psf_m: int = 50
    psf_size: int = 3
    psf_mode: str = "envelope"
    f0: float = 10000000.0
    c: float = 1540.0
    # optimisation
    patch_size: int = 64
    batch_size: int = 128
    epochs: int = 40
    lr: float = 0.005
    lr_decay: float = 0.1
    lr_step: int = 0  # epochs per decay; 0 -> ceil(epochs / 3)
    momentum: float = 0.0
    optimizer: str = "sgd"  # sgd | adam
    patches_per_image: int = 1
    augment: bool = True
    val_fraction: float = 0.3
    partition: int = 0
    # network
    base_width: int = 16
    levels: int = 2
    noise_cond_scale: float = 0.1  # init scale of the noise-level projections
    # ablations
    noise_encoder: bool = True
    gated_fusion: bool = True
    msssim: bool = True
    msssim_scales: int = 3
    # data / io
    seed: int = 0
    data: str = ""
    phantoms: int = 64
    phantom_size: int = 96
    out: str = "demix.ckpt"
    log: str = "train_log.csv"

    @property
    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.T, self.alpha_min, self.alpha_max, self.beta_min, self.beta_max)

    def decay_every(self) -> int:
        return self.lr_step if self.lr_step > 0 else max(1, math.ceil(self.epochs / 3))

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        return self.lr * self.lr_decay ** (epoch // self.decay_every())

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_width=self.base_width,
            levels=self.levels,
            embed_n=self.patch_size,
            psf_m=self.psf_m,
            sigma_x_min=self.sigma_x_min,
            sigma_x_max=self.sigma_x_max,
            sigma_y_min=self.sigma_y_min,
            sigma_y_max=self.sigma_y_max,
            schedule=self.schedule,
            noise_encoder=self.noise_encoder,
            gated_fusion=self.gated_fusion,
            noise_cond_scale=self.noise_cond_scale,
        )

    def psf_spec(self, sigma_x: float, sigma_y: float) -> PsfSpec:
        return PsfSpec(sigma_x=sigma_x, sigma_y=sigma_y, f0=self.f0, c=self.c, size=self.psf_size, mode=self.psf_mode)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls().with_overrides(parse_pairs(text))

    def with_overrides(self, pairs: dict[str, str]) -> "RunConfig":
        hints = typing.get_type_hints(RunConfig)
        known = {f.name for f in fields(self)}
        values = {}
        for key, raw in pairs.items():
            key = key.replace("-", "_")
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            values[key] = _parse(hints[key], raw)
        return replace(self, **values)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(typ, raw):
    raw = raw.strip() if isinstance(raw, str) else raw
    if not isinstance(raw, str):
        return typ(raw)
    if typ is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return typ(raw)


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_text(fh.read())
