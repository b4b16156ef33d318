"""Dual-encoder denoiser with masked gated fusion.

Layout (``levels=2``, ``base=16``)::

    noisy -> enc_mul: [conv,conv]@16 -> down -> [conv,conv]@32 -> down
    noisy -> enc_add:  (same shapes, separate weights)
    fusion sites: skip0 (16ch), skip1 (32ch), bottleneck input (32ch)
    bottleneck [conv,conv]@64 -> up+skip1 -> [conv,conv]@32 -> up+skip0 -> [conv,conv]@16 -> head

Every encoder block gets a PSF bias; the bottleneck and decoder blocks get
a noise-schedule bias. Both are added per channel between the two convs.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import diffcore as dc
from .degrade import NoiseSchedule, make_rng

# ---------------------------------------------------------------- masks


@dataclass(frozen=True)
class FusionMask:
    m1: int = 1
    m2: int = 1

    def __post_init__(self):
        if (self.m1, self.m2) not in ((1, 1), (1, 0), (0, 1)):
            raise ValueError(f"invalid fusion mask ({self.m1}, {self.m2}); one encoder must stay active")

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2], dtype=np.float64)


MASKS = (FusionMask(1, 1), FusionMask(1, 0), FusionMask(0, 1))
INFERENCE_MASK = MASKS[0]


def sample_mask(rng) -> FusionMask:
    return MASKS[int(make_rng(rng).integers(3))]


def mask_batch(mask, batch: int) -> np.ndarray:
    """(B, 2) array from a single mask, a list of masks, or an array."""
    if isinstance(mask, FusionMask):
        return np.tile(mask.as_array(), (batch, 1))
    if isinstance(mask, (list, tuple)) and mask and isinstance(mask[0], FusionMask):
        return np.stack([m.as_array() for m in mask])
    arr = np.asarray(mask, dtype=np.float64).reshape(batch, 2)
    for row in arr:
        FusionMask(int(row[0]), int(row[1]))
    return arr


# ---------------------------------------------------------------- config / params


@dataclass(frozen=True)
class ModelConfig:
    base_width: int = 16
    levels: int = 2
    embed_n: int = 64
    psf_m: int = 50
    sigma_x_min: float = 1.0
    sigma_x_max: float = 4.0
    sigma_y_min: float = 0.5
    sigma_y_max: float = 3.5
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    noise_encoder: bool = True
    gated_fusion: bool = True
    head_init: str = "he"
    # noise-level conditioning starts near a no-op so the t-dependent shifts
    # do not swamp the features early in training
    noise_cond_scale: float = 0.1

    def widths(self) -> list[int]:
        return [self.base_width * 2**k for k in range(self.levels)]

    @property
    def bottleneck_width(self) -> int:
        return self.base_width * 2**self.levels

    def to_flat(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "schedule"}
        d.update({f"schedule_{k}": v for k, v in asdict(self.schedule).items()})
        return d

    @classmethod
    def from_flat(cls, d: dict) -> "ModelConfig":
        sched = NoiseSchedule(**{k[len("schedule_"):]: v for k, v in d.items() if k.startswith("schedule_")})
        rest = {k: v for k, v in d.items() if not k.startswith("schedule_")}
        return cls(schedule=sched, **rest)


# config values stored in checkpoints as f64 scalars; string/bool fields encoded
_HEAD_INITS = ("he", "zero")


class PsfGrid:
    """Interpolated (sigma_x, sigma_y) grid, shape (2, m)."""

    def __init__(self, cfg: ModelConfig):
        self.psi = np.stack(
            [
                np.linspace(cfg.sigma_x_min, cfg.sigma_x_max, cfg.psf_m),
                np.linspace(cfg.sigma_y_min, cfg.sigma_y_max, cfg.psf_m),
            ]
        )

    @property
    def m(self) -> int:
        return self.psi.shape[1]

    def nearest(self, sigma_x, sigma_y) -> tuple[np.ndarray, np.ndarray]:
        """Nearest grid indices; out-of-range values clamp with a warning."""
        sx = np.atleast_1d(np.asarray(sigma_x, dtype=np.float64))
        sy = np.atleast_1d(np.asarray(sigma_y, dtype=np.float64))
        lo, hi = self.psi[:, 0], self.psi[:, -1]
        if np.any((sx < lo[0] - 1e-9) | (sx > hi[0] + 1e-9) | (sy < lo[1] - 1e-9) | (sy > hi[1] + 1e-9)):
            warnings.warn("PSF widths outside the grid bounds; clamping to the nearest grid entry", stacklevel=2)
        ix = np.abs(self.psi[0][None, :] - sx[:, None]).argmin(axis=1)
        iy = np.abs(self.psi[1][None, :] - sy[:, None]).argmin(axis=1)
        return ix, iy


class DemixParams:
    """All trainable tensors plus the config needed to rebuild the network."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, dc.DiffTensor]):
        self.cfg = cfg
        self.tensors = tensors
        self.grid = PsfGrid(cfg)

    def __getitem__(self, name) -> dc.DiffTensor:
        return self.tensors[name]

    def trainable(self):
        """Parameters the active configuration actually uses."""
        for name, t in self.tensors.items():
            if not self.cfg.noise_encoder and (name.startswith("noise.") or ".noise." in name):
                continue
            if not self.cfg.gated_fusion and name.startswith("fusion."):
                continue
            yield t

    def count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "DemixParams":
        return DemixParams(self.cfg, {k: dc.tensor(v.data.copy(), True, k) for k, v in self.tensors.items()})

    def save(self, path):
        table = {f"param.{k}": v.data for k, v in self.tensors.items()}
        for k, v in self.cfg.to_flat().items():
            if k == "head_init":
                v = _HEAD_INITS.index(v)
            table[f"config.{k}"] = np.array(float(v))
        dc.save_tensors(path, table)

    @classmethod
    def load(cls, path) -> "DemixParams":
        table = dc.load_tensors(path)
        flat = {}
        for name, arr in table.items():
            if not name.startswith("config."):
                continue
            key = name[len("config."):]
            v = float(arr)
            if key in ("noise_encoder", "gated_fusion"):
                v = bool(v)
            elif key == "head_init":
                v = _HEAD_INITS[int(v)]
            elif key in ("base_width", "levels", "embed_n", "psf_m", "schedule_T"):
                v = int(v)
            flat[key] = v
        cfg = ModelConfig.from_flat(flat)
        tensors = {
            name[len("param."):]: dc.tensor(arr, True, name[len("param."):])
            for name, arr in table.items()
            if name.startswith("param.")
        }
        expected = param_shapes(cfg)
        if {k: v.shape for k, v in tensors.items()} != expected:
            raise dc.CheckpointError(f"{path}: parameter table does not match its stored config")
        return cls(cfg, tensors)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    n4 = 4 * cfg.embed_n
    m = cfg.psf_m

    def conv(name, cin, cout, k=3):
        shapes[f"{name}.w"] = (cout, cin, k, k)
        shapes[f"{name}.b"] = (cout,)

    def lin(name, fin, fout):
        shapes[f"{name}.w"] = (fin, fout)
        shapes[f"{name}.b"] = (fout,)

    widths = cfg.widths()
    for enc in ("enc_mul", "enc_add"):
        cin = 1
        for k, c in enumerate(widths):
            conv(f"{enc}.l{k}.conv0", cin, c)
            lin(f"{enc}.l{k}.psf", 2, c)
            conv(f"{enc}.l{k}.conv1", c, c)
            cin = c
    for s, c in enumerate(widths + [widths[-1]]):
        conv(f"fusion.s{s}", 2 * c, c, k=1)
    cb = cfg.bottleneck_width
    conv("bott.conv0", widths[-1], cb)
    lin("bott.noise", n4, cb)
    conv("bott.conv1", cb, cb)
    cin = cb
    for k in reversed(range(cfg.levels)):
        c = widths[k]
        conv(f"dec.l{k}.conv0", cin + c, c)
        lin(f"dec.l{k}.noise", n4, c)
        conv(f"dec.l{k}.conv1", c, c)
        cin = c
    conv("head", widths[0], 1)
    for sched in ("alpha", "beta"):
        lin(f"noise.mlp_{sched}0", cfg.embed_n, n4)
        lin(f"noise.mlp_{sched}1", n4, n4)
        lin(f"noise.z_{sched}", n4, n4)
    lin("noise.fuse", n4, n4)
    lin("psfenc.mlp0", 2 * m, 2 * m)
    lin("psfenc.mlp1", 2 * m, m)
    return shapes


def _name_seed(seed: int, name: str) -> list[int]:
    return [seed, zlib.crc32(name.encode())]


def init_params(cfg: ModelConfig, seed: int = 0) -> DemixParams:
    """He-normal weights, zero biases; the output head and the noise-level
    projections are scaled down. Each tensor draws from its own stream keyed
    by (seed, name), so configurations sharing a name share its initial value."""
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        rng = np.random.default_rng(_name_seed(seed, name))
        if name.endswith(".b"):
            data = np.zeros(shape)
        elif len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        else:
            data = rng.standard_normal(shape) * np.sqrt(2.0 / shape[0])
        if name == "head.w" and cfg.head_init == "zero":
            data = np.zeros(shape)
        elif name == "head.w":
            data *= 0.1
        elif name.endswith(".noise.w"):
            data *= cfg.noise_cond_scale
        tensors[name] = dc.tensor(data, requires_grad=True, name=name)
    return DemixParams(cfg, tensors)


# ---------------------------------------------------------------- embeddings


def sinusoidal(positions: np.ndarray, dim: int, base: float = 10000.0) -> np.ndarray:
    """(N,) positions -> (N, dim) [sin | cos] embedding."""
    half = dim // 2
    freqs = base ** (-np.arange(half) / max(half, 1))
    ang = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def schedule_positions(values: np.ndarray, T: int) -> np.ndarray:
    """Scale a schedule so its positions span (0, T]."""
    values = np.asarray(values, dtype=np.float64)
    top = values.max()
    return values / top * T if top > 0 else values


def _mlp_gelu(x, params, prefix):
    h = dc.gelu(dc.dense(x, params[f"{prefix}0.w"], params[f"{prefix}0.b"]))
    return dc.dense(h, params[f"{prefix}1.w"], params[f"{prefix}1.b"])


def noise_encoder(alpha, beta, params: DemixParams, rows=None) -> dc.DiffTensor:
    """Fused noise embedding, (T, 4n) or (len(rows), 4n) when ``rows`` selects levels.

    Rows are independent, so selecting them before the MLP equals slicing the
    full table afterwards.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if alpha.shape != beta.shape or alpha.ndim != 1:
        raise dc.DimensionError(f"noise_encoder: schedules of shape {alpha.shape} and {beta.shape}")
    n = params.cfg.embed_n
    T = len(alpha)
    a_pos = sinusoidal(schedule_positions(alpha, T), n)
    b_pos = sinusoidal(schedule_positions(beta, T), n)
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
        a_pos, b_pos = a_pos[rows], b_pos[rows]
    a_emb = _mlp_gelu(dc.tensor(a_pos), params, "noise.mlp_alpha")
    b_emb = _mlp_gelu(dc.tensor(b_pos), params, "noise.mlp_beta")
    z_a = dc.relu(dc.dense(a_emb, params["noise.z_alpha.w"], params["noise.z_alpha.b"]))
    z_b = dc.relu(dc.dense(b_emb, params["noise.z_beta.w"], params["noise.z_beta.b"]))
    return dc.relu(dc.dense(dc.add(z_b, z_a), params["noise.fuse.w"], params["noise.fuse.b"]))


def psf_positions(grid: PsfGrid) -> np.ndarray:
    """(2, 1, 2m) sinusoidal embedding of each grid row."""
    m = grid.m
    freqs = 10000.0 ** (-np.arange(m) / m)
    ang = grid.psi * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)[:, None, :]


def psf_encoder(params: DemixParams) -> dc.DiffTensor:
    """PSF embedding Psi, shape (2, 1, m)."""
    pos = psf_positions(params.grid).reshape(2, -1)
    out = _mlp_gelu(dc.tensor(pos), params, "psfenc.mlp")
    return dc.reshape(out, (2, 1, params.grid.m))


def psf_condition_vectors(psi_embed: dc.DiffTensor, ix, iy) -> dc.DiffTensor:
    """(B, 2) conditioning rows: Psi[0, 0, ix_b] and Psi[1, 0, iy_b]."""
    m = psi_embed.shape[2]
    flat = dc.reshape(psi_embed, (2 * m, 1))
    idx = np.stack([np.asarray(ix), m + np.asarray(iy)], axis=1).reshape(-1)
    return dc.reshape(dc.take_rows(flat, idx), (len(ix), 2))


# ---------------------------------------------------------------- blocks


def condition_site(features: dc.DiffTensor, embed: dc.DiffTensor, w: dc.DiffTensor, b: dc.DiffTensor):
    """Project (B, E) embeddings to C channels and add as a per-channel bias."""
    return dc.add_channel_bias(features, dc.dense(embed, w, b))


def _conv(x, params, name, padding="reflect"):
    return dc.add_channel_bias(dc.conv2d(x, params[f"{name}.w"], padding), params[f"{name}.b"])


def gated_fusion(f1, f2, mask, w=None, b=None, gated=True) -> dc.DiffTensor:
    """f = m1 g f1 + m2 (1 - g) f2 with g = sigmoid(conv1x1([f1, f2])).

    With ``gated=False`` the gate is fixed at 0.5 (plain averaging).
    """
    if f1.shape != f2.shape:
        raise dc.DimensionError(f"gated_fusion: {f1.shape} vs {f2.shape}")
    B = f1.shape[0]
    m = mask_batch(mask, B)
    m1 = m[:, 0].reshape(B, 1, 1, 1)
    m2 = m[:, 1].reshape(B, 1, 1, 1)
    if not gated:
        return dc.add(dc.mul_const(f1, 0.5 * m1), dc.mul_const(f2, 0.5 * m2))
    g = dc.sigmoid(dc.add_channel_bias(dc.conv2d(dc.concat_channels(f1, f2), w, "zero"), b))
    # m2 f2 + g (m1 f1 - m2 f2): same value, but f1 == f2 under (1, 1) returns f1 bit for bit
    a = dc.mul_const(f1, m1)
    c = dc.mul_const(f2, m2)
    return dc.add(c, dc.mul(g, dc.sub(a, c)))


def _encoder(x, params, prefix, psf_vec, levels):
    skips = []
    h = x
    for k in range(levels):
        h = dc.relu(_conv(h, params, f"{prefix}.l{k}.conv0"))
        h = condition_site(h, psf_vec, params[f"{prefix}.l{k}.psf.w"], params[f"{prefix}.l{k}.psf.b"])
        h = dc.relu(_conv(h, params, f"{prefix}.l{k}.conv1"))
        skips.append(h)
        h = dc.downsample2x_avg(h)
    return skips, h


def _noise_bias(h, params, name, noise_vec):
    if noise_vec is None:
        return h
    return condition_site(h, noise_vec, params[f"{name}.noise.w"], params[f"{name}.noise.b"])


def demix_forward(i_t, t, sigma, mask, params: DemixParams) -> dc.DiffTensor:
    """Predict clean images from noisy ones.

    i_t: (B, 1, H, W) or (H, W) array; t: level per sample (1-based);
    sigma: (sigma_x, sigma_y) pair or (B, 2) array; mask: FusionMask, list or (B, 2).
    Any H, W is accepted: the input is reflect-padded to a multiple of
    2**levels and the output cropped back.
    """
    cfg = params.cfg
    x = np.asarray(i_t, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, None]
    if x.ndim != 4 or x.shape[1] != 1:
        raise dc.DimensionError(f"demix_forward expects (B, 1, H, W) input, got {x.shape}")
    B, _, H, W = x.shape
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (B,))
    if np.any((t < 1) | (t > cfg.schedule.T)):
        raise ValueError(f"levels must lie in 1..{cfg.schedule.T}")
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (B, 2))
    masks = mask_batch(mask, B)

    mult = 2**cfg.levels
    ph, pw = (-H) % mult, (-W) % mult
    if ph or pw:
        mode = "reflect" if ph < H and pw < W else "edge"
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    xin = dc.tensor(x)

    ix, iy = params.grid.nearest(sig[:, 0], sig[:, 1])
    psf_vec = psf_condition_vectors(psf_encoder(params), ix, iy)
    noise_vec = None
    if cfg.noise_encoder:
        noise_vec = noise_encoder(cfg.schedule.alphas(), cfg.schedule.betas(), params, rows=t - 1)

    skips_m, low_m = _encoder(xin, params, "enc_mul", psf_vec, cfg.levels)
    skips_a, low_a = _encoder(xin, params, "enc_add", psf_vec, cfg.levels)
    gated = cfg.gated_fusion

    def fuse(s, f1, f2):
        if not gated:
            return gated_fusion(f1, f2, masks, gated=False)
        return gated_fusion(f1, f2, masks, params[f"fusion.s{s}.w"], params[f"fusion.s{s}.b"])

    skips = [fuse(k, skips_m[k], skips_a[k]) for k in range(cfg.levels)]
    h = fuse(cfg.levels, low_m, low_a)

    h = dc.relu(_conv(h, params, "bott.conv0"))
    h = _noise_bias(h, params, "bott", noise_vec)
    h = dc.relu(_conv(h, params, "bott.conv1"))
    for k in reversed(range(cfg.levels)):
        h = dc.concat_channels(dc.upsample2x_nearest(h), skips[k])
        h = dc.relu(_conv(h, params, f"dec.l{k}.conv0"))
        h = _noise_bias(h, params, f"dec.l{k}", noise_vec)
        h = dc.relu(_conv(h, params, f"dec.l{k}.conv1"))
    out = _conv(h, params, "head")
    if ph or pw:
        out = dc.crop(out, H, W)
    return out


def predict(params: DemixParams, image, t, sigma_x, sigma_y, mask=INFERENCE_MASK) -> np.ndarray:
    """Single-image inference on a 2-D array; returns a 2-D array."""
    with dc.no_grad():
        out = demix_forward(np.asarray(image)[None, None], [t], [(sigma_x, sigma_y)], mask, params)
    return out.data[0, 0]
