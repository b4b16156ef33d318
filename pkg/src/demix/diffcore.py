"""Minimal reverse-mode differentiable array engine.

Every trainable block and loss in the package is built from the primitives
here. Values are float64 numpy arrays; each op records its parents and a
closure that maps the output gradient to parent gradients. ``backward``
topologically sorts the recorded graph (the tape) and replays it once.

Convolution convention: ``conv2d`` is a cross-correlation (no kernel flip),
like every deep-learning framework. True convolution lives in :mod:`demix.psf`.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

PAD_MODES = ("reflect", "zero", "valid")

_ids = itertools.count()
_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph (inference)."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class DimensionError(ValueError):
    pass


class GraphStateError(RuntimeError):
    pass


class DiffTensor:
    """N-D float64 value with an optional gradient and a link into the graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)
        self.name = name
        self._parents: tuple[DiffTensor, ...] = _parents
        self._backward: Callable | None = _backward
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, DiffTensor):
            return add(self, other)
        return add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, DiffTensor):
            return sub(self, other)
        return add_const(self, -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, DiffTensor):
            return mul(self, other)
        return mul_const(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, DiffTensor):
            return div(self, other)
        return mul_const(self, 1.0 / np.asarray(other, dtype=np.float64))


def tensor(data, requires_grad=False, name=None) -> DiffTensor:
    return DiffTensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _make(data, parents: Sequence[DiffTensor], backward) -> DiffTensor:
    """Wrap an op result; skip recording when no parent needs a gradient."""
    if _recording and any(p.requires_grad for p in parents):
        return DiffTensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return DiffTensor(data)


def _check_same(a: DiffTensor, b: DiffTensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- backward


def topo_order(root: DiffTensor) -> list[DiffTensor]:
    """Parents-before-children order of every recorded node reachable from ``root``."""
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(loss: DiffTensor):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate (``sgd_step`` clears them). The graph is released
    afterwards, so a second call on the same loss raises ``GraphStateError``.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphStateError("backward already ran on this graph; rebuild the forward pass")
    loss._consumed = True
    if not loss.requires_grad:
        return
    tape = topo_order(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(node.node_id, None)
        if node.is_leaf:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if p.node_id in grads:
                    grads[p.node_id] = grads[p.node_id] + pg
                else:
                    grads[p.node_id] = pg
        node._parents = ()
        node._backward = None


def sgd_step(params: Iterable[DiffTensor], lr: float, momentum: float = 0.0, velocity: dict | None = None):
    """In-place ``p <- p - lr * grad``; clears grads afterwards.

    With ``momentum > 0`` a heavy-ball buffer is kept in ``velocity`` (keyed by
    parameter name or node id). Raises ``GraphStateError`` if any parameter has
    no gradient.
    """
    params = list(params)
    missing = [p.name or p.node_id for p in params if p.grad is None]
    if missing:
        raise GraphStateError(f"sgd_step: no gradient for {missing[:5]}")
    for p in params:
        step = p.grad
        if momentum:
            key = p.name or p.node_id
            v = velocity.get(key)
            v = step.copy() if v is None else momentum * v + step
            velocity[key] = v
            step = v
        p.data -= lr * step
        p.grad = None


def adam_step(params: Iterable[DiffTensor], lr: float, state: dict, betas=(0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected Adam update; ``state`` holds moments and the step count."""
    params = list(params)
    missing = [p.name or p.node_id for p in params if p.grad is None]
    if missing:
        raise GraphStateError(f"adam_step: no gradient for {missing[:5]}")
    b1, b2 = betas
    n = state["step"] = state.get("step", 0) + 1
    for p in params:
        key = p.name or p.node_id
        m, v = state.get(key, (0.0, 0.0))
        m = b1 * m + (1 - b1) * p.grad
        v = b2 * v + (1 - b2) * p.grad**2
        state[key] = (m, v)
        p.data -= lr * (m / (1 - b1**n)) / (np.sqrt(v / (1 - b2**n)) + eps)
        p.grad = None


# ---------------------------------------------------------------- elementwise


def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    return _make(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def scale(x: DiffTensor, c: float) -> DiffTensor:
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def add_const(x: DiffTensor, c) -> DiffTensor:
    """x + c for a constant broadcastable to x's shape."""
    c = np.asarray(c, dtype=np.float64)
    out = x.data + c
    if out.shape != x.shape:
        raise DimensionError(f"add_const: constant {c.shape} would broadcast {x.shape}")
    return _make(out, (x,), lambda g: (g,))


def mul_const(x: DiffTensor, c) -> DiffTensor:
    """x * c for a constant broadcastable to x's shape (masks, fixed weights)."""
    c = np.asarray(c, dtype=np.float64)
    out = x.data * c
    if out.shape != x.shape:
        raise DimensionError(f"mul_const: constant {c.shape} would broadcast {x.shape}")
    return _make(out, (x,), lambda g: (g * c,))


def square(x: DiffTensor) -> DiffTensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def absolute(x: DiffTensor) -> DiffTensor:
    xd = x.data
    return _make(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def power(x: DiffTensor, p: float) -> DiffTensor:
    """x ** p for x > 0 (used by multi-scale SSIM exponents)."""
    xd = x.data
    out = xd**p
    return _make(out, (x,), lambda g: (g * p * out / xd,))


def clamp_min(x: DiffTensor, lo: float) -> DiffTensor:
    xd = x.data
    keep = xd > lo
    return _make(np.where(keep, xd, lo), (x,), lambda g: (g * keep,))


def relu(x: DiffTensor) -> DiffTensor:
    xd = x.data
    return _make(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))


def sigmoid(x: DiffTensor) -> DiffTensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


GELU_COEF = 0.044715
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def gelu_value(x):
    """Tanh-approximated GELU on plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(_SQRT_2_OVER_PI * (x + GELU_COEF * x**3)))


def gelu(x: DiffTensor) -> DiffTensor:
    xd = x.data
    u = _SQRT_2_OVER_PI * (xd + GELU_COEF * xd**3)
    th = np.tanh(u)
    out = 0.5 * xd * (1.0 + th)

    def bw(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * xd * xd)
        return (g * (0.5 * (1.0 + th) + 0.5 * xd * (1.0 - th * th) * du),)

    return _make(out, (x,), bw)


# ---------------------------------------------------------------- reductions


def sum_all(x: DiffTensor) -> DiffTensor:
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean(x: DiffTensor) -> DiffTensor:
    shape, n = x.shape, x.data.size
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / n),))


def l1_norm(x: DiffTensor) -> DiffTensor:
    """Sum of absolute values."""
    return sum_all(absolute(x))


def mean_per_sample(x: DiffTensor) -> DiffTensor:
    """Mean over every axis but the first; returns shape (B,)."""
    shape = x.shape
    n = int(np.prod(shape[1:]))
    out = x.data.reshape(shape[0], -1).mean(axis=1)

    def bw(g):
        return (np.broadcast_to((g / n).reshape((shape[0],) + (1,) * (len(shape) - 1)), shape).copy(),)

    return _make(out, (x,), bw)


def product(xs: Sequence[DiffTensor]) -> DiffTensor:
    out = xs[0]
    for x in xs[1:]:
        out = mul(out, x)
    return out


# ---------------------------------------------------------------- shape ops


def reshape(x: DiffTensor, shape) -> DiffTensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_channels(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat_channels: incompatible {a.shape} and {b.shape}")
    ca = a.shape[1]
    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), lambda g: (g[:, :ca], g[:, ca:]))


def upsample2x_nearest(x: DiffTensor) -> DiffTensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _make(out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),))


def downsample2x_avg(x: DiffTensor) -> DiffTensor:
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"downsample2x_avg needs even H, W, got {H}x{W}")
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        g4 = 0.25 * g
        return (np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3),)

    return _make(out, (x,), bw)


def crop(x: DiffTensor, h: int, w: int) -> DiffTensor:
    """Top-left ``h x w`` window of an NCHW tensor."""
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, :, :h, :w] = g
        return (full,)

    return _make(x.data[:, :, :h, :w].copy(), (x,), bw)


def take_rows(table: DiffTensor, idx) -> DiffTensor:
    """Gather rows of a 2-D table; gradient scatters back with accumulation."""
    idx = np.asarray(idx, dtype=np.int64)
    shape = table.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], (table,), bw)


def stack_rows(xs: Sequence[DiffTensor]) -> DiffTensor:
    """Stack 1-D tensors of equal length into a 2-D tensor."""
    n = len(xs)
    return _make(np.stack([x.data for x in xs]), tuple(xs), lambda g: tuple(g[i] for i in range(n)))


# ---------------------------------------------------------------- dense / bias


def dense(x: DiffTensor, w: DiffTensor, b: DiffTensor | None = None) -> DiffTensor:
    """x @ w + b for x (B, F), w (F, G), b (G,)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"dense: cannot apply {w.shape} to {x.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"dense: bias {b.shape} for output width {w.shape[1]}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ wd.T
        gw = xd.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bw)


def add_channel_bias(x: DiffTensor, bias: DiffTensor) -> DiffTensor:
    """Add a (B, C) or (C,) bias to an NCHW tensor, broadcast over H, W."""
    B, C = x.shape[:2]
    if bias.shape not in ((B, C), (C,)):
        raise DimensionError(f"add_channel_bias: bias {bias.shape} for features {x.shape}")
    per_sample = bias.data.ndim == 2
    b4 = bias.data.reshape((B if per_sample else 1, C, 1, 1))

    def bw(g):
        gb = g.sum(axis=(2, 3))
        return g, (gb if per_sample else gb.sum(axis=0))

    return _make(x.data + b4, (x, bias), bw)


# ---------------------------------------------------------------- convolution


def pad_nhwc(x: np.ndarray, ph: int, pw: int, mode: str) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    if mode == "reflect":
        if ph >= x.shape[1] or pw >= x.shape[2]:
            raise DimensionError(f"reflect padding {ph}x{pw} too wide for {x.shape[1]}x{x.shape[2]}")
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)), mode="reflect")
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))


def _unpad_axis(g: np.ndarray, axis: int, r: int, n: int, mode: str) -> np.ndarray:
    """Adjoint of padding by ``r`` along ``axis`` (original length ``n``)."""
    if r == 0:
        return g
    core = [slice(None)] * g.ndim
    core[axis] = slice(r, r + n)
    out = g[tuple(core)].copy()
    if mode != "reflect":
        return out

    def at(idx):
        s = [slice(None)] * g.ndim
        s[axis] = idx
        return tuple(s)

    for k in range(1, r + 1):
        out[at(k)] += g[at(r - k)]
        out[at(n - 1 - k)] += g[at(r + n - 1 + k)]
    return out


def conv2d(x: DiffTensor, k: DiffTensor, padding: str = "reflect") -> DiffTensor:
    """Stride-1 cross-correlation of x (B, C, H, W) with k (O, C, kH, kW).

    ``reflect`` and ``zero`` keep H, W (odd kernels only); ``valid`` shrinks
    them by kH-1, kW-1.
    """
    if padding not in PAD_MODES:
        raise ValueError(f"unknown padding {padding!r}")
    if x.data.ndim != 4 or k.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape}, {k.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = k.shape
    if C != Ck:
        raise DimensionError(f"conv2d: input has {C} channels, kernel expects {Ck}")
    if padding != "valid" and (kh % 2 == 0 or kw % 2 == 0):
        raise DimensionError(f"conv2d: kernel extent {kh}x{kw} must be odd")
    ph, pw = (0, 0) if padding == "valid" else (kh // 2, kw // 2)
    mode = "reflect" if padding == "reflect" else "zero"
    xt = pad_nhwc(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)), ph, pw, mode)
    Ho, Wo = xt.shape[1] - kh + 1, xt.shape[2] - kw + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{W}")
    wt = np.ascontiguousarray(k.data.transpose(2, 3, 1, 0))  # kh, kw, C, O
    n = B * Ho * Wo
    scalar = C == 1 and O == 1
    out = np.zeros((B, Ho, Wo, O))
    for i in range(kh):
        for j in range(kw):
            win = xt[:, i : i + Ho, j : j + Wo, :]
            if scalar:
                out += win * wt[i, j, 0, 0]
            else:
                out += (win.reshape(n, C) @ wt[i, j]).reshape(B, Ho, Wo, O)
    result = out.transpose(0, 3, 1, 2)

    def bw(g):
        gy = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gy2 = gy.reshape(n, O)
        gxt = np.zeros_like(xt) if x.requires_grad else None
        gwt = np.zeros_like(wt) if k.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                win = xt[:, i : i + Ho, j : j + Wo, :]
                if gwt is not None:
                    if scalar:
                        gwt[i, j, 0, 0] = np.vdot(win, gy)
                    else:
                        gwt[i, j] = win.reshape(n, C).T @ gy2
                if gxt is not None:
                    if scalar:
                        gxt[:, i : i + Ho, j : j + Wo, :] += gy * wt[i, j, 0, 0]
                    else:
                        gxt[:, i : i + Ho, j : j + Wo, :] += (gy2 @ wt[i, j].T).reshape(B, Ho, Wo, C)
        gx = None
        if gxt is not None:
            gxt = _unpad_axis(gxt, 1, ph, H, mode)
            gxt = _unpad_axis(gxt, 2, pw, W, mode)
            gx = gxt.transpose(0, 3, 1, 2)
        gk = None if gwt is None else gwt.transpose(3, 2, 0, 1)
        return gx, gk

    return _make(result, (x, k), bw)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"DMX1"


def save_tensors(path, tensors: dict[str, np.ndarray]):
    """Write a named f64 table: magic, count, then (name, shape, data) records.

    All integers are little-endian uint32; data is little-endian float64.
    """
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


class CheckpointError(ValueError):
    pass


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r} at offset 0")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            raise CheckpointError(f"{path}: truncated at offset {pos}")
        vals = struct.unpack_from(fmt, raw, pos)
        pos += size
        return vals

    (count,) = take("<I")
    out = {}
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(raw):
            raise CheckpointError(f"{path}: truncated name at offset {pos}")
        name = raw[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated data for {name!r} at offset {pos}")
        out[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes at offset {pos}")
    return out
