"""Shared oracles for the test suite: central finite differences and a toy model."""

import numpy as np

from demix import diffcore as dc
from demix import model as M
from demix.degrade import NoiseSchedule

H = 1e-5
FLOOR = 1e-7  # gradients below this are compared absolutely


def rel_error(a, b, floor=FLOOR):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def numeric_grad(f, x: np.ndarray, coords=None, h=H):
    """Central differences of scalar ``f()`` w.r.t. entries of ``x`` (mutated in place)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = []
    for i in coords:
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out.append((up - down) / (2 * h))
    return np.array(out)


def check_op(op, shapes, seed=0, positive=False, **kw):
    """Max relative error of d(sum(w * op(*inputs)))/d(inputs) against central FD."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.5, 1.5, s) if positive else rng.standard_normal(s) for s in shapes]
    ts = [dc.tensor(a, requires_grad=True) for a in arrays]
    out_shape = op(*ts, **kw).shape
    w = rng.standard_normal(out_shape)

    def f():
        return float(np.sum(w * op(*[dc.tensor(a) for a in arrays], **kw).data))

    loss = dc.sum_all(dc.mul_const(op(*ts, **kw), w))
    dc.backward(loss)
    worst = 0.0
    for a, t in zip(arrays, ts):
        worst = max(worst, rel_error(t.grad.reshape(-1), numeric_grad(f, a)))
    return worst


def toy_config(**kw):
    base = dict(base_width=2, levels=2, embed_n=8, psf_m=5, schedule=NoiseSchedule(T=10))
    base.update(kw)
    return M.ModelConfig(**base)


def toy_params(seed, **kw):
    """He-initialised toy model with every bias randomised off zero.

    Zero biases put ReLUs exactly on their kink wherever an upstream channel is
    dead, which makes central differences meaningless there.
    """
    params = M.init_params(toy_config(**kw), seed=seed)
    rng = np.random.default_rng([seed, 99])
    for name, t in params.tensors.items():
        if name.endswith(".b"):
            t.data[...] = rng.normal(0.0, 0.1, t.shape)
    return params


def full_graph_error(seed, n_coords=3, size=16, loss_kw=None):
    """Worst relative FD error over a few coordinates of every trainable tensor."""
    from demix.quality import loss_total

    loss_kw = dict(window=5, scales=2) if loss_kw is None else loss_kw
    params = toy_params(seed)
    rng = np.random.default_rng([seed, 7])
    x = rng.random((2, 1, size, size))
    y = rng.random((2, 1, size, size))
    t = rng.integers(1, params.cfg.schedule.T + 1, size=2)
    sig = np.column_stack([rng.uniform(1, 4, 2), rng.uniform(0.5, 3.5, 2)])
    masks = [M.MASKS[int(i)] for i in rng.integers(0, 3, size=2)]

    def f():
        with dc.no_grad():
            return loss_total(M.demix_forward(x, t, sig, masks, params), y, **loss_kw).item()

    loss = loss_total(M.demix_forward(x, t, sig, masks, params), y, **loss_kw)
    dc.backward(loss)
    worst, where = 0.0, None
    for p in params.trainable():
        coords = rng.choice(p.data.size, size=min(n_coords, p.data.size), replace=False)
        err = rel_error(p.grad.reshape(-1)[coords], numeric_grad(f, p.data, coords))
        if err > worst:
            worst, where = err, p.name
    return worst, where


# ---------------------------------------------------------------- metric oracles


def ssim_direct(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct-formula SSIM: explicit weighted sums at every valid window position.

    Returns (mean SSIM, mean contrast-structure).
    """
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x**2 / (2 * sigma**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = k1**2, k2**2
    H, W = a.shape
    s_vals, cs_vals = [], []
    for i in range(H - size + 1):
        for j in range(W - size + 1):
            pa = a[i : i + size, j : j + size]
            pb = b[i : i + size, j : j + size]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - ma) ** 2)
            vb = np.sum(w * (pb - mb) ** 2)
            cov = np.sum(w * (pa - ma) * (pb - mb))
            cs = (2 * cov + c2) / (va + vb + c2)
            lum = (2 * ma * mb + c1) / (ma**2 + mb**2 + c1)
            s_vals.append(lum * cs)
            cs_vals.append(cs)
    return float(np.mean(s_vals)), float(np.mean(cs_vals))


def ms_ssim_direct(a, b, scales=3):
    weights = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333][:scales])
    weights /= weights.sum()
    val = 1.0
    for j in range(scales):
        s, cs = ssim_direct(a, b)
        term = s if j == scales - 1 else cs
        val *= max(term, 0.0) ** weights[j]
        if j < scales - 1:
            H, W = a.shape
            a = a[: H // 2 * 2, : W // 2 * 2].reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))
            b = b[: H // 2 * 2, : W // 2 * 2].reshape(H // 2, 2, W // 2, 2).mean(axis=(1, 3))
    return float(val)


def psnr_direct(a, b):
    err = sum((x - y) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist())) / a.size
    return 100.0 if err == 0 else min(10 * np.log10(1 / err), 100.0)
