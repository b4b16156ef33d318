import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demix import diffcore as dc
from demix.quality import (
    MetricReport,
    MetricRow,
    loss_l1,
    loss_total,
    ms_ssim,
    ms_ssim_tensor,
    psnr,
    ssim,
)

from helpers import ms_ssim_direct, numeric_grad, rel_error, ssim_direct


def pair(seed, n=32):
    rng = np.random.default_rng(seed)
    a = rng.random((n, n))
    return a, np.clip(a + 0.2 * rng.standard_normal((n, n)), 0, 1)


def test_ssim_identity_and_oracle():
    a, b = pair(0)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-15)
    assert abs(ssim(a, b) - ssim_direct(a, b)[0]) < 1e-9


def test_ssim_inverted_half_plane_is_negative():
    x = np.zeros((16, 16))
    x[:, 8:] = 1.0
    s = ssim(x, 1 - x)
    assert s < 0
    assert abs(s - ssim_direct(x, 1 - x)[0]) < 1e-9


def test_ssim_constant_images_luminance_only():
    a, b = np.full((12, 12), 0.3), np.full((12, 12), 0.4)
    c1 = 0.01**2
    assert abs(ssim(a, b) - (2 * 0.3 * 0.4 + c1) / (0.09 + 0.16 + c1)) < 1e-12


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.ones((8, 8)), np.ones((8, 8)))


def test_ms_ssim_basics():
    a, b = pair(1, 48)
    assert ms_ssim(a, a) == pytest.approx(1.0, abs=1e-15)
    assert ms_ssim(a, b, scales=1) == ssim(a, b)
    assert abs(ms_ssim(a, b) - ms_ssim_direct(a, b)) < 1e-9


def test_ms_ssim_falls_back_on_small_images():
    a, b = pair(2, 30)
    with pytest.warns(UserWarning, match="using 2"):
        v = ms_ssim(a, b, scales=3)
    assert abs(v - ms_ssim_direct(a, b, scales=2)) < 1e-9


def test_psnr_examples():
    a = np.zeros((4, 4))
    assert abs(psnr(a, a + 0.5) - 6.020599913279624) < 1e-12
    assert psnr(a, a) == 100.0


def test_loss_l1_examples():
    y = np.random.default_rng(0).random((2, 1, 4, 4))
    assert loss_l1(dc.tensor(y), y).item() == 0.0
    assert abs(loss_l1(dc.tensor(y + 0.5), y).item() - 0.5) < 1e-15
    with pytest.raises(dc.DimensionError):
        loss_l1(dc.tensor(y[:1]), y)


def test_loss_l1_gradient_is_sign_over_n():
    rng = np.random.default_rng(1)
    y = rng.random((1, 1, 5, 5))
    p = dc.tensor(y + rng.choice([-0.1, 0.1], size=y.shape), requires_grad=True)
    dc.backward(loss_l1(p, y))
    assert np.array_equal(p.grad, np.sign(p.data - y) / y.size)


def test_loss_total_examples():
    rng = np.random.default_rng(2)
    y = rng.random((2, 1, 24, 24))
    assert abs(loss_total(dc.tensor(y), y).item()) < 1e-12
    p = dc.tensor(y + 0.1 * rng.standard_normal(y.shape))
    assert loss_total(p, y, use_msssim=False).item() == loss_l1(p, y).item()


def test_tape_ms_ssim_matches_numpy_metric():
    rng = np.random.default_rng(3)
    y = rng.random((2, 1, 48, 48))
    x = np.clip(y + 0.1 * rng.standard_normal(y.shape), 0, 1)
    tape = ms_ssim_tensor(dc.tensor(x), y).item()
    ref = np.mean([ms_ssim(x[i, 0], y[i, 0]) for i in range(2)])
    assert abs(tape - ref) < 1e-12


def test_loss_total_gradient_equals_components():
    rng = np.random.default_rng(4)
    y = rng.random((1, 1, 24, 24))
    x0 = np.clip(y + 0.1 * rng.standard_normal(y.shape), 0.01, 0.99)
    p = dc.tensor(x0.copy(), requires_grad=True)
    dc.backward(loss_total(p, y, scales=2))
    coords = rng.choice(x0.size, 20, replace=False)
    fd_l1 = numeric_grad(lambda: loss_l1(dc.tensor(x0), y).item(), x0, coords)
    fd_ms = numeric_grad(lambda: 1 - ms_ssim_tensor(dc.tensor(x0), y, scales=2).item(), x0, coords)
    assert rel_error(p.grad.reshape(-1)[coords], fd_l1 + fd_ms) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.01, 0.5))
def test_metric_symmetry_and_range(seed, noise):
    rng = np.random.default_rng(seed)
    a = rng.random((16, 16))
    b = np.clip(a + noise * rng.standard_normal(a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    assert psnr(a, b) == psnr(b, a)
    assert -1.0 <= ssim(a, b) <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_loss_total_nonnegative(seed):
    rng = np.random.default_rng(seed)
    y = rng.random((1, 1, 24, 24))
    x = np.clip(y + 0.2 * rng.standard_normal(y.shape), 0, 1)
    assert loss_total(dc.tensor(x), y).item() > 0.0


def test_metric_report_csv(tmp_path):
    report = MetricReport([])
    report.add(MetricRow("img0", 50, 0.373, 0.127, 2.0, 1.5, "demix", 21.0, 0.5))
    report.add(MetricRow("img1", 50, 0.373, 0.127, 2.0, 1.5, "demix", 23.0, 0.7))
    assert report.mean("psnr", method="demix") == 22.0
    report.write_csv(tmp_path / "m.csv")
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert list(rows[0]) == ["image_id", "t", "alpha_t", "beta_t", "sigma_x", "sigma_y", "method", "psnr", "ssim"]
    assert rows[1]["image_id"] == "img1"
