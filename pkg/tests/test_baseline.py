import numpy as np
import pytest
import scipy.ndimage as ndi
from hypothesis import given, settings, strategies as st

from demix.baseline import NlmConfig, estimate_noise_sigma, gaussian_filter, gaussian_kernel_1d, nlmeans


def nlm_loops(x, P, S, h, sigma=0.0):
    """Textbook non-local means over reflect-padded borders, one pixel at a time."""
    H, W = x.shape
    xp = np.pad(x, P + S, mode="reflect")
    o = P + S
    out = np.empty_like(x)
    for i in range(H):
        for j in range(W):
            ref = xp[o + i - P : o + i + P + 1, o + j - P : o + j + P + 1]
            num = den = 0.0
            for dy in range(-S, S + 1):
                for dx in range(-S, S + 1):
                    qi, qj = o + i + dy, o + j + dx
                    cand = xp[qi - P : qi + P + 1, qj - P : qj + P + 1]
                    d2 = np.mean((ref - cand) ** 2)
                    w = np.exp(-max(d2 - 2 * sigma**2, 0.0) / h**2)
                    num += w * xp[qi, qj]
                    den += w
            out[i, j] = num / den
    return out


@pytest.mark.parametrize("h,sigma", [(0.1, 0.0), (0.3, 0.05), (1.0, 0.0)])
def test_nlm_matches_loop_oracle(h, sigma):
    x = np.random.default_rng(0).random((4, 4))
    got = nlmeans(x, NlmConfig(patch_radius=1, search_radius=1, h=h, sigma=sigma))
    assert np.max(np.abs(got - nlm_loops(x, 1, 1, h, sigma))) < 1e-12


def test_nlm_loop_oracle_larger_window():
    x = np.random.default_rng(1).random((9, 9))
    got = nlmeans(x, NlmConfig(patch_radius=2, search_radius=3, h=0.2))
    assert np.max(np.abs(got - nlm_loops(x, 2, 3, 0.2))) < 1e-12


def test_nlm_constant_image_is_fixed_point():
    x = np.full((10, 10), 0.37)
    assert np.allclose(nlmeans(x, NlmConfig(h=0.05)), x, atol=1e-15)


def test_nlm_small_h_approaches_identity():
    x = np.random.default_rng(2).random((12, 12))
    assert np.max(np.abs(nlmeans(x, NlmConfig(h=1e-4)) - x)) < 1e-12


def test_nlm_zero_search_radius_is_identity():
    x = np.random.default_rng(3).random((6, 6))
    assert np.array_equal(nlmeans(x, NlmConfig(search_radius=0)), x)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16), st.floats(0.01, 2.0))
def test_nlm_output_is_convex_combination(seed, h):
    x = np.random.default_rng(seed).random((8, 8))
    out = nlmeans(x, NlmConfig(patch_radius=1, search_radius=2, h=h))
    assert x.min() - 1e-12 <= out.min() and out.max() <= x.max() + 1e-12


def test_nlm_config_validation():
    with pytest.raises(ValueError):
        NlmConfig(patch_radius=0)
    with pytest.raises(ValueError):
        NlmConfig(h=0.0)


def test_noise_estimate():
    rng = np.random.default_rng(4)
    noisy = 0.5 + 0.1 * rng.standard_normal((128, 128))
    assert abs(estimate_noise_sigma(noisy) - 0.1) < 0.005
    assert estimate_noise_sigma(np.full((8, 8), 0.2)) == 0.0


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_gaussian_filter_matches_scipy(sigma):
    x = np.random.default_rng(5).random((20, 17))
    # scipy's "mirror" is numpy's "reflect"
    ref = ndi.gaussian_filter(x, sigma, mode="mirror", truncate=4.0)
    assert np.max(np.abs(gaussian_filter(x, sigma) - ref)) < 1e-12


def test_gaussian_filter_examples():
    x = np.random.default_rng(6).random((5, 5))
    assert np.array_equal(gaussian_filter(x, 0.0), x)
    assert np.allclose(gaussian_filter(np.full((6, 6), 0.3), 1.5), 0.3, atol=1e-15)
    impulse = np.zeros((17, 17))
    impulse[8, 8] = 1.0
    g = gaussian_kernel_1d(1.0)
    assert np.allclose(gaussian_filter(impulse, 1.0)[4:13, 4:13], np.outer(g, g), atol=1e-16)
    assert abs(gaussian_kernel_1d(0.7).sum() - 1.0) < 1e-15
    with pytest.raises(ValueError):
        gaussian_filter(x, -1.0)


def test_gaussian_filter_tiny_image_uses_symmetric_padding():
    x = np.random.default_rng(7).random((3, 3))
    ref = ndi.gaussian_filter(x, 2.0, mode="reflect", truncate=4.0)
    assert np.max(np.abs(gaussian_filter(x, 2.0) - ref)) < 1e-12
