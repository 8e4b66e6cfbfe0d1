import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from usdespeckle.evalx import (GlcmConfig, SingularSpectrum, SsimConfig, flood_fill, format_metric, glcm,
                               glcm_homogeneity, iou, psnr, singular_spectrum, spectral_energy_topk, ssim,
                               ssim_map)
from usdespeckle.imgcore import Image, ImageError

unit_arrays = arrays(np.float64, (12, 12), elements=st.floats(0, 1))


# ---------------------------------------------------------------------- PSNR

def test_psnr_identical_is_inf():
    a = Image(np.full((4, 4), 0.3))
    assert psnr(a, a) == math.inf and format_metric(psnr(a, a)) == "inf"


def test_psnr_uniform_offset():
    a = np.random.default_rng(0).random((16, 16)) * 0.8
    assert psnr(a, a + 16 / 255) == pytest.approx(20 * math.log10(255 / 16), abs=1e-9)
    assert psnr(a, a + 16 / 255) == pytest.approx(24.05, abs=0.01)


def test_psnr_brute_force(rng):
    a, b = rng.random((9, 7)), rng.random((9, 7))
    sq = 0.0
    for i in range(9):
        for j in range(7):
            sq += (a[i, j] - b[i, j]) ** 2
    assert psnr(a, b) == pytest.approx(10 * math.log10(1 / (sq / 63)), rel=1e-12)


def test_psnr_dimension_mismatch():
    with pytest.raises(ImageError):
        psnr(np.zeros((3, 3)), np.zeros((3, 4)))


@given(unit_arrays, unit_arrays)
def test_psnr_ssim_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


# ---------------------------------------------------------------------- SSIM

def _ssim_window_oracle(x, y, cfg=SsimConfig()):
    """Direct per-window weighted statistics over the valid region."""
    r = cfg.window // 2
    g1 = np.exp(-((np.arange(cfg.window) - r) ** 2) / (2 * cfg.sigma ** 2))
    w = np.outer(g1, g1)
    w /= w.sum()
    c1, c2 = (cfg.k1 * cfg.data_range) ** 2, (cfg.k2 * cfg.data_range) ** 2
    vals = []
    for i in range(r, x.shape[0] - r):
        for j in range(r, x.shape[1] - r):
            px = x[i - r:i + r + 1, j - r:j + r + 1]
            py = y[i - r:i + r + 1, j - r:j + r + 1]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_matches_window_oracle(rng):
    x = rng.random((20, 18))
    y = np.clip(x + 0.2 * rng.standard_normal(x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(_ssim_window_oracle(x, y), abs=1e-10)


@given(unit_arrays)
def test_ssim_self_is_one(a):
    assert ssim(a, a) == 1.0 or ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_self_exact(rng):
    a = Image(rng.random((32, 32)))
    assert ssim(a, a) == 1.0


def test_ssim_inverted_checkerboard_negative():
    z, x = np.indices((32, 32))
    checker = ((x + z) % 2).astype(float)
    inverted = 1.0 - checker
    assert ssim(checker, inverted) < 0
    assert np.all(ssim_map(checker, inverted) < 0)


def test_ssim_offset_invariance_for_equal_local_means():
    # with equal local means the luminance term is exactly 1, so only
    # (co)variances matter and a shared offset leaves them untouched
    z, x = np.indices((32, 32))
    smooth = 0.4 + 0.1 * np.sin(x / 6.0) * np.cos(z / 9.0)
    checker = 0.05 * np.where((x + z) % 2, 1.0, -1.0)
    a, b = smooth + checker, smooth - checker
    base = ssim(a, b)
    for off in (0.1, 0.2, 0.35):
        assert ssim(a + off, b + off) == pytest.approx(base, abs=1e-6)


def test_ssim_small_image_rejected():
    with pytest.raises(ImageError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


def test_ssim_orders_noisy_and_filtered(speckle_pairs):
    from scipy import ndimage
    clean, noisy = speckle_pairs[0]
    smooth = ndimage.gaussian_filter(noisy.pixels, 2.0)
    assert ssim(smooth, clean) > ssim(noisy, clean)


# ---------------------------------------------------------------------- GLCM

def test_glcm_constant_is_one():
    assert glcm_homogeneity(np.full((8, 8), 0.37)) == 1.0


def test_glcm_two_by_two_fixture():
    img = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert glcm_homogeneity(img, GlcmConfig(levels=2, offsets=((1, 0),))) == 0.5
    P = glcm(img, 1, 0, 2)
    np.testing.assert_array_equal(P, [[0, 2], [2, 0]])


def test_glcm_hand_counts():
    img = np.array([[0.0, 0.0, 0.9], [0.9, 0.0, 0.0]])
    # horizontal pairs: (0,0),(0,1),(1,0),(0,0) -> symmetric counts [[4,2],[2,0]]
    np.testing.assert_array_equal(glcm(img, 1, 0, 2), [[4, 2], [2, 0]])
    assert glcm_homogeneity(img, GlcmConfig(levels=2, offsets=((1, 0),))) == pytest.approx((4 + 2 * 2 * 0.5) / 8)


@given(arrays(np.float64, (9, 11), elements=st.floats(0, 1)))
def test_glcm_transpose_invariant(a):
    assert glcm_homogeneity(a) == pytest.approx(glcm_homogeneity(a.T), abs=1e-12)
    assert 0 < glcm_homogeneity(a) <= 1


def test_glcm_config_validation():
    with pytest.raises(ValueError):
        GlcmConfig(levels=1)
    with pytest.raises(ValueError):
        GlcmConfig(offsets=((0, 0),))


# ----------------------------------------------------------------------- SVD

def test_rank_one_patch(rng):
    s = singular_spectrum(np.outer(rng.random(48), rng.random(48))).values
    assert s[0] > 0 and np.all(np.abs(s[1:]) < 1e-9)
    assert spectral_energy_topk(singular_spectrum(np.outer(rng.random(8), rng.random(8))), 1) == pytest.approx(1.0)


def test_identity_patch():
    np.testing.assert_allclose(singular_spectrum(np.eye(6)).values, np.ones(6))


def test_spectrum_matches_gram_eigenvalues(rng):
    x = rng.random((48, 48))
    eig = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(x.T @ x))[::-1], 0, None))
    s = singular_spectrum(x)
    assert s.patch_size == 48
    np.testing.assert_allclose(s.values[:20], eig[:20], rtol=1e-8)


@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)))
def test_spectrum_frobenius_and_order(a):
    s = singular_spectrum(a).values
    assert np.all(np.diff(s) <= 1e-12) and np.all(s >= 0)
    fro = float((a * a).sum())
    assert float((s * s).sum()) == pytest.approx(fro, rel=1e-6, abs=1e-12)


def test_energy_topk():
    flat = SingularSpectrum(np.ones(8), 8)
    assert spectral_energy_topk(flat, 3) == pytest.approx(3 / 8)
    fixture = SingularSpectrum(np.array([3.0, 2.0, 1.0]), 3)
    assert spectral_energy_topk(fixture, 2) == pytest.approx(13 / 14)
    with pytest.raises(ValueError):
        spectral_energy_topk(flat, 0)
    with pytest.raises(ValueError):
        spectral_energy_topk(SingularSpectrum(np.zeros(3), 3), 1)


def test_non_square_rejected():
    with pytest.raises(ImageError):
        singular_spectrum(np.zeros((4, 5)))


# ----------------------------------------------------------- flood fill, IoU

def test_flood_fill_constant_full():
    assert flood_fill(np.full((6, 7), 0.5), (3, 2), 0.1).all()


def test_flood_fill_distinct_values_single_pixel():
    img = np.arange(30.0).reshape(5, 6) / 30
    m = flood_fill(img, (4, 1), 0.0)
    assert m.sum() == 1 and m[1, 4] == 1


def test_flood_fill_is_four_connected():
    img = np.ones((3, 3))
    img[0, 0] = img[1, 1] = img[2, 2] = 0.0
    m = flood_fill(img, (0, 0), 0.1)
    assert m.sum() == 1


def test_flood_fill_bad_seed():
    with pytest.raises(ImageError):
        flood_fill(np.zeros((4, 4)), (4, 0), 0.1)


def test_flood_fill_disk_area():
    z, x = np.indices((64, 64))
    disk = (x - 32) ** 2 + (z - 30) ** 2 <= 10 ** 2
    img = np.where(disk, 0.1, 0.6)
    m = flood_fill(img, (32, 30), 0.2)
    assert iou(m, disk) == 1.0


def test_iou_hand_cases():
    a = np.zeros((4, 4), np.uint8)
    a[:, :2] = 1
    b = np.zeros((4, 4), np.uint8)
    b[:, 1:3] = 1
    c = np.zeros((4, 4), np.uint8)
    c[:, 3] = 1
    assert iou(a, a) == 1.0
    assert iou(a, c) == 0.0
    assert iou(a, b) == 1 / 3
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ImageError):
        iou(a, np.zeros((3, 3)))
