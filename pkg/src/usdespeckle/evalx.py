"""Full-reference and no-reference image metrics, SVD diagnostics, flood fill."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from .imgcore import Image, ImageError

INF = float("inf")


def _px(a) -> np.ndarray:
    return a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float64)


def _check_same(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ImageError(f"dimension mismatch: {a.shape} vs {b.shape}")


def format_metric(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def psnr(a, b, data_range: float = 1.0) -> float:
    x, y = _px(a), _px(b)
    _check_same(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return INF
    return 10.0 * math.log10(data_range ** 2 / mse)


@dataclass(frozen=True)
class SsimConfig:
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0


def _gauss_window(cfg: SsimConfig) -> np.ndarray:
    x = np.arange(cfg.window) - (cfg.window - 1) / 2
    g = np.exp(-(x * x) / (2 * cfg.sigma ** 2))
    return g / g.sum()


def ssim_map(a, b, cfg: SsimConfig = SsimConfig()) -> np.ndarray:
    """Local SSIM over every fully covered window position ("valid" region)."""
    x, y = _px(a), _px(b)
    _check_same(x, y)
    if x.shape[0] < cfg.window or x.shape[1] < cfg.window:
        raise ImageError(f"image {x.shape} smaller than the {cfg.window}x{cfg.window} SSIM window")
    g = _gauss_window(cfg)

    def filt(arr):
        out = ndimage.correlate1d(arr, g, axis=0, mode="mirror")
        return ndimage.correlate1d(out, g, axis=1, mode="mirror")

    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    r = cfg.window // 2
    return smap[r:smap.shape[0] - r, r:smap.shape[1] - r]


def ssim(a, b, cfg: SsimConfig = SsimConfig()) -> float:
    return float(np.mean(ssim_map(a, b, cfg)))


@dataclass(frozen=True)
class GlcmConfig:
    levels: int = 32
    offsets: Tuple[Tuple[int, int], ...] = ((1, 0), (0, 1))
    symmetric: bool = True
    normalized: bool = True

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("GLCM needs at least 2 gray levels")
        if any(dx == 0 and dz == 0 for dx, dz in self.offsets):
            raise ValueError("GLCM offsets must be non-zero")


def quantize_levels(x: np.ndarray, levels: int) -> np.ndarray:
    return np.clip(np.floor(x * levels), 0, levels - 1).astype(np.int64)


def glcm(img, dx: int, dz: int, levels: int, symmetric: bool = True) -> np.ndarray:
    """Co-occurrence counts of (pixel, pixel shifted by dx columns and dz rows)."""
    q = quantize_levels(_px(img), levels)
    h, w = q.shape
    r0, r1 = max(0, -dz), min(h, h - dz)
    c0, c1 = max(0, -dx), min(w, w - dx)
    if r1 <= r0 or c1 <= c0:
        return np.zeros((levels, levels))
    a = q[r0:r1, c0:c1]
    b = q[r0 + dz:r1 + dz, c0 + dx:c1 + dx]
    counts = np.bincount((a * levels + b).ravel(), minlength=levels * levels)
    P = counts.reshape(levels, levels).astype(np.float64)
    if symmetric:
        P = P + P.T
    return P


def glcm_homogeneity(img, cfg: GlcmConfig = GlcmConfig()) -> float:
    i, j = np.indices((cfg.levels, cfg.levels))
    weight = 1.0 / (1.0 + np.abs(i - j))
    values = []
    for dx, dz in cfg.offsets:
        P = glcm(img, dx, dz, cfg.levels, cfg.symmetric)
        total = P.sum()
        if total == 0:
            continue
        if cfg.normalized:
            P = P / total
        values.append(float(np.sum(P * weight)))
    if not values:
        raise ImageError("image too small for the configured GLCM offsets")
    return float(np.mean(values))


@dataclass(frozen=True)
class SingularSpectrum:
    values: np.ndarray
    patch_size: int


def singular_spectrum(patch) -> SingularSpectrum:
    x = _px(patch)
    if x.shape[0] != x.shape[1]:
        raise ImageError(f"singular spectrum needs a square patch, got {x.shape}")
    s = np.linalg.svd(x, compute_uv=False)
    return SingularSpectrum(np.sort(s)[::-1], x.shape[0])


def spectral_energy_topk(s: SingularSpectrum, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    e = np.asarray(s.values, dtype=np.float64) ** 2
    total = float(e.sum())
    if total == 0.0:
        raise ValueError("all-zero singular spectrum")
    return float(e[:k].sum()) / total


_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def flood_fill(img, seed: Tuple[int, int], tol: float) -> np.ndarray:
    """4-connected region of pixels within ``tol`` of the seed value; seed is (x, z)."""
    x = _px(img)
    sx, sz = seed
    if not (0 <= sz < x.shape[0] and 0 <= sx < x.shape[1]):
        raise ImageError(f"seed {seed} outside image {x.shape[1]}x{x.shape[0]}")
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    admissible = np.abs(x - x[sz, sx]) <= tol
    labels, _ = ndimage.label(admissible, structure=_FOUR_CONNECTED)
    return (labels == labels[sz, sx]).astype(np.uint8)


def iou(a, b) -> float:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    _check_same(a, b)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


def evaluate_pair(pred, ref) -> dict:
    return {"psnr": psnr(pred, ref), "ssim": ssim(pred, ref), "homogeneity": glcm_homogeneity(pred)}
