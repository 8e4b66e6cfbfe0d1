"""Classical despeckling filters: speckle-reducing anisotropic diffusion and non-local means."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .imgcore import Image, ImageError
from .simulate import ConfigError, _from_mapping

EPS_FLOOR = 1e-6


@dataclass(frozen=True)
class SradConfig:
    iterations: int = 100
    dt: float = 0.05
    # (x0, z0, width, height) of a homogeneous region; None means the whole image
    homogeneous_roi: Optional[Tuple[int, int, int, int]] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("SRAD needs at least one iteration")
        if not 0 < self.dt <= 0.25:
            raise ConfigError(f"SRAD dt must satisfy 0 < dt <= 0.25 for stability, got {self.dt}")
        if self.homogeneous_roi is not None:
            roi = tuple(int(v) for v in self.homogeneous_roi)
            if len(roi) != 4 or roi[2] < 2 or roi[3] < 2 or roi[0] < 0 or roi[1] < 0:
                raise ConfigError(f"homogeneous_roi must be (x0, z0, width>=2, height>=2), got {self.homogeneous_roi}")
            object.__setattr__(self, "homogeneous_roi", roi)

    @classmethod
    def from_dict(cls, data: dict) -> "SradConfig":
        return _from_mapping(cls, data)


@dataclass(frozen=True)
class NlmConfig:
    h: float = 0.12
    patch: int = 7
    window: int = 21
    sigma: Optional[float] = None   # noise level; estimated from the image when None

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError("NLM h must be > 0")
        if self.patch % 2 == 0 or self.window % 2 == 0:
            raise ConfigError("NLM patch and window sizes must be odd")
        if self.patch < 1 or self.patch > self.window:
            raise ConfigError("NLM patch must satisfy 1 <= patch <= window")
        if self.sigma is not None and self.sigma < 0:
            raise ConfigError("NLM sigma must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "NlmConfig":
        return _from_mapping(cls, data)


# ---------------------------------------------------------------------- SRAD

def _roi_stats(u: np.ndarray, roi) -> float:
    """Squared noise coefficient of variation q0^2 over the ROI."""
    if roi is None:
        region = u
    else:
        x0, z0, w, h = roi
        if z0 + h > u.shape[0] or x0 + w > u.shape[1]:
            raise ImageError(f"homogeneous ROI {roi} exceeds image {u.shape[1]}x{u.shape[0]}")
        region = u[z0:z0 + h, x0:x0 + w]
    mu = float(region.mean())
    return float(region.var()) / (mu * mu)


def srad_step(u: np.ndarray, dt: float, roi=None) -> np.ndarray:
    """One explicit SRAD update with Neumann boundaries."""
    p = np.pad(u, 1, mode="edge")
    n = p[:-2, 1:-1] - u
    s = p[2:, 1:-1] - u
    w = p[1:-1, :-2] - u
    e = p[1:-1, 2:] - u
    grad2 = (n * n + s * s + w * w + e * e) / (u * u)
    lap = (n + s + w + e) / u
    q2 = (0.5 * grad2 - lap * lap / 16.0) / (1.0 + 0.25 * lap) ** 2
    q02 = _roi_stats(u, roi)
    if q02 <= 1e-12:
        c = np.ones_like(u)
    else:
        c = 1.0 / (1.0 + (q2 - q02) / (q02 * (1.0 + q02)))
        c = np.clip(np.nan_to_num(c, nan=0.0, posinf=1.0, neginf=0.0), 0.0, 1.0)
    cp = np.pad(c, 1, mode="edge")
    div = cp[2:, 1:-1] * s + c * n + cp[1:-1, 2:] * e + c * w
    return u + 0.25 * dt * div


def srad(img: Image, cfg: SradConfig = SradConfig()) -> Image:
    u = np.maximum(img.pixels, EPS_FLOOR)
    for _ in range(cfg.iterations):
        u = np.maximum(srad_step(u, cfg.dt, cfg.homogeneous_roi), EPS_FLOOR)
    return Image(np.clip(u, 0.0, 1.0), img.spacing)


# ----------------------------------------------------------------------- NLM

_LAPLACE = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def estimate_sigma(x: np.ndarray) -> float:
    """Robust noise level: MAD of the Laplacian residual, scaled for Gaussian noise."""
    r = ndimage.correlate(x, _LAPLACE, mode="mirror")
    mad = float(np.median(np.abs(r - np.median(r))))
    return 1.4826 * mad / math.sqrt(20.0)


def nlm(img: Image, cfg: NlmConfig = NlmConfig()) -> Image:
    x = img.pixels
    h_img, w_img = x.shape
    if cfg.window > h_img or cfg.window > w_img:
        raise ImageError(f"NLM window {cfg.window} larger than image {w_img}x{h_img}")
    sigma = estimate_sigma(x) if cfg.sigma is None else float(cfg.sigma)
    rw, rp = cfg.window // 2, cfg.patch // 2
    pad = rw + rp
    xp = np.pad(x, pad, mode="reflect")
    core = xp[rw:rw + h_img + 2 * rp, rw:rw + w_img + 2 * rp]
    h2 = cfg.h * cfg.h
    acc = np.zeros_like(x)
    wsum = np.zeros_like(x)
    wmax = np.zeros_like(x)
    for dz in range(-rw, rw + 1):
        for dx in range(-rw, rw + 1):
            if dz == 0 and dx == 0:
                continue
            shifted = xp[rw + dz:rw + dz + h_img + 2 * rp, rw + dx:rw + dx + w_img + 2 * rp]
            d2 = ndimage.uniform_filter((core - shifted) ** 2, cfg.patch, mode="constant")[rp:rp + h_img, rp:rp + w_img]
            wgt = np.exp(-np.maximum(0.0, d2 - 2.0 * sigma * sigma) / h2)
            acc += wgt * shifted[rp:rp + h_img, rp:rp + w_img]
            wsum += wgt
            np.maximum(wmax, wgt, out=wmax)
    # the centre pixel gets the best neighbour weight (1 if every neighbour vanished)
    wc = np.where(wmax > 0, wmax, 1.0)
    out = (acc + wc * x) / (wsum + wc)
    return Image(np.clip(out, 0.0, 1.0), img.spacing)
