"""Multi-scale perturbation (down/up resampling) and spectral band analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .imgcore import Image, ImageError, InterpKind, gaussian_blur, pearson, resize

DEFAULT_SCALES = (1.0, 0.5, 0.25)
LPF1_KSIZES = (1, 3, 5)
LPF2_KSIZES = (1, 5, 9)


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def msp_perturb(img: Image, s: float, kind=InterpKind.BILINEAR) -> Image:
    """Resample ``img`` to ``s`` times its size and back with the same kernel."""
    kind = InterpKind.parse(kind)
    if not 0 < s <= 1:
        raise ImageError(f"scale must lie in (0, 1], got {s}")
    if s == 1.0:
        return img
    w, h = img.width, img.height
    sw, sh = round_half_up(s * w), round_half_up(s * h)
    if sw < 1 or sh < 1:
        raise ImageError(f"scale {s} collapses a {w}x{h} image to {sw}x{sh}")
    small = resize(img, sw, sh, kind)
    out = resize(small, w, h, kind)
    return Image(out.pixels, img.spacing)


@dataclass(frozen=True)
class VariantSet:
    scales: tuple
    variants: tuple
    interp: InterpKind
    origin: Image

    def __len__(self):
        return len(self.variants)

    def stack(self) -> np.ndarray:
        return np.stack([v.pixels for v in self.variants])


def msp_variants(img: Image, scales: Sequence[float] = DEFAULT_SCALES,
                 kind=InterpKind.BILINEAR) -> VariantSet:
    kind = InterpKind.parse(kind)
    if len(scales) == 0:
        raise ImageError("at least one scale is required")
    variants = tuple(msp_perturb(img, s, kind) for s in scales)
    return VariantSet(tuple(float(s) for s in scales), variants, kind, img)


def lpf_variants(img: Image, ksizes: Sequence[int] = LPF2_KSIZES) -> VariantSet:
    """Gaussian low-pass versions of ``img``; scales are recorded as 1.0."""
    variants = tuple(gaussian_blur(img, k) for k in ksizes)
    return VariantSet(tuple(1.0 for _ in ksizes), variants, InterpKind.BILINEAR, img)


@dataclass(frozen=True)
class BandPair:
    low: np.ndarray
    high: np.ndarray
    mask_half_width: int


def default_mask_half_width(w: int, h: int) -> int:
    return max(1, round_half_up(0.06 * min(w, h)))


def band_split(img, mask_half_width: int) -> BandPair:
    """Split into the central (2m+1)^2 square of the centered spectrum and the rest."""
    x = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    h, w = x.shape
    m = int(mask_half_width)
    if m < 1 or m >= min(w, h) / 2:
        raise ImageError(f"mask half-width {m} must satisfy 1 <= m < {min(w, h) / 2}")
    spec = np.fft.fftshift(np.fft.fft2(x))
    cz, cx = h // 2, w // 2
    mask = np.zeros((h, w), dtype=bool)
    mask[cz - m:cz + m + 1, cx - m:cx + m + 1] = True
    low = np.fft.ifft2(np.fft.ifftshift(np.where(mask, spec, 0)))
    high = np.fft.ifft2(np.fft.ifftshift(np.where(mask, 0, spec)))
    return BandPair(low.real, high.real, m)


@dataclass(frozen=True)
class CorrReport:
    low_corr: np.ndarray
    high_corr: np.ndarray
    method: str = "pearson"

    @staticmethod
    def mean_off_diagonal(mat: np.ndarray) -> float:
        k = mat.shape[0]
        if k < 2:
            raise ValueError("need at least two variants for off-diagonal statistics")
        off = mat[~np.eye(k, dtype=bool)]
        return float(np.nanmean(off))

    @property
    def low_mean(self) -> float:
        return self.mean_off_diagonal(self.low_corr)

    @property
    def high_mean(self) -> float:
        return self.mean_off_diagonal(self.high_corr)


def _corr_matrix(bands: List[np.ndarray]) -> np.ndarray:
    k = len(bands)
    mat = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            try:
                r = pearson(bands[i], bands[j])
            except ImageError:
                r = float("nan")
            mat[i, j] = mat[j, i] = r
    # a constant band has no defined self-correlation either
    for i in range(k):
        if np.ptp(bands[i]) <= 1e-12:
            mat[i, i] = float("nan")
    return mat


def cross_scale_corr(vs: VariantSet, mask_half_width: int | None = None) -> CorrReport:
    if mask_half_width is None:
        mask_half_width = default_mask_half_width(vs.origin.width, vs.origin.height)
    pairs = [band_split(v, mask_half_width) for v in vs.variants]
    return CorrReport(_corr_matrix([p.low for p in pairs]), _corr_matrix([p.high for p in pairs]))
