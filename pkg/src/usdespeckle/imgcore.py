"""Image container, 8-bit I/O, resampling, blur and small statistics helpers.

Pixels live in [0, 1] as float64 arrays of shape (height, width); row index is
depth (z), column index is lateral position (x).
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class ImageError(ValueError):
    """Raised for invalid images, bad file formats and geometry violations."""


class InterpKind(str, enum.Enum):
    BILINEAR = "bilinear"
    AREA = "area"
    BICUBIC = "bicubic"

    @classmethod
    def parse(cls, value: "InterpKind | str") -> "InterpKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ImageError(f"unknown interpolation kind {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


@dataclass(frozen=True)
class Image:
    """Immutable grayscale raster with values in [0, 1].

    ``spacing`` is (mm per pixel in x, mm per pixel in z) when known.
    """

    pixels: np.ndarray
    spacing: Optional[Tuple[float, float]] = field(default=None)

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 2:
            raise ImageError(f"image must be 2-D, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError("image must be at least 1x1")
        if not np.all(np.isfinite(px)):
            raise ImageError("image contains non-finite pixels")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ImageError(f"pixels must lie in [0, 1], got [{px.min()}, {px.max()}]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_array(cls, arr, spacing=None, clip: bool = True) -> "Image":
        """Build an image from any array, clamping into [0, 1] when ``clip``."""
        a = np.asarray(arr, dtype=np.float64)
        if clip:
            a = np.clip(a, 0.0, 1.0)
        return cls(a, spacing)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.spacing == other.spacing and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


# --------------------------------------------------------------------------- I/O

def load_image(path) -> Image:
    """Read an 8-bit grayscale PNG or binary PGM into [0, 1]."""
    path = Path(path)
    try:
        pil = PILImage.open(path)
        pil.load()
    except (OSError, ValueError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}") from exc
    if pil.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr", "LA", "PA", "HSV", "LAB"):
        raise ImageError(f"unsupported color format {pil.mode!r} in {path}")
    if pil.mode != "L":
        raise ImageError(f"unsupported bit depth / mode {pil.mode!r} in {path}; need 8-bit grayscale")
    arr = np.asarray(pil, dtype=np.uint8)
    return Image(arr.astype(np.float64) / 255.0)


def quantize(img: Image) -> np.ndarray:
    """Map [0, 1] pixels to bytes with round-half-away-from-zero."""
    scaled = img.pixels * 255.0
    q = np.floor(scaled + 0.5)  # values are non-negative, so this is half-away-from-zero
    return np.clip(q, 0, 255).astype(np.uint8)


def save_image(img: Image, path) -> None:
    path = Path(path)
    data = quantize(img)
    suffix = path.suffix.lower()
    try:
        if suffix in (".pgm", ".pnm"):
            h, w = data.shape
            with open(path, "wb") as fh:
                fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
                fh.write(data.tobytes())
        else:
            PILImage.fromarray(data, mode="L").save(path, format="PNG", optimize=False)
    except OSError as exc:
        raise ImageError(f"cannot write image {path}: {exc}") from exc


# --------------------------------------------------------------------- resampling

def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def resample_matrix(n_in: int, n_out: int, kind: InterpKind) -> np.ndarray:
    """(n_out, n_in) weight matrix for 1-D resampling with half-pixel alignment.

    Out-of-range taps are clamped to the border sample (edge replication).
    """
    kind = InterpKind.parse(kind)
    if n_in < 1 or n_out < 1:
        raise ImageError("resample sizes must be >= 1")
    W = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(W, 1.0)
        return W
    scale = n_in / n_out
    rows = np.arange(n_out)
    if kind is InterpKind.AREA:
        lo = rows * scale
        hi = (rows + 1) * scale
        for i in range(n_out):
            j0 = int(math.floor(lo[i]))
            j1 = min(int(math.ceil(hi[i])), n_in)
            for j in range(j0, j1):
                overlap = min(hi[i], j + 1) - max(lo[i], j)
                if overlap > 0:
                    W[i, j] += overlap
        W /= W.sum(axis=1, keepdims=True)
        return W
    src = (rows + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    if kind is InterpKind.BILINEAR:
        taps = [(0, 1.0 - frac), (1, frac)]
    else:
        taps = [(o, _cubic(frac - o)) for o in (-1, 0, 1, 2)]
    for off, w in taps:
        idx = np.clip(base + off, 0, n_in - 1)
        np.add.at(W, (rows, idx), w)
    return W


def resize_array(arr: np.ndarray, out_w: int, out_h: int, kind) -> np.ndarray:
    """Separable resampling of an arbitrary real array (no clamping)."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape
    if out_w < 1 or out_h < 1:
        raise ImageError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    if (out_w, out_h) == (w, h):
        return arr.copy()
    wy = resample_matrix(h, out_h, kind)
    wx = resample_matrix(w, out_w, kind)
    return wy @ arr @ wx.T


def resize(img: Image, out_w: int, out_h: int, kind) -> Image:
    if out_w < 1 or out_h < 1:
        raise ImageError(f"target dimensions must be >= 1, got {out_w}x{out_h}")
    out = resize_array(img.pixels, out_w, out_h, kind)
    spacing = None
    if img.spacing is not None:
        spacing = (img.spacing[0] * img.width / out_w, img.spacing[1] * img.height / out_h)
    return Image(np.clip(out, 0.0, 1.0), spacing)


# ---------------------------------------------------------------------- filtering

def gaussian_sigma(ksize: int) -> float:
    return 0.3 * ((ksize - 1) * 0.5 - 1) + 0.8


def gaussian_kernel1d(ksize: int) -> np.ndarray:
    if ksize < 1 or ksize % 2 == 0:
        raise ImageError(f"Gaussian kernel size must be odd and >= 1, got {ksize}")
    if ksize == 1:
        return np.ones(1)
    sigma = gaussian_sigma(ksize)
    x = np.arange(ksize) - (ksize - 1) / 2
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur_array(arr: np.ndarray, ksize: int) -> np.ndarray:
    k = gaussian_kernel1d(ksize)
    if ksize == 1:
        return np.array(arr, dtype=np.float64, copy=True)
    # scipy "mirror" is reflect-101 (edge pixel not repeated)
    out = ndimage.correlate1d(np.asarray(arr, dtype=np.float64), k, axis=0, mode="mirror")
    return ndimage.correlate1d(out, k, axis=1, mode="mirror")


def gaussian_blur(img: Image, ksize: int) -> Image:
    out = gaussian_blur_array(img.pixels, ksize)
    return Image(np.clip(out, 0.0, 1.0), img.spacing)


# ------------------------------------------------------------- patches and stats

def extract_patch(img: Image, x0: int, z0: int, w: int, h: int) -> Image:
    if w < 1 or h < 1 or x0 < 0 or z0 < 0 or x0 + w > img.width or z0 + h > img.height:
        raise ImageError(
            f"patch ({x0},{z0},{w}x{h}) outside image bounds {img.width}x{img.height}")
    return Image(img.pixels[z0:z0 + h, x0:x0 + w], img.spacing)


def _as_array(a) -> np.ndarray:
    return a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float64)


def pearson(a, b) -> float:
    """Sample Pearson correlation over all pixels of two equally sized rasters."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ImageError(f"dimension mismatch: {x.shape} vs {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(np.sum(xc * xc)))
    sy = math.sqrt(float(np.sum(yc * yc)))
    scale = max(float(np.max(np.abs(x))), float(np.max(np.abs(y))), 1e-300)
    if sx <= 1e-12 * scale * math.sqrt(x.size) or sy <= 1e-12 * scale * math.sqrt(y.size):
        raise ImageError("undefined correlation: zero variance input")
    r = float(np.sum(xc * yc)) / (sx * sy)
    return max(-1.0, min(1.0, r))


def threads_from_env(default: int = 1) -> int:
    """Worker cap from S2S_THREADS."""
    try:
        return max(1, int(os.environ.get("S2S_THREADS", default)))
    except ValueError:
        return default
