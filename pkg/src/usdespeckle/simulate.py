"""Convolutional B-mode simulator producing (clean, speckled) image pairs.

Pipeline per image: scatterers drawn from the target's gray levels, binned onto
a finely sampled RF grid, convolved with a tilted pulse-echo PSF, envelope
detected, averaged over tilts and finally log compressed.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np
from scipy import ndimage, signal

from .imgcore import Image, ImageError, InterpKind, resize, resize_array, save_image

SOUND_SPEED = 1.54  # mm / us


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


def _from_mapping(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class SimConfig:
    f_c: float = 7.5                  # MHz
    frac_bandwidth: float = 0.6
    lateral_sigma: float = 0.45       # mm
    tilt_angles: tuple = tuple(np.linspace(-2.0, 2.0, 9).round(6).tolist())
    n_compound: int | None = None   # defaults to len(tilt_angles)
    dynamic_range: float = 50.0       # dB
    scatterer_density: float = 20.0   # per mm^2
    field_width: float = 22.5         # mm
    field_depth: float = 25.0         # mm
    grid_w: int = 128
    grid_h: int = 128
    seed: int = 0
    samples_per_period: int = 8       # RF axial sampling = samples_per_period * f_c
    amplitude_law: str = "db"         # "db": brightness tracks gray level; "sqrt": energy ~ gray level

    def __post_init__(self):
        object.__setattr__(self, "tilt_angles", tuple(float(t) for t in self.tilt_angles))
        if self.n_compound is None:
            object.__setattr__(self, "n_compound", len(self.tilt_angles))
        if not self.f_c > 0:
            raise ConfigError("f_c must be > 0")
        if not 0 < self.frac_bandwidth <= 1:
            raise ConfigError("frac_bandwidth must be in (0, 1]")
        if not self.dynamic_range > 0:
            raise ConfigError("dynamic_range must be > 0")
        if not self.scatterer_density > 0:
            raise ConfigError("scatterer_density must be > 0")
        if not self.lateral_sigma > 0:
            raise ConfigError("lateral_sigma must be > 0")
        if len(self.tilt_angles) < 1 or self.n_compound != len(self.tilt_angles):
            raise ConfigError("n_compound must equal len(tilt_angles) >= 1")
        if any(abs(t) > 10.0 for t in self.tilt_angles):
            raise ConfigError("tilt angles must lie within [-10, 10] degrees")
        if self.grid_w < 1 or self.grid_h < 1 or self.field_width <= 0 or self.field_depth <= 0:
            raise ConfigError("grid and field dimensions must be positive")
        if self.amplitude_law not in ("db", "sqrt"):
            raise ConfigError("amplitude_law must be 'db' or 'sqrt'")
        if self.samples_per_period < 4:
            raise ConfigError("samples_per_period must be >= 4")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        if "tilt_angles" in data and "n_compound" not in data:
            data["n_compound"] = len(data["tilt_angles"])
        return _from_mapping(cls, data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tilt_angles"] = list(self.tilt_angles)
        return d

    def replace(self, **changes) -> "SimConfig":
        if "tilt_angles" in changes and "n_compound" not in changes:
            changes["n_compound"] = len(changes["tilt_angles"])
        return dataclasses.replace(self, **changes)

    @property
    def lateral_spacing(self) -> float:
        return self.field_width / self.grid_w

    @property
    def axial_spacing(self) -> float:
        """RF sample spacing in depth (two-way travel)."""
        return SOUND_SPEED / (2.0 * self.samples_per_period * self.f_c)

    @property
    def rf_rows(self) -> int:
        return max(1, int(round(self.field_depth / self.axial_spacing)))

    @property
    def pixel_spacing(self):
        return (self.field_width / self.grid_w, self.field_depth / self.grid_h)


def centered_tilts(n: int, step: float = 0.5) -> tuple:
    """``n`` steering angles spaced ``step`` degrees apart, centred on zero.

    With the default step, n = 9 spans the full [-2, 2] degree tilt range.
    """
    if n < 1:
        raise ConfigError("need at least one tilt angle")
    return tuple(round(step * (i - (n - 1) / 2.0), 9) for i in range(n))


@dataclass
class ScattererField:
    x: np.ndarray          # mm, lateral
    z: np.ndarray          # mm, depth
    amplitude: np.ndarray
    extent: tuple          # (width mm, depth mm)

    def __len__(self):
        return len(self.x)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        if not (len(self.x) == len(self.z) == len(self.amplitude)):
            raise ValueError("scatterer arrays must have equal length")
        w, d = self.extent
        if len(self.x) and (self.x.min() < 0 or self.x.max() >= w or self.z.min() < 0 or self.z.max() >= d):
            raise ValueError("scatterer positions must lie inside the extent")
        if len(self.x) and (not np.all(np.isfinite(self.amplitude)) or self.amplitude.min() < 0):
            raise ValueError("amplitudes must be finite and non-negative")

    def union(self, other: "ScattererField") -> "ScattererField":
        return ScattererField(np.concatenate([self.x, other.x]), np.concatenate([self.z, other.z]),
                              np.concatenate([self.amplitude, other.amplitude]), self.extent)


@dataclass
class RFImage:
    data: np.ndarray       # (axial samples, lateral lines)
    axial_spacing: float   # mm

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise ValueError("RF data must be finite")


# ---------------------------------------------------------------- pipeline steps

def make_scatterers(target: Image, cfg: SimConfig) -> ScattererField:
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.scatterer_density * cfg.field_width * cfg.field_depth))
    x = rng.uniform(0.0, cfg.field_width, n)
    z = rng.uniform(0.0, cfg.field_depth, n)
    r = rng.rayleigh(1.0, n)
    # half-pixel aligned bilinear lookup into the target
    col = x / cfg.field_width * target.width - 0.5
    row = z / cfg.field_depth * target.height - 0.5
    inten = ndimage.map_coordinates(target.pixels, [row, col], order=1, mode="nearest")
    amp = echogenicity(inten, cfg) * r
    # guard the open interval against float rounding at the far edge
    x = np.minimum(x, np.nextafter(cfg.field_width, 0))
    z = np.minimum(z, np.nextafter(cfg.field_depth, 0))
    return ScattererField(x, z, amp, (cfg.field_width, cfg.field_depth))


def echogenicity(intensity: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Mean echo amplitude for target gray levels in [0, 1].

    The "db" law places gray level I at I * dynamic_range dB above the display
    floor, so log compression maps the target back onto its own gray scale.
    Zero intensity is anechoic under both laws.
    """
    inten = np.clip(np.asarray(intensity, dtype=np.float64), 0.0, 1.0)
    if cfg.amplitude_law == "sqrt":
        return np.sqrt(inten)
    amp = 10.0 ** (cfg.dynamic_range * (inten - 1.0) / 20.0)
    return np.where(inten > 0.0, amp, 0.0)


def pulse_sigma_t(cfg: SimConfig) -> float:
    """Std of the Gaussian pulse envelope in microseconds from the -6 dB bandwidth."""
    bandwidth = cfg.frac_bandwidth * cfg.f_c
    return math.sqrt(2.0 * math.log(2.0)) / (math.pi * bandwidth)


def render_psf(cfg: SimConfig, tilt: float) -> np.ndarray:
    """Pulse-echo PSF sampled on the RF grid, rotated by ``tilt`` degrees.

    Rows are depth samples (``cfg.axial_spacing``), columns lateral lines
    (``cfg.lateral_spacing``). Unit energy.
    """
    if abs(tilt) > 10.0:
        raise ConfigError(f"tilt {tilt} outside [-10, 10] degrees")
    sigma_z = SOUND_SPEED * pulse_sigma_t(cfg) / 2.0
    sigma_x = cfg.lateral_sigma
    th = math.radians(tilt)
    c, s = math.cos(th), math.sin(th)
    hx, hz = 4.0 * sigma_x, 4.0 * sigma_z
    half_x = abs(c) * hx + abs(s) * hz
    half_z = abs(s) * hx + abs(c) * hz
    dx, dz = cfg.lateral_spacing, cfg.axial_spacing
    nx = int(math.ceil(half_x / dx))
    nz = int(math.ceil(half_z / dz))
    x = np.arange(-nx, nx + 1) * dx
    z = np.arange(-nz, nz + 1) * dz
    X, Z = np.meshgrid(x, z)
    lat = X * c - Z * s
    ax = X * s + Z * c
    k_axial = 2.0 * cfg.f_c / SOUND_SPEED  # cycles per mm of depth (two-way)
    kernel = (np.exp(-lat ** 2 / (2 * sigma_x ** 2)) * np.exp(-ax ** 2 / (2 * sigma_z ** 2))
              * np.cos(2 * math.pi * k_axial * ax))
    return kernel / math.sqrt(float(np.sum(kernel ** 2)))


def bin_scatterers(field: ScattererField, cfg: SimConfig) -> np.ndarray:
    rows, cols = cfg.rf_rows, cfg.grid_w
    grid = np.zeros((rows, cols))
    if len(field) == 0:
        return grid
    ix = np.clip((field.x / cfg.lateral_spacing).astype(int), 0, cols - 1)
    iz = np.clip((field.z / cfg.axial_spacing).astype(int), 0, rows - 1)
    flat = np.bincount(iz * cols + ix, weights=field.amplitude, minlength=rows * cols)
    return flat.reshape(rows, cols)


def simulate_rf(field: ScattererField, psf: np.ndarray, cfg: SimConfig) -> RFImage:
    grid = bin_scatterers(field, cfg)
    if psf.shape[0] > grid.shape[0] or psf.shape[1] > grid.shape[1]:
        raise ConfigError(f"RF grid {grid.shape} too small for PSF support {psf.shape}")
    if not np.any(grid):
        return RFImage(np.zeros_like(grid), cfg.axial_spacing)
    rf = signal.fftconvolve(grid, psf, mode="same")
    return RFImage(rf, cfg.axial_spacing)


def envelope(rf) -> np.ndarray:
    """Analytic-signal magnitude along depth for every lateral line."""
    data = rf.data if isinstance(rf, RFImage) else np.asarray(rf, dtype=np.float64)
    if data.shape[0] < 4:
        raise ValueError("axial length must be >= 4 samples for envelope detection")
    if not np.any(data):
        return np.zeros_like(data, dtype=np.float64)
    return np.abs(signal.hilbert(data, axis=0))


def log_compress(env, dynamic_range: float) -> Image:
    if not dynamic_range > 0:
        raise ConfigError("dynamic_range must be > 0")
    env = np.asarray(env, dtype=np.float64)
    peak = float(env.max()) if env.size else 0.0
    if peak <= 0.0:
        return Image(np.zeros_like(env))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return Image(np.clip(1.0 + db / dynamic_range, 0.0, 1.0))


def compound(images: Sequence) -> "Image | np.ndarray":
    """Pixel-wise mean of equally sized images (or raw arrays)."""
    if len(images) == 0:
        raise ValueError("compound needs at least one image")
    as_image = isinstance(images[0], Image)
    arrs = [im.pixels if isinstance(im, Image) else np.asarray(im, dtype=np.float64) for im in images]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise ImageError("dimension mismatch in compound")
    acc = np.zeros_like(arrs[0])
    for a in arrs:
        acc += a
    mean = acc / len(arrs)
    return Image(np.clip(mean, 0.0, 1.0), images[0].spacing) if as_image else mean


def tilt_envelope(field: ScattererField, cfg: SimConfig, tilt: float) -> np.ndarray:
    """Envelope for one tilt, area-averaged from RF depth sampling to ``grid_h`` rows."""
    rf = simulate_rf(field, render_psf(cfg, tilt), cfg)
    env = envelope(rf)
    return resize_array(env, cfg.grid_w, cfg.grid_h, InterpKind.AREA)


def simulate_bmode(target: Image, cfg: SimConfig) -> Image:
    field = make_scatterers(target, cfg)
    envs = [tilt_envelope(field, cfg, t) for t in cfg.tilt_angles]
    img = log_compress(compound(envs), cfg.dynamic_range)
    return Image(img.pixels, cfg.pixel_spacing)


def clean_target(target: Image, cfg: SimConfig) -> Image:
    """Ground truth on the B-mode grid: the target bilinearly resampled."""
    out = resize(target, cfg.grid_w, cfg.grid_h, InterpKind.BILINEAR)
    return Image(out.pixels, cfg.pixel_spacing)


# ------------------------------------------------------------------- phantoms

def _ellipse(shape, cx, cz, ax, az, angle):
    h, w = shape
    zz, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    c, s = math.cos(angle), math.sin(angle)
    u = (xx - cx) * c + (zz - cz) * s
    v = -(xx - cx) * s + (zz - cz) * c
    return (u / ax) ** 2 + (v / az) ** 2 <= 1.0


def random_phantom(rng: np.random.Generator, size: int = 128, texture: float = 0.08) -> Image:
    """Tissue-like target: layered background, echogenic blobs, dark vessels and
    a smooth random echogenicity texture of standard deviation ``texture``."""
    h = w = size
    zz = np.linspace(0.0, 1.0, h)[:, None]
    img = np.full((h, w), rng.uniform(0.35, 0.65)) + rng.uniform(-0.15, 0.15) * (zz - 0.5)
    # a tilted tissue layer boundary
    if rng.random() < 0.7:
        zb = rng.uniform(0.2, 0.5) * h + rng.uniform(-0.15, 0.15) * np.arange(w)[None, :]
        img = np.where(np.arange(h)[:, None] < zb, rng.uniform(0.15, 0.9), img)
    for _ in range(rng.integers(4, 9)):
        m = _ellipse((h, w), rng.uniform(0.1, 0.9) * w, rng.uniform(0.1, 0.9) * h,
                     rng.uniform(0.03, 0.15) * w, rng.uniform(0.03, 0.15) * h, rng.uniform(0, math.pi))
        img = np.where(m, rng.uniform(0.05, 1.0), img)
    for _ in range(rng.integers(0, 3)):
        m = _ellipse((h, w), rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h,
                     rng.uniform(0.04, 0.12) * w, rng.uniform(0.04, 0.10) * h, 0.0)
        img = np.where(m, rng.uniform(0.0, 0.03), img)
    if texture > 0:
        field = ndimage.gaussian_filter(rng.standard_normal((h, w)), rng.uniform(3.0, 6.0), mode="wrap")
        img = img + texture * field / field.std()
    img = ndimage.gaussian_filter(img, 1.0, mode="mirror")
    return Image(np.clip(img, 0.0, 1.0))


def vessel_phantom(size: int = 128, center=None, radius: float = 20.0,
                   background: float = 0.5, lumen: float = 0.0) -> Image:
    """Dark disk (vessel lumen) on uniform tissue."""
    cx, cz = center if center is not None else ((size - 1) / 2, (size - 1) / 2)
    zz, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    disk = (xx - cx) ** 2 + (zz - cz) ** 2 <= radius ** 2
    return Image(np.where(disk, lumen, background))


def disk_mask(size: int, center, radius: float) -> np.ndarray:
    cx, cz = center
    zz, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return ((xx - cx) ** 2 + (zz - cz) ** 2 <= radius ** 2).astype(np.uint8)


# ----------------------------------------------------------- dataset writing

def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(targets: List[Image], cfg: SimConfig, out_dir, seed: int,
                  names: List[str] | None = None, pair_seed_offset: int | None = None,
                  write_manifest: bool = True) -> dict:
    """Simulate every target and write clean_%04d.png / noisy_%04d.png plus manifest.

    Image ``i`` uses seed ``seed + i``. When ``pair_seed_offset`` is given an
    independent second realization ``noisy2_%04d.png`` is written with seed
    ``seed + i + pair_seed_offset`` (for the noisy-pair training mode).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i, target in enumerate(targets):
        c = cfg.replace(seed=seed + i)
        clean = clean_target(target, c)
        noisy = simulate_bmode(target, c)
        save_image(clean, out / f"clean_{i:04d}.png")
        save_image(noisy, out / f"noisy_{i:04d}.png")
        rec = {"index": i, "seed": seed + i,
               "source": names[i] if names else None,
               "clean": f"clean_{i:04d}.png", "noisy": f"noisy_{i:04d}.png"}
        if pair_seed_offset is not None:
            s2 = seed + i + pair_seed_offset
            save_image(simulate_bmode(target, cfg.replace(seed=s2)), out / f"noisy2_{i:04d}.png")
            rec.update(noisy2=f"noisy2_{i:04d}.png", seed2=s2)
        records.append(rec)
    hashes = {}
    for rec in records:
        for key in ("clean", "noisy", "noisy2"):
            if key in rec:
                hashes[rec[key]] = file_sha256(out / rec[key])
    manifest = {"config": cfg.to_dict(), "base_seed": seed, "images": records, "sha256": hashes}
    if write_manifest:
        (out / "dataset_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
