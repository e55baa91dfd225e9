"""Synthetic multi-frequency observations.

PSFs come from random Hermitian-symmetric Fourier masks with a radial density
profile, standing in for an interferometer's uv coverage. Sky cubes follow a
per-pixel power law whose spectral index mixes a smooth Gaussian field with the
reference image.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .cube import ImageCube, NoiseModel
from .operators import PsfSet

SPECTRAL_A = 0.3
SPECTRAL_B = 0.5
NOISELESS_VARIANCE = np.finfo(np.float64).tiny


def wavelength_grid(bands: int, lam_min: float = 1.0) -> tuple:
    """``bands`` wavelengths spread uniformly over ``[lam_min, 2*lam_min]``."""
    if bands == 1:
        return (float(lam_min),)
    return tuple(float(w) for w in np.linspace(lam_min, 2 * lam_min, bands))


def _check_pow2(h, w):
    for n in (h, w):
        if n < 2 or n & (n - 1):
            raise ValueError(f"dims must be powers of two >= 2, got {h}x{w}")


def _symmetric_uniform(rng, h, w):
    """Uniform field with ``r[k] == r[-k]`` (indices mod h, w)."""
    r = rng.random((h, w))
    flipped = np.roll(r[::-1, ::-1], 1, axis=(0, 1))
    return np.minimum(r, flipped)


def uv_mask(shape, fill: float, rng_field: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Binary Fourier-plane mask keeping a ``fill`` fraction of frequencies.

    A frequency ``k`` is kept when ``rng_field[k] < alpha * d(|k| * scale)``
    with the radial density ``d(r) = 1 / (1 + (r / r0)^2)``; ``alpha`` is
    bisected to reach the requested fill. ``scale > 1`` pushes coverage
    outward relative to the grid. DC is always kept.
    """
    h, w = shape
    if fill == 1.0:
        return np.ones(shape)
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    r = np.hypot(ky, kx) / scale
    dens = 1.0 / (1.0 + (r / 0.08) ** 2)
    target = fill * h * w
    lo, hi = 0.0, 1.0 / dens.min()
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.count_nonzero(rng_field < mid * dens) < target:
            lo = mid
        else:
            hi = mid
    mask = (rng_field < hi * dens).astype(np.float64)
    mask[0, 0] = 1.0
    return mask


def make_psf_cube(shape, bands: int, fill: float = 0.15, seed: int = 0,
                  wavelengths=None) -> ImageCube:
    """PSF per band, peak at pixel ``(0, 0)`` normalized to 1."""
    h, w = (int(s) for s in shape)
    _check_pow2(h, w)
    if not 0 < fill <= 1:
        raise ValueError(f"fill fraction must lie in (0, 1], got {fill}")
    wavelengths = tuple(wavelengths) if wavelengths is not None else wavelength_grid(bands)
    rng = np.random.default_rng(seed)
    field = _symmetric_uniform(rng, h, w)
    planes = []
    for lam in wavelengths:
        # fixed baselines cover larger |k| at shorter wavelengths
        mask = uv_mask((h, w), fill, field, scale=wavelengths[0] / lam)
        psf = np.fft.ifft2(mask)
        if np.abs(psf.imag).max() > 1e-12:
            raise AssertionError("uv mask lost Hermitian symmetry")
        psf = psf.real
        planes.append(psf / psf[0, 0])
    return ImageCube(np.stack(planes), wavelengths)


def gaussian_field(shape, corr_len: float, seed: int) -> np.ndarray:
    """Periodic smooth Gaussian field, standardized to zero mean and unit variance."""
    h, w = shape
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(shape)
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    g = np.exp(-2 * (math.pi * corr_len) ** 2 * (ky**2 + kx**2))
    f = np.fft.ifft2(np.fft.fft2(white) * g).real
    f -= f.mean()
    sd = f.std()
    return f / sd if sd > 0 else f


def reference_image(shape, seed: int = 0, peak: float = 1.0, blobs: int = 6, points: int = 4) -> np.ndarray:
    """Nonnegative test sky: a few elliptical Gaussian blobs plus point sources."""
    h, w = shape
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros(shape)
    for _ in range(blobs):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        sy, sx = rng.uniform(0.03, 0.12) * h, rng.uniform(0.03, 0.12) * w
        th = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        a = (dx * np.cos(th) + dy * np.sin(th)) / sx
        b = (-dx * np.sin(th) + dy * np.cos(th)) / sy
        img += rng.uniform(0.3, 1.0) * np.exp(-0.5 * (a * a + b * b))
    for _ in range(points):
        img[rng.integers(h), rng.integers(w)] += rng.uniform(0.5, 1.0)
    return peak * img / img.max()


@dataclass(frozen=True, eq=False)
class SkyModel:
    reference: np.ndarray
    spectral_index: np.ndarray
    ref_band: int = 0

    def __post_init__(self):
        if np.any(self.reference < 0):
            raise ValueError("reference image must be nonnegative")
        if not np.all(np.isfinite(self.spectral_index)):
            raise ValueError("spectral index must be finite")
        if self.reference.shape != self.spectral_index.shape:
            raise ValueError("reference and spectral-index maps differ in shape")

    @classmethod
    def synthetic(cls, shape, seed: int = 0, peak: float = 1.0, a: float = SPECTRAL_A,
                  b: float = SPECTRAL_B) -> "SkyModel":
        ref = reference_image(shape, seed=seed, peak=peak)
        g = gaussian_field(shape, min(shape) / 8, seed + 1)
        return cls(ref, a * g + b * ref / ref.max())


def make_sky_cube(sky: SkyModel, bands: int, wavelengths=None) -> ImageCube:
    """``x_l(n) = x_ref(n) * (lam_ref / lam_l) ** beta(n)``."""
    wavelengths = tuple(wavelengths) if wavelengths is not None else wavelength_grid(bands)
    if len(wavelengths) != bands:
        raise ValueError(f"{len(wavelengths)} wavelengths for {bands} bands")
    if any(lam <= 0 for lam in wavelengths):
        raise ValueError("wavelengths must be positive")
    lam_ref = wavelengths[sky.ref_band]
    planes = [sky.reference * (lam_ref / lam) ** sky.spectral_index for lam in wavelengths]
    return ImageCube(np.stack(planes), wavelengths)


def convolve_cube(sky: ImageCube, psfs) -> ImageCube:
    if not isinstance(psfs, PsfSet):
        psfs = PsfSet(psfs)
    return ImageCube(psfs.apply(sky), sky.wavelengths)


def noise_variance_for_snr(clean: ImageCube, snr_db: float) -> float:
    energy = float(np.sum(clean.data**2))
    if energy == 0:
        raise ValueError("cannot calibrate noise on a zero-energy cube")
    return energy / (clean.data.size * 10 ** (snr_db / 10))


def add_noise(dirty: ImageCube, snr_db: float, seed: int):
    """Add white Gaussian noise at ``snr_db``; returns ``(noisy, NoiseModel)``.

    ``snr_db = inf`` adds nothing and reports a tiny positive variance.
    """
    if not np.any(dirty.data):
        raise ValueError("cannot calibrate noise on a zero-energy cube")
    if math.isinf(snr_db) and snr_db > 0:
        warnings.warn("noiseless simulation: variance clamped to a tiny positive value", stacklevel=2)
        return dirty, NoiseModel.uniform(NOISELESS_VARIANCE, dirty.bands)
    var = noise_variance_for_snr(dirty, snr_db)
    noise = np.random.default_rng(seed).standard_normal(dirty.data.shape) * math.sqrt(var)
    return ImageCube(dirty.data + noise, dirty.wavelengths), NoiseModel.uniform(var, dirty.bands)


@dataclass(frozen=True, eq=False)
class Dataset:
    sky: ImageCube
    psf: ImageCube
    clean: ImageCube
    dirty: ImageCube
    noise: NoiseModel
    manifest: dict


def simulate(shape=(32, 32), bands: int = 4, fill: float = 0.15, snr_db: float = 10.0,
             seed: int = 0, peak: float = 1.0) -> Dataset:
    """Full pipeline: sky cube, PSF cube, noiseless and noisy dirty cubes."""
    wl = wavelength_grid(bands)
    psf = make_psf_cube(shape, bands, fill=fill, seed=seed, wavelengths=wl)
    sky = make_sky_cube(SkyModel.synthetic(shape, seed=seed + 100, peak=peak), bands, wl)
    clean = convolve_cube(sky, psf)
    dirty, noise = add_noise(clean, snr_db, seed + 200)
    manifest = {
        "shape": list(shape), "bands": bands, "fill": fill, "snr_db": snr_db, "peak": peak,
        "seeds": {"psf": seed, "sky": seed + 100, "noise": seed + 200},
        "wavelengths": list(wl), "variances": list(noise.variances),
    }
    return Dataset(sky, psf, clean, dirty, noise, manifest)
