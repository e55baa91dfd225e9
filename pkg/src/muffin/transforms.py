"""Sparsifying analysis operators.

``SpatialAnalysis`` is a union of orthonormal periodized wavelet bases (a tight
frame with constant equal to the number of bases). ``SpectralAnalysis`` is the
orthonormal DCT-II along the band axis.
"""
from __future__ import annotations

import math
from functools import lru_cache
from typing import Sequence

import numpy as np
import pywt
import scipy.fft

DEFAULT_WAVELETS = tuple(f"db{k}" for k in range(1, 9))


def _is_pow2(n: int) -> bool:
    return n >= 2 and n & (n - 1) == 0


def default_depth(height: int, width: int) -> int:
    return max(1, int(math.log2(min(height, width))) - 2)


@lru_cache(maxsize=None)
def _analysis_matrix(wavelet: str, n: int) -> np.ndarray:
    """One periodized DWT level on length ``n`` as an orthogonal ``n x n`` matrix.

    Rows ``0..n/2`` give approximation coefficients, rows ``n/2..n`` details.
    Built column by column from pywt so the filters follow its convention.
    """
    eye = np.eye(n)
    ca, cd = pywt.dwt(eye, wavelet, mode="periodization", axis=0)
    a = np.vstack([ca, cd])
    a.flags.writeable = False
    return a


class SpatialAnalysis:
    """Union of ``B`` orthonormal 2-D wavelet bases.

    ``analyze`` maps an ``(h, w)`` image to a ``(B, h, w)`` coefficient stack;
    each plane holds a full multi-level decomposition with the coarse
    approximation in the top-left corner. ``adjoint`` sums the per-basis
    syntheses, so ``adjoint(analyze(x)) == B * x``.
    """

    def __init__(self, shape, wavelets: Sequence[str] = DEFAULT_WAVELETS, depth: int | None = None):
        h, w = (int(s) for s in shape)
        if not (_is_pow2(h) and _is_pow2(w)):
            raise ValueError(f"image dims must be powers of two >= 2, got {h}x{w}")
        if depth is None:
            depth = default_depth(h, w)
        if depth < 1 or (min(h, w) >> (depth - 1)) < 2:
            raise ValueError(f"depth {depth} too large for {h}x{w}")
        self.shape = (h, w)
        self.wavelets = tuple(wavelets)
        if not self.wavelets:
            raise ValueError("need at least one wavelet basis")
        self.depth = depth
        # per level j: stacked (B, n_j, n_j) row and column matrices
        self._rows = []
        self._cols_t = []
        for j in range(depth):
            nh, nw = h >> j, w >> j
            self._rows.append(np.stack([_analysis_matrix(wv, nh) for wv in self.wavelets]))
            self._cols_t.append(np.stack([_analysis_matrix(wv, nw).T for wv in self.wavelets]))
        self._rows_t = [np.ascontiguousarray(np.swapaxes(a, -1, -2)) for a in self._rows]
        self._cols = [np.ascontiguousarray(np.swapaxes(a, -1, -2)) for a in self._cols_t]

    @property
    def nbases(self) -> int:
        return len(self.wavelets)

    @property
    def norm_sq(self) -> float:
        return float(self.nbases)

    @property
    def coeff_shape(self):
        return (self.nbases,) + self.shape

    def analyze(self, img) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.shape:
            raise ValueError(f"image shape {img.shape} does not match transform shape {self.shape}")
        h, w = self.shape
        out = self._rows[0] @ img @ self._cols_t[0]
        for j in range(1, self.depth):
            nh, nw = h >> j, w >> j
            out[:, :nh, :nw] = self._rows[j] @ out[:, :nh, :nw] @ self._cols_t[j]
        return out

    def adjoint(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != self.coeff_shape:
            raise ValueError(f"coefficient shape {coeffs.shape} does not match {self.coeff_shape}")
        h, w = self.shape
        c = coeffs.copy()
        for j in range(self.depth - 1, 0, -1):
            nh, nw = h >> j, w >> j
            c[:, :nh, :nw] = self._rows_t[j] @ c[:, :nh, :nw] @ self._cols[j]
        return (self._rows_t[0] @ c @ self._cols[0]).sum(axis=0)

    def synthesize(self, coeffs) -> np.ndarray:
        """Per-basis inverse, returning ``(B, h, w)`` images."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        h, w = self.shape
        c = coeffs.copy()
        for j in range(self.depth - 1, 0, -1):
            nh, nw = h >> j, w >> j
            c[:, :nh, :nw] = self._rows_t[j] @ c[:, :nh, :nw] @ self._cols[j]
        return self._rows_t[0] @ c @ self._cols[0]


class SpectralAnalysis:
    """Orthonormal DCT-II of length ``L`` applied along axis 0."""

    def __init__(self, bands: int):
        if bands < 1:
            raise ValueError("bands must be >= 1")
        self.bands = int(bands)

    norm_sq = 1.0

    def _check(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.shape[0] != self.bands:
            raise ValueError(f"expected {self.bands} entries along the band axis, got {a.shape[0]}")
        return a

    def analyze(self, spectra) -> np.ndarray:
        return scipy.fft.dct(self._check(spectra), type=2, norm="ortho", axis=0)

    def adjoint(self, coeffs) -> np.ndarray:
        return scipy.fft.idct(self._check(coeffs), type=2, norm="ortho", axis=0)


def spatial_analyze(ws: SpatialAnalysis, img) -> np.ndarray:
    return ws.analyze(img)


def spatial_adjoint(ws: SpatialAnalysis, coeffs) -> np.ndarray:
    return ws.adjoint(coeffs)


def spectral_analyze(wl: SpectralAnalysis, spectrum) -> np.ndarray:
    return wl.analyze(spectrum)


def spectral_adjoint(wl: SpectralAnalysis, coeffs) -> np.ndarray:
    return wl.adjoint(coeffs)


def power_iteration(apply, adjoint, shape, iters: int = 200, seed: int = 0) -> float:
    """Estimate ``||A||^2`` by power iteration on ``A^T A``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = adjoint(apply(x))
        lam = float(np.vdot(x, y))
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        x = y / nrm
    return lam
