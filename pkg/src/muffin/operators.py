"""Per-band circular convolution by the PSF, and its adjoint."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .cube import ImageCube


class BandOperator:
    """Circular convolution ``H`` with a single-band PSF.

    The PSF is used as given, with its origin at pixel ``(0, 0)``. Periodic
    boundaries make ``H^T H`` diagonal in the Fourier domain, so the adjoint
    is exact and ``||H||^2 = max |FFT(psf)|^2``.
    """

    def __init__(self, psf):
        psf = np.array(psf, dtype=np.float64, copy=True)
        if psf.ndim != 2:
            raise ValueError(f"psf must be a 2-D plane, got shape {psf.shape}")
        psf.flags.writeable = False
        self.psf = psf
        self.shape = psf.shape
        self.transfer = np.fft.rfft2(psf)
        self.transfer.flags.writeable = False
        self._conj = np.conj(self.transfer)
        self._gram = np.abs(self.transfer) ** 2
        self.norm_sq = float(self._gram.max())

    def _check(self, img):
        img = np.asarray(img, dtype=np.float64)
        if img.shape != self.shape:
            raise ValueError(f"image shape {img.shape} does not match psf shape {self.shape}")
        return img

    def apply(self, img) -> np.ndarray:
        img = self._check(img)
        return np.fft.irfft2(np.fft.rfft2(img) * self.transfer, s=self.shape)

    def adjoint(self, img) -> np.ndarray:
        img = self._check(img)
        return np.fft.irfft2(np.fft.rfft2(img) * self._conj, s=self.shape)

    def gram(self, img) -> np.ndarray:
        """``H^T H img`` in a single FFT round trip."""
        img = self._check(img)
        return np.fft.irfft2(np.fft.rfft2(img) * self._gram, s=self.shape)

    def gradient(self, x, y) -> np.ndarray:
        """Gradient of ``0.5 * ||y - H x||^2``, i.e. ``H^T (H x - y)``."""
        x = self._check(x)
        y = self._check(y)
        return self.adjoint(self.apply(x) - y)


class PsfSet:
    """One :class:`BandOperator` per band, all on the same grid."""

    def __init__(self, psfs):
        if isinstance(psfs, ImageCube):
            planes = psfs.data
        else:
            planes = [np.asarray(p, dtype=np.float64) for p in psfs]
        ops = [BandOperator(p) for p in planes]
        if not ops:
            raise ValueError("PsfSet needs at least one band")
        shapes = {op.shape for op in ops}
        if len(shapes) != 1:
            raise ValueError(f"PSF planes disagree on grid shape: {sorted(shapes)}")
        self.ops: Sequence[BandOperator] = tuple(ops)
        self.shape = ops[0].shape

    def __len__(self):
        return len(self.ops)

    def __getitem__(self, band):
        return self.ops[band]

    def __iter__(self):
        return iter(self.ops)

    @property
    def beta(self) -> float:
        """``max_l ||H_l||^2``, the Lipschitz constant of the data-fit gradient."""
        return max(op.norm_sq for op in self.ops)

    def apply(self, cube) -> np.ndarray:
        data = cube.data if isinstance(cube, ImageCube) else np.asarray(cube)
        return np.stack([op.apply(p) for op, p in zip(self.ops, data)])

    def adjoint(self, cube) -> np.ndarray:
        data = cube.data if isinstance(cube, ImageCube) else np.asarray(cube)
        return np.stack([op.adjoint(p) for op, p in zip(self.ops, data)])
