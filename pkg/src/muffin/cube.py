"""Spectral image cubes and their on-disk format.

A cube file is one UTF-8 JSON header line followed by the raw payload::

    {"w":W,"h":H,"l":L,"dtype":"f64le","wavelengths":[...]}\\n
    <W*H*L little-endian float64, plane-major>

Plane-major means band ``l`` occupies the contiguous block ``l*N .. (l+1)*N``
with ``N = W*H`` and pixels stored row by row.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DTYPE_TAG = "f64le"


class CubeError(Exception):
    """Base class for cube validation and I/O errors."""

    code = "cube"


class CubeHeaderError(CubeError):
    code = "header"


class CubeSizeError(CubeError):
    code = "size"


class CubeValueError(CubeError):
    code = "non-finite"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ImageCube:
    """Real-valued ``(bands, height, width)`` cube.

    The array is copied on construction and made read-only, so instances can
    be shared between threads.
    """

    data: np.ndarray
    wavelengths: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise CubeSizeError(f"cube data must be 3-D (bands, h, w), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise CubeValueError("cube contains NaN or Inf")
        object.__setattr__(self, "data", _frozen(data))
        wl = tuple(float(w) for w in self.wavelengths)
        if wl and len(wl) != data.shape[0]:
            raise CubeSizeError(f"{len(wl)} wavelengths for {data.shape[0]} bands")
        object.__setattr__(self, "wavelengths", wl)

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def npix(self) -> int:
        return self.height * self.width

    def __eq__(self, other):
        if not isinstance(other, ImageCube):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.wavelengths == other.wavelengths
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None

    def spectrum(self, n: int) -> np.ndarray:
        """Spectrum of flat pixel index ``n`` (one row of X)."""
        return self.data.reshape(self.bands, -1)[:, n]


@dataclass(frozen=True)
class NoiseModel:
    """Per-band Gaussian noise variances."""

    variances: tuple

    def __post_init__(self):
        v = tuple(float(s) for s in self.variances)
        if not v or any(not np.isfinite(s) or s <= 0 for s in v):
            raise ValueError(f"noise variances must be finite and > 0, got {v}")
        object.__setattr__(self, "variances", v)

    @classmethod
    def uniform(cls, variance: float, bands: int) -> "NoiseModel":
        return cls((variance,) * bands)

    def __len__(self):
        return len(self.variances)


def _header(cube: ImageCube) -> bytes:
    head = {
        "w": cube.width,
        "h": cube.height,
        "l": cube.bands,
        "dtype": DTYPE_TAG,
        "wavelengths": list(cube.wavelengths),
    }
    return json.dumps(head, separators=(",", ":")).encode("utf-8") + b"\n"


def cube_to_bytes(cube: ImageCube) -> bytes:
    if not np.all(np.isfinite(cube.data)):
        raise CubeValueError("refusing to serialize a cube with NaN or Inf")
    return _header(cube) + cube.data.astype("<f8", copy=False).tobytes(order="C")


def cube_from_bytes(raw: bytes) -> ImageCube:
    nl = raw.find(b"\n")
    if nl < 0:
        raise CubeHeaderError("missing header terminator")
    try:
        head = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CubeHeaderError(f"header is not valid JSON: {exc}") from None
    if not isinstance(head, dict):
        raise CubeHeaderError("header must be a JSON object")
    try:
        w, h, l = int(head["w"]), int(head["h"]), int(head["l"])
        dtype = head["dtype"]
        wavelengths = head.get("wavelengths", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise CubeHeaderError(f"bad header field: {exc}") from None
    if dtype != DTYPE_TAG:
        raise CubeHeaderError(f"unsupported dtype tag {dtype!r}")
    if min(w, h, l) < 1:
        raise CubeHeaderError(f"non-positive dimensions w={w} h={h} l={l}")
    payload = raw[nl + 1:]
    expected = w * h * l * 8
    if len(payload) != expected:
        raise CubeSizeError(
            f"header claims {w}x{h}x{l} ({expected} bytes), payload has {len(payload)} bytes"
        )
    data = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(l, h, w)
    if not np.all(np.isfinite(data)):
        raise CubeValueError("payload contains NaN or Inf")
    return ImageCube(data, tuple(wavelengths))


def cube_write(cube: ImageCube, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(cube_to_bytes(cube))


def cube_read(path: str | os.PathLike) -> ImageCube:
    with open(path, "rb") as fh:
        return cube_from_bytes(fh.read())


def as_cube(data, wavelengths: Sequence[float] = ()) -> ImageCube:
    if isinstance(data, ImageCube):
        return data
    return ImageCube(np.asarray(data, dtype=np.float64), tuple(wavelengths))
