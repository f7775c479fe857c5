"""Dense real-valued arrays and the FMAP on-disk tensor container.

Feature maps are indexed ``(batch, channel, x, y)`` with ``x`` running along
the width.  In memory they are float64; on disk they are little-endian f32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"FMAP"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIBI4I")


class InvalidDimsError(ValueError):
    """A tensor was requested or built with an empty axis or wrong rank."""


class DomainError(ValueError):
    """A scalar argument lies outside the domain of a formula."""


class ShapeError(ValueError):
    """Two operands that must agree in shape do not."""


class TensorFormatError(ValueError):
    """An FMAP file is malformed.  ``offset`` is the byte where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FeatureMap:
    """Immutable rank-4 float64 array with dims (batch, channels, width, height)."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 4:
            raise InvalidDimsError(f"feature map must be rank 4, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise InvalidDimsError(f"all dims must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("feature map contains NaN or Inf")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "FeatureMap":
        # Trusted constructor for kernel outputs that are already validated by construction.
        obj = cls.__new__(cls)
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        obj._data = arr
        return obj

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(int(d) for d in self._data.shape)  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return int(self._data.size)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, FeatureMap):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.dims, self._data.tobytes()))

    def __repr__(self):
        return f"FeatureMap(dims={self.dims})"


def as_array(m) -> np.ndarray:
    """Float64 view of a FeatureMap or array-like, checked to be rank 4."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 4:
        raise InvalidDimsError(f"expected rank-4 data, got shape {arr.shape}")
    return arr


def new_feature_map(dims: Sequence[int], fill: float = 0.0) -> FeatureMap:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or min(dims) < 1:
        raise InvalidDimsError(f"dims must be four counts >= 1, got {dims}")
    return FeatureMap._wrap(np.full(dims, float(fill)))


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps ordered from the largest spatial extent downwards."""

    levels: tuple[FeatureMap, ...]

    def __init__(self, levels: Iterable):
        levels = tuple(m if isinstance(m, FeatureMap) else FeatureMap(m) for m in levels)
        if not levels:
            raise InvalidDimsError("a pyramid needs at least one level")
        b, c = levels[0].dims[:2]
        for k, m in enumerate(levels):
            if m.dims[:2] != (b, c):
                raise ShapeError(f"level {k} has batch/channels {m.dims[:2]}, expected {(b, c)}")
            if k and (m.dims[2] > levels[k - 1].dims[2] or m.dims[3] > levels[k - 1].dims[3]):
                raise ShapeError(f"level {k} is spatially larger than level {k - 1}")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k):
        return self.levels[k]

    def __iter__(self):
        return iter(self.levels)


@dataclass(frozen=True)
class ImageRGB:
    """Three-channel image stored as ``pixels[channel, x, y]`` with values in [0, 1].

    ``y = 0`` is the top row.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True)
        if px.ndim != 3 or px.shape[0] != 3:
            raise InvalidDimsError(f"image must have shape (3, width, height), got {px.shape}")
        if px.shape[1] < 1 or px.shape[2] < 1:
            raise InvalidDimsError(f"image must be non-empty, got {px.shape}")
        if not (np.all(px >= 0.0) and np.all(px <= 1.0)):
            raise ValueError("image values must lie in [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[2])

    def __eq__(self, other):
        if not isinstance(other, ImageRGB):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash(self.pixels.tobytes())


def encode_tensor(data) -> bytes:
    arr = as_array(data)
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, 4, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    """Parse FMAP bytes into a float32 array of shape (b, c, w, h)."""
    if len(buf) < 4:
        raise TensorFormatError(f"file too short for magic ({len(buf)} bytes)", 0)
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise TensorFormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(buf)}", len(buf)
        )
    _, version, dtype, ndims, *dims = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if dtype != DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype}", 8)
    if ndims != 4:
        raise TensorFormatError(f"ndims must be 4, got {ndims}", 9)
    if min(dims) < 1:
        raise TensorFormatError(f"zero dimension in {tuple(dims)}", 13)
    expected = int(np.prod(dims)) * 4
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise TensorFormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}",
            _HEADER.size + min(actual, expected),
        )
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(dims)


def write_tensor_file(m, path) -> None:
    Path(path).write_bytes(encode_tensor(m))


def read_tensor_file(path) -> FeatureMap:
    arr = decode_tensor(Path(path).read_bytes())
    return FeatureMap(arr.astype(np.float64))
