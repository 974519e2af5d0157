"""Volume containers, raw sidecar I/O and percentile clipping.

Arrays are stored C-contiguous with shape ``(nz, ny, nx)`` so that the flat
ravel order is x-fastest, matching the on-disk layout.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

NUM_CLASSES = 5
CLASS_NAMES = ("background", "kidney", "tumor", "artery", "vein")

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class VolumeFormatError(ValueError):
    """Header or payload does not describe a valid volume."""


@dataclass(frozen=True)
class VolumeGeometry:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise ValueError("dims and spacing must have three entries")
        if any(n <= 0 for n in dims):
            raise ValueError(f"dims must be positive, got {dims}")
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be finite and positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape ``(nz, ny, nx)``."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def spacing_zyx(self) -> tuple[float, float, float]:
        sx, sy, sz = self.spacing
        return (sz, sy, sx)

    @classmethod
    def from_shape(cls, shape, spacing=(1.0, 1.0, 1.0)) -> "VolumeGeometry":
        nz, ny, nx = shape
        return cls((nx, ny, nz), spacing)


def _check_shape(geometry: VolumeGeometry, data: np.ndarray) -> np.ndarray:
    if data.size != geometry.size:
        raise ValueError(
            f"data has {data.size} values, geometry {geometry.dims} needs {geometry.size}"
        )
    return np.ascontiguousarray(data.reshape(geometry.shape))


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """Real-valued intensity volume, float32 storage."""

    geometry: VolumeGeometry
    data: np.ndarray

    def __post_init__(self):
        data = _check_shape(self.geometry, np.asarray(self.data, dtype=np.float32))
        if not np.isfinite(data).all():
            raise ValueError("scalar volume contains NaN or Inf")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0)) -> "ScalarVolume":
        array = np.asarray(array)
        return cls(VolumeGeometry.from_shape(array.shape, spacing), array)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer class-ID volume, uint8 storage."""

    geometry: VolumeGeometry
    data: np.ndarray
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.size and (raw.min() < 0 or raw.max() >= self.num_classes):
            raise ValueError(
                f"label values must lie in [0, {self.num_classes}), "
                f"got range [{raw.min()}, {raw.max()}]"
            )
        data = _check_shape(self.geometry, raw.astype(np.uint8))
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array, spacing=(1.0, 1.0, 1.0), num_classes=NUM_CLASSES) -> "LabelVolume":
        array = np.asarray(array)
        return cls(VolumeGeometry.from_shape(array.shape, spacing), array, num_classes)

    def mask(self, class_id: int) -> np.ndarray:
        return self.data == class_id


Volume = Union[ScalarVolume, LabelVolume]


def _paths(path) -> tuple[Path, Path]:
    path = os.fspath(path)
    if not path:
        raise OSError("empty volume path")
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")


def save_volume(vol: Volume, path) -> None:
    """Write ``<path>.json`` header and ``<path>.raw`` little-endian payload."""
    header_path, raw_path = _paths(path)
    dtype = "u8" if isinstance(vol, LabelVolume) else "f32"
    header = {
        "dims": list(vol.geometry.dims),
        "spacing_mm": list(vol.geometry.spacing),
        "dtype": dtype,
        "order": "x-fastest",
    }
    payload = np.ascontiguousarray(vol.data, dtype=_DTYPES[dtype]).tobytes()
    raw_path.write_bytes(payload)
    header_path.write_text(json.dumps(header) + "\n")


def load_volume(path, num_classes: int = NUM_CLASSES) -> Volume:
    """Read a volume written by :func:`save_volume`.

    ``path`` may name the header, the payload, or the common stem.
    """
    header_path, raw_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"{header_path}: corrupt header ({exc})") from exc
    if not isinstance(header, dict):
        raise VolumeFormatError(f"{header_path}: header must be a JSON object")
    if header.get("channels", 1) != 1:
        raise VolumeFormatError(f"{header_path}: multi-channel field, use load_field")
    missing = {"dims", "spacing_mm", "dtype", "order"} - header.keys()
    if missing:
        raise VolumeFormatError(f"{header_path}: missing keys {sorted(missing)}")
    if header["dtype"] not in _DTYPES:
        raise VolumeFormatError(f"{header_path}: unknown dtype {header['dtype']!r}")
    if header["order"] != "x-fastest":
        raise VolumeFormatError(f"{header_path}: unsupported order {header['order']!r}")
    try:
        geometry = VolumeGeometry(tuple(header["dims"]), tuple(header["spacing_mm"]))
    except (TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{header_path}: {exc}") from exc

    dtype = _DTYPES[header["dtype"]]
    payload = raw_path.read_bytes()
    expected = geometry.size * dtype.itemsize
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{raw_path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(geometry.shape)
    try:
        if header["dtype"] == "u8":
            return LabelVolume(geometry, data, num_classes)
        return ScalarVolume(geometry, data)
    except ValueError as exc:
        raise VolumeFormatError(f"{raw_path}: {exc}") from exc


def save_field(field: np.ndarray, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a ``(C, nz, ny, nx)`` float field, class-major, as f32.

    The header gains a ``"channels": C`` key; payload length is
    ``C * nx * ny * nz * 4`` bytes.
    """
    field = np.asarray(field)
    if field.ndim != 4:
        raise ValueError(f"field must be 4D (C, nz, ny, nx), got shape {field.shape}")
    if not np.isfinite(field).all():
        raise ValueError("field contains NaN or Inf")
    header_path, raw_path = _paths(path)
    geometry = VolumeGeometry.from_shape(field.shape[1:], spacing)
    header = {
        "dims": list(geometry.dims),
        "spacing_mm": list(geometry.spacing),
        "dtype": "f32",
        "order": "x-fastest",
        "channels": int(field.shape[0]),
    }
    raw_path.write_bytes(np.ascontiguousarray(field, dtype="<f4").tobytes())
    header_path.write_text(json.dumps(header) + "\n")


def load_field(path) -> tuple[np.ndarray, VolumeGeometry]:
    """Read a field written by :func:`save_field` as float64 ``(C, nz, ny, nx)``."""
    header_path, raw_path = _paths(path)
    try:
        header = json.loads(header_path.read_text())
        geometry = VolumeGeometry(tuple(header["dims"]), tuple(header["spacing_mm"]))
        channels = int(header.get("channels", 1))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise VolumeFormatError(f"{header_path}: bad field header ({exc})") from exc
    if header.get("dtype") != "f32" or channels < 1:
        raise VolumeFormatError(f"{header_path}: fields must be f32 with channels >= 1")
    payload = raw_path.read_bytes()
    expected = channels * geometry.size * 4
    if len(payload) != expected:
        raise VolumeFormatError(
            f"{raw_path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape((channels,) + geometry.shape)
    if not np.isfinite(data).all():
        raise VolumeFormatError(f"{raw_path}: field contains NaN or Inf")
    return data.astype(np.float64), geometry


def percentile_bounds(values, lo: float, hi: float, method: str = "outward") -> tuple[float, float]:
    """Clip band ``(P_lo, P_hi)`` of ``values``.

    ``"outward"`` takes the sorted value at rank ``floor(lo/100 * (n-1))`` for
    the lower bound and ``ceil(hi/100 * (n-1))`` for the upper bound, so both
    bounds are data values and the band contains the interpolated one.
    ``"linear"`` interpolates between closest ranks.
    """
    if not 0.0 <= lo < hi <= 100.0:
        raise ValueError(f"need 0 <= lo < hi <= 100, got lo={lo}, hi={hi}")
    flat = np.asarray(values, dtype=np.float64).ravel()
    last = flat.size - 1
    pos_lo, pos_hi = lo / 100.0 * last, hi / 100.0 * last
    if method == "outward":
        k_lo, k_hi = int(np.floor(pos_lo)), min(int(np.ceil(pos_hi)), last)
        part = np.partition(flat, (k_lo, k_hi))
        return float(part[k_lo]), float(part[k_hi])
    if method == "linear":
        ranks = sorted({int(np.floor(pos_lo)), min(int(np.floor(pos_lo)) + 1, last),
                        int(np.floor(pos_hi)), min(int(np.floor(pos_hi)) + 1, last)})
        part = np.partition(flat, ranks)

        def interp(pos):
            k = int(np.floor(pos))
            k1 = min(k + 1, last)
            return float(part[k] + (pos - k) * (part[k1] - part[k]))

        return interp(pos_lo), interp(pos_hi)
    raise ValueError(f"unknown percentile method {method!r}")


def percentile_clip(
    vol: ScalarVolume, lo: float = 0.5, hi: float = 99.5, method: str = "outward"
) -> ScalarVolume:
    """Clamp intensities to the [lo, hi] percentile band of the whole volume.

    With the default ``"outward"`` bounds the result is idempotent, since
    the bounds are themselves voxel values.  See :func:`percentile_bounds`.
    """
    p_lo, p_hi = percentile_bounds(vol.data, lo, hi, method)
    low, high = _inward_f32(p_lo, p_hi)
    return ScalarVolume(vol.geometry, np.clip(vol.data, low, high))


def _inward_f32(p_lo: float, p_hi: float) -> tuple[np.float32, np.float32]:
    # Round the float64 band inward to float32 so clipped output stays inside it.
    low = np.float32(p_lo)
    if low < p_lo:
        low = np.nextafter(low, np.float32(np.inf))
    high = np.float32(p_hi)
    if high > p_hi:
        high = np.nextafter(high, np.float32(-np.inf))
    if low > high:
        # band falls strictly between two adjacent float32 values
        low = high = np.float32(p_lo)
    return low, high
