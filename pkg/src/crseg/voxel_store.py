"""VOL1 volume files, sequence extraction and label pyramids.

A VOL1 file is a 29 byte header followed by the raw voxels in C order
(z-major, then y, then x), little-endian::

    offset  size  field
    0       4     magic b"VOL1"
    4       24    z, y, x as uint64
    28      1     dtype code: 0 = uint8 intensity, 1 = uint32 label, 2 = float32

Voxel size, when known, lives in a ``<path>.meta.json`` sidecar.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import BoundsError, EncodingError, FormatError, ShapeError, StorageError

MAGIC = b"VOL1"
HEADER = struct.Struct("<4sQQQB")
DTYPE_U8, DTYPE_U32, DTYPE_F32 = 0, 1, 2
_NUMPY_DTYPES = {DTYPE_U8: np.dtype("<u1"), DTYPE_U32: np.dtype("<u4"), DTYPE_F32: np.dtype("<f4")}


@dataclass
class Volume:
    """Intensity grid in [0, 1], stored as float32 of shape (z, y, x)."""

    data: np.ndarray
    voxel_size: Optional[tuple] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ShapeError(f"volume must be 3D with non-empty axes, got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape


@dataclass
class LabelMap:
    """Instance ids per voxel, 0 = background. 2D maps are (y, x)."""

    data: np.ndarray
    voxel_size: Optional[tuple] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype.kind == "f":
            if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
                raise EncodingError("label ids must be integers")
        if data.size and data.min() < 0:
            raise EncodingError("label ids must be non-negative")
        if data.size and data.max() > np.iinfo(np.uint32).max:
            raise EncodingError("label id exceeds uint32 range")
        self.data = data.astype(np.uint32)
        if self.data.ndim not in (2, 3):
            raise ShapeError(f"label map must be 2D or 3D, got {self.data.shape}")

    @property
    def shape(self):
        return self.data.shape

    def ids(self) -> np.ndarray:
        """Sorted non-background ids."""
        u = np.unique(self.data)
        return u[u != 0]


def _sidecar(path) -> str:
    return os.fspath(path) + ".meta.json"


def write_volume(path, v: Union[Volume, LabelMap], dtype_code: Optional[int] = None) -> None:
    """Write ``v`` as a VOL1 file.

    Volumes default to float32 (code 2); ``dtype_code=0`` quantizes them to
    uint8 and requires every value to be a multiple of 1/255 within [0, 1]
    up to float32 rounding. Label maps are always uint32 (code 1).
    """
    if isinstance(v, LabelMap):
        code = DTYPE_U32 if dtype_code is None else dtype_code
        if code != DTYPE_U32:
            raise EncodingError("label maps are stored as uint32 (code 1)")
        grid = v.data if v.data.ndim == 3 else v.data[None]
        payload = grid.astype("<u4")
    elif isinstance(v, Volume):
        code = DTYPE_F32 if dtype_code is None else dtype_code
        grid = v.data
        if code == DTYPE_F32:
            payload = grid.astype("<f4")
        elif code == DTYPE_U8:
            if grid.min() < 0 or grid.max() > 1:
                raise EncodingError("uint8 encoding needs intensities in [0, 1]")
            scaled = np.round(grid.astype(np.float64) * 255.0)
            payload = scaled.astype("<u1")
        else:
            raise EncodingError(f"dtype code {code} cannot hold intensities")
    else:
        raise EncodingError(f"cannot encode object of type {type(v).__name__}")

    z, y, x = grid.shape
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, z, y, x, code))
            fh.write(np.ascontiguousarray(payload).tobytes(order="C"))
        if v.voxel_size is not None:
            with open(_sidecar(path), "w") as fh:
                json.dump({"voxel_size_nm": [float(s) for s in v.voxel_size]}, fh)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def read_volume(path) -> Union[Volume, LabelMap]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, z, y, x, code = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if code not in _NUMPY_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = _NUMPY_DTYPES[code]
    expected = z * y * x * dt.itemsize
    body = raw[HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"{path}: payload is {len(body)} bytes, header declares {expected}")
    grid = np.frombuffer(body, dtype=dt).reshape(z, y, x)

    voxel_size = None
    if os.path.exists(_sidecar(path)):
        with open(_sidecar(path)) as fh:
            voxel_size = tuple(json.load(fh)["voxel_size_nm"])

    if code == DTYPE_U32:
        return LabelMap(grid.copy(), voxel_size)
    if code == DTYPE_U8:
        return Volume(grid.astype(np.float32) / np.float32(255.0), voxel_size)
    return Volume(grid.copy(), voxel_size)


def extract_sequence(v: Volume, l: LabelMap, z_start: int, length: int):
    """Frames ``z_start .. z_start+length-1`` and the label slice at ``z_start``.

    Returns a ``(length, y, x)`` float32 array view and a 2D :class:`LabelMap`.
    """
    z = v.shape[0]
    if l.data.ndim != 3 or l.shape != v.shape:
        raise ShapeError(f"label map {l.shape} does not match volume {v.shape}")
    if length < 1 or z_start < 0 or z_start + length > z:
        raise BoundsError(f"sequence [{z_start}, {z_start + length}) outside volume depth {z}")
    frames = v.data[z_start:z_start + length]
    return frames, LabelMap(l.data[z_start])


def label_pyramid(l: LabelMap, levels: int) -> list:
    """Level 0 is ``l``; each next level keeps the top-left voxel of every 2x2 block."""
    if levels < 1:
        raise ShapeError("levels must be >= 1")
    data = l.data
    if data.ndim != 2:
        raise ShapeError("label_pyramid expects a 2D label map")
    factor = 2 ** (levels - 1)
    if data.shape[0] % factor or data.shape[1] % factor:
        raise ShapeError(f"dims {data.shape} not divisible by {factor}")
    out = [l]
    for _ in range(levels - 1):
        data = data[::2, ::2]
        out.append(LabelMap(data.copy()))
    return out


def write_pair(directory, name: str, v: Volume, l: LabelMap) -> tuple:
    """Write ``<name>.vol1`` and ``<name>_labels.vol1`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    vpath = os.path.join(directory, f"{name}.vol1")
    lpath = os.path.join(directory, f"{name}_labels.vol1")
    write_volume(vpath, v)
    write_volume(lpath, l)
    return vpath, lpath


def as_label_map(data: Union[np.ndarray, LabelMap, Sequence]) -> LabelMap:
    return data if isinstance(data, LabelMap) else LabelMap(np.asarray(data))
