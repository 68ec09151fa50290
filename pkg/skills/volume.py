"""
Volumetric data model and the VBF v1 on-disk format.

Arrays are held in (z, y, x) order so that C-order flattening is the x-fastest
layout used on disk. Dims and spacing are always reported as (x, y, z).

A VBF volume is two files side by side:
    <name>.vbf.json   {"version": 1, "dims": [nx, ny, nz], "spacing": [sx, sy, sz],
                       "dtype": "f32le" | "u8", "data": "<name>.raw"}
    <name>.raw        little-endian payload, x fastest
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

FORMAT_VERSION = 1
HEADER_SUFFIX = ".vbf.json"
RAW_SUFFIX = ".raw"
DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1")}

AIR, TISSUE, BONE = 0, 1, 2
MATERIALS = {AIR: "air", TISSUE: "tissue", BONE: "bone"}

# In-slice 3x3 window minus the center, row-major (dy outer, dx inner)
SLICE_OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))


class VolumeFormatError(Exception):
    """A VBF file is missing, inconsistent or carries unsupported content."""


# ── Domain types ─────────────────────────────────────────────────────────────

def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


def _check_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise ValueError(f"Spacing must be three positive numbers, got {spacing}")
    return spacing


@dataclass(frozen=True)
class Volume:
    """Dense 3-D scalar field. `data` has shape (nz, ny, nx), float32."""
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3 or data.size == 0:
            raise ValueError(f"Volume data must be a non-empty 3-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("Volume data contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


@dataclass(frozen=True)
class Mask:
    """Per-voxel foreground indicator aligned with a Volume."""
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 3:
            raise ValueError(f"Mask must be a 3-D array, got shape {bits.shape}")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.bits.shape
        return nx, ny, nz

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @classmethod
    def full(cls, dims: tuple[int, int, int]) -> "Mask":
        nx, ny, nz = dims
        return cls(np.ones((nz, ny, nx), dtype=bool))

    @classmethod
    def from_labels(cls, labels: "LabelVolume", materials=(TISSUE, BONE)) -> "Mask":
        return cls(np.isin(labels.labels, list(materials)))


@dataclass(frozen=True)
class LabelVolume:
    """Per-voxel material index: 0 air, 1 tissue, 2 bone."""
    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"Labels must be a 3-D array, got shape {labels.shape}")
        if labels.size and (labels.min() < AIR or labels.max() > BONE):
            raise ValueError("Labels must lie in {0, 1, 2}")
        object.__setattr__(self, "labels", _freeze(labels.astype(np.uint8)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.labels.shape
        return nx, ny, nz


def require_same_dims(*items) -> None:
    dims = {item.dims for item in items}
    if len(dims) > 1:
        raise ValueError(f"Dimension mismatch: {sorted(dims)}")


# ── Layout helpers ───────────────────────────────────────────────────────────

def flatten_index(i: int, j: int, k: int, dims: tuple[int, int, int]) -> int:
    nx, ny, _ = dims
    return i + nx * (j + ny * k)


def unflatten_index(n: int, dims: tuple[int, int, int]) -> tuple[int, int, int]:
    nx, ny, _ = dims
    return n % nx, (n // nx) % ny, n // (nx * ny)


def neighbors_in_slice(n: int, dims: tuple[int, int, int]) -> list[int]:
    """In-bounds voxels of the 3x3 in-slice window around n, excluding n, row-major."""
    nx, ny, nz = dims
    if not 0 <= n < nx * ny * nz:
        raise IndexError(f"Voxel index {n} outside volume of dims {dims}")
    i, j, k = unflatten_index(n, dims)
    found = []
    for dy, dx in SLICE_OFFSETS:
        x, y = i + dx, j + dy
        if 0 <= x < nx and 0 <= y < ny:
            found.append(flatten_index(x, y, k, dims))
    return found


# ── VBF v1 ───────────────────────────────────────────────────────────────────

class VbfHeader(BaseModel):
    """JSON header of a VBF v1 file."""
    version: int = Field(description="Format version, only 1 is supported")
    dims: tuple[int, int, int] = Field(description="Voxel counts (nx, ny, nz)")
    spacing: tuple[float, float, float] = Field(description="Voxel size in mm (sx, sy, sz)")
    dtype: Literal["f32le", "u8"] = Field(description="Payload element type")
    data: str = Field(description="Payload file name, relative to the header")

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, value):
        if any(d <= 0 for d in value):
            raise ValueError("dims must be positive")
        return value


def vbf_paths(path: str | Path) -> tuple[Path, Path, str]:
    """Resolve `<dir>/<name>`, `<dir>/<name>.vbf.json` or `<dir>/<name>.raw` to (header, raw, name)."""
    path = Path(path)
    name = path.name
    for suffix in (HEADER_SUFFIX, RAW_SUFFIX):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
            break
    return path.with_name(name + HEADER_SUFFIX), path.with_name(name + RAW_SUFFIX), name


def _write_vbf(array: np.ndarray, spacing, dtype: str, path: str | Path) -> Path:
    header_path, raw_path, name = vbf_paths(path)
    nz, ny, nx = array.shape
    header = VbfHeader(version=FORMAT_VERSION, dims=(nx, ny, nz), spacing=spacing,
                       dtype=dtype, data=name + RAW_SUFFIX)
    raw_path.write_bytes(np.ascontiguousarray(array, dtype=DTYPES[dtype]).tobytes())
    header_path.write_text(json.dumps(header.model_dump(), indent=2))
    return header_path


def _read_vbf(path: str | Path, expected: str) -> tuple[np.ndarray, VbfHeader]:
    header_path, _, _ = vbf_paths(path)
    if not header_path.is_file():
        raise VolumeFormatError(f"Header not found: {header_path}")
    try:
        header = VbfHeader.model_validate_json(header_path.read_text())
    except ValidationError as e:
        raise VolumeFormatError(f"Invalid header {header_path}: {e}") from e
    if header.version != FORMAT_VERSION:
        raise VolumeFormatError(f"Unsupported VBF version {header.version} in {header_path}")
    if header.dtype != expected:
        raise VolumeFormatError(f"{header_path} holds dtype {header.dtype}, expected {expected}")

    raw_path = header_path.parent / header.data
    if not raw_path.is_file():
        raise VolumeFormatError(f"Payload not found: {raw_path}")
    payload = raw_path.read_bytes()
    nx, ny, nz = header.dims
    dtype = DTYPES[header.dtype]
    if len(payload) != nx * ny * nz * dtype.itemsize:
        raise VolumeFormatError(
            f"Payload size mismatch in {raw_path}: {len(payload)} bytes for dims {header.dims} "
            f"({nx * ny * nz * dtype.itemsize} expected)"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx), header


def write_volume(v: Volume, path: str | Path) -> Path:
    return _write_vbf(v.data, v.spacing, "f32le", path)


def read_volume(path: str | Path) -> Volume:
    data, header = _read_vbf(path, "f32le")
    if not np.all(np.isfinite(data)):
        raise VolumeFormatError(f"Non-finite values in {path}")
    return Volume(data.astype(np.float32), header.spacing)


def write_labels(labels: LabelVolume, path: str | Path) -> Path:
    return _write_vbf(labels.labels, labels.spacing, "u8", path)


def read_labels(path: str | Path) -> LabelVolume:
    data, header = _read_vbf(path, "u8")
    if data.size and data.max() > BONE:
        raise VolumeFormatError(f"Label values outside {{0, 1, 2}} in {path}")
    return LabelVolume(data, header.spacing)


def write_mask(mask: Mask, path: str | Path, spacing=(1.0, 1.0, 1.0)) -> Path:
    return _write_vbf(mask.bits.astype(np.uint8), spacing, "u8", path)


def read_mask(path: str | Path) -> Mask:
    data, _ = _read_vbf(path, "u8")
    return Mask(data != 0)
