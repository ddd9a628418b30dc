"""Geometric data model shared by every pipeline stage.

Conventions used throughout the package:

* Coordinate triples in APIs are always ``(x, y, z)``.
* Voxel buffers are C-contiguous numpy arrays of shape ``(nz, ny, nx)``,
  i.e. indexed ``data[z, y, x]`` with x varying fastest in memory. This
  matches the voxel stream order of the file format, so payloads can be
  read and written without shuffling.
* Linear offsets follow the same order: ``offset = x + nx * (y + ny * z)``.

Volumes and label maps are immutable once constructed (the underlying
buffer is marked read-only); every operation returns a new instance, which
makes them safe to share across concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Invalid dims/spacing/data combination."""


class GeometryMismatchError(GeometryError):
    """Two objects that must share geometry do not."""


@dataclass(frozen=True)
class Spacing:
    """Physical voxel size in millimetres per axis.

    Components are held at float32 precision, the precision of the file
    format's pixdim field, so in-memory and round-tripped geometry compare
    equal.
    """

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for name, v in (("dx", self.dx), ("dy", self.dy), ("dz", self.dz)):
            if not (float(v) > 0.0 and np.isfinite(v)):
                raise GeometryError(f"spacing component {name} must be a positive real, got {v!r}")
            object.__setattr__(self, name, float(np.float32(v)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dy, self.dz)


@dataclass(frozen=True)
class Dims:
    """Voxel counts per axis."""

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for name, v in (("nx", self.nx), ("ny", self.ny), ("nz", self.nz)):
            if not (isinstance(v, (int, np.integer)) and v >= 1):
                raise GeometryError(f"dimension {name} must be a positive integer, got {v!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (nz, ny, nx) for the data buffer."""
        return (int(self.nz), int(self.ny), int(self.nx))

    @property
    def voxel_count(self) -> int:
        return int(self.nx) * int(self.ny) * int(self.nz)

    def as_tuple(self) -> tuple[int, int, int]:
        return (int(self.nx), int(self.ny), int(self.nz))


def flatten_index(dims: Dims, x: int, y: int, z: int) -> int:
    """Linear offset of voxel (x, y, z); x varies fastest."""
    if not (0 <= x < dims.nx and 0 <= y < dims.ny and 0 <= z < dims.nz):
        raise GeometryError(f"voxel ({x}, {y}, {z}) outside grid {dims.as_tuple()}")
    return x + dims.nx * (y + dims.ny * z)


def unflatten_index(dims: Dims, offset: int) -> tuple[int, int, int]:
    """Inverse of :func:`flatten_index`."""
    if not (0 <= offset < dims.voxel_count):
        raise GeometryError(f"offset {offset} outside grid {dims.as_tuple()}")
    x = offset % dims.nx
    rest = offset // dims.nx
    return (x, rest % dims.ny, rest // dims.ny)


def _prepare(data: np.ndarray, dims: Dims, dtype: np.dtype, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.shape != dims.shape:
        raise GeometryError(
            f"{what} buffer shape {arr.shape} does not match dims {dims.as_tuple()} "
            f"(expected (nz, ny, nx) = {dims.shape})")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Volume:
    """Dense 3D scalar field with physical spacing.

    Intensities are stored as float32 regardless of the source file's
    datatype; all values are finite.
    """

    dims: Dims
    spacing: Spacing
    data: np.ndarray  # float32, shape (nz, ny, nx), read-only

    def __post_init__(self):
        arr = _prepare(self.data, self.dims, np.float32, "volume")
        if not np.isfinite(arr).all():
            raise GeometryError("volume contains non-finite intensities")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Dense 3D map of small non-negative integer class labels."""

    dims: Dims
    spacing: Spacing
    data: np.ndarray  # uint8, shape (nz, ny, nx), read-only

    def __post_init__(self):
        object.__setattr__(self, "data", _prepare(self.data, self.dims, np.uint8, "label"))


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned voxel box in a source grid.

    The origin is a signed (x, y, z) index and may lie outside the source
    grid; out-of-grid voxels are treated as zero padding by the crop/paste
    operations.
    """

    origin: tuple[int, int, int]
    size: Dims

    def __post_init__(self):
        if len(self.origin) != 3 or not all(isinstance(v, (int, np.integer)) for v in self.origin):
            raise GeometryError(f"box origin must be three integers, got {self.origin!r}")
        object.__setattr__(self, "origin", tuple(int(v) for v in self.origin))


def make_volume(dims: Dims, spacing: Spacing, fill: float = 0.0) -> Volume:
    """Constant-valued volume."""
    return Volume(dims, spacing, np.full(dims.shape, fill, dtype=np.float32))


def make_labels(dims: Dims, spacing: Spacing, fill: int = 0) -> LabelMap:
    """Constant-valued label map."""
    return LabelMap(dims, spacing, np.full(dims.shape, fill, dtype=np.uint8))


def intensity_range(vol: Volume) -> tuple[float, float]:
    """Exact (min, max) over all voxels."""
    return (float(vol.data.min()), float(vol.data.max()))


def same_geometry(a: Volume | LabelMap, b: Volume | LabelMap) -> bool:
    return a.dims == b.dims and a.spacing == b.spacing


def require_same_geometry(a: Volume | LabelMap, b: Volume | LabelMap, context: str = "") -> None:
    if not same_geometry(a, b):
        where = f" in {context}" if context else ""
        raise GeometryMismatchError(
            f"geometry mismatch{where}: {a.dims.as_tuple()}@{a.spacing.as_tuple()} "
            f"vs {b.dims.as_tuple()}@{b.spacing.as_tuple()}")


def validate_labels(labels: LabelMap, allowed: tuple[int, ...]) -> None:
    """Check every voxel is in the allowed label set; names the first offender."""
    lookup = np.zeros(256, dtype=bool)
    lookup[list(allowed)] = True
    bad = ~lookup[labels.data]
    if bad.any():
        z, y, x = (int(i) for i in np.argwhere(bad)[0])
        value = int(labels.data[z, y, x])
        raise GeometryError(
            f"label value {value} at voxel ({x}, {y}, {z}) is outside the allowed set {sorted(allowed)}")
