"""Stage-1 geometry: from a coarse binary heart mask to a fixed-size crop
of the full-resolution image, and back.

The centroid is found on the coarse (downsampled) mask, mapped to full
resolution with the half-block offset c*f + (f-1)/2, and a fixed box is
centred on it: origin = floor(c_full - box/2), evaluated in exact integer
arithmetic as c*f + (f - 1 - box) // 2. The box never adapts to the input;
out-of-grid regions are zero padded and discarded again on paste-back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CropBox, Dims, GeometryError, LabelMap, Spacing, Volume

DEFAULT_BOX = Dims(320, 320, 44)
DEFAULT_FACTORS = (4, 4, 2)


class EmptyMaskError(ValueError):
    """Centroid of a mask with no foreground; the caller decides the fallback."""


class BoxOutsideGridError(GeometryError):
    """Crop box does not overlap the source grid in a single voxel."""


@dataclass(frozen=True)
class RoiParams:
    box: Dims = DEFAULT_BOX
    factors: tuple[int, int, int] = DEFAULT_FACTORS

    def __post_init__(self):
        if len(self.factors) != 3 or any(int(f) < 1 for f in self.factors):
            raise GeometryError(f"downsampling factors must be three integers >= 1, "
                                f"got {self.factors!r}")
        object.__setattr__(self, "factors", tuple(int(f) for f in self.factors))


def binarize(labels: LabelMap) -> LabelMap:
    """Merge all foreground classes into a single binary mask."""
    return LabelMap(labels.dims, labels.spacing, (labels.data > 0).astype(np.uint8))


def centroid(mask: LabelMap) -> tuple[int, int, int]:
    """Arithmetic mean of foreground voxel indices, rounded half up.

    Raises EmptyMaskError when the mask has no foreground.
    """
    zs, ys, xs = np.nonzero(mask.data)
    if xs.size == 0:
        raise EmptyMaskError("mask contains no foreground voxels")
    return (int(math.floor(xs.mean() + 0.5)),
            int(math.floor(ys.mean() + 0.5)),
            int(math.floor(zs.mean() + 0.5)))


def crop_box_from_coarse_centroid(coarse_c: tuple[int, int, int], params: RoiParams,
                                  full: Dims) -> CropBox:
    """Fixed-size crop box in the full-resolution grid, centred on the
    upscaled coarse centroid. The origin may be negative or overrun the
    grid; padding handles both."""
    box = params.box.as_tuple()
    origin = tuple(int(c) * f + (f - 1 - b) // 2
                   for c, f, b in zip(coarse_c, params.factors, box))
    return CropBox(origin=origin, size=params.box)


def _overlap_ranges(box: CropBox, full: Dims):
    """Per-axis (src_lo, src_hi, dst_lo) for the box/grid intersection."""
    ranges = []
    for o, b, n in zip(box.origin, box.size.as_tuple(), full.as_tuple()):
        src_lo = max(o, 0)
        src_hi = min(o + b, n)
        if src_lo >= src_hi:
            raise BoxOutsideGridError(
                f"crop box origin={box.origin} size={box.size.as_tuple()} "
                f"does not overlap grid {full.as_tuple()}")
        ranges.append((src_lo, src_hi, src_lo - o))
    return ranges


def crop_with_padding(obj: Volume | LabelMap, box: CropBox) -> Volume | LabelMap:
    """Extract the box from the source grid; voxels outside it are 0."""
    (xs, xe, xd), (ys, ye, yd), (zs_, ze, zd) = _overlap_ranges(box, obj.dims)
    out = np.zeros(box.size.shape, dtype=obj.data.dtype)
    out[zd:zd + (ze - zs_), yd:yd + (ye - ys), xd:xd + (xe - xs)] = \
        obj.data[zs_:ze, ys:ye, xs:xe]
    cls = LabelMap if isinstance(obj, LabelMap) else Volume
    return cls(box.size, obj.spacing, out)


def paste_back(cropped: LabelMap, box: CropBox, full: Dims, full_spacing: Spacing) -> LabelMap:
    """Place a cropped prediction back into the original grid; everything
    outside the box becomes background."""
    if cropped.dims != box.size:
        raise GeometryError(f"cropped dims {cropped.dims.as_tuple()} do not match "
                            f"box size {box.size.as_tuple()}")
    (xs, xe, xd), (ys, ye, yd), (zs_, ze, zd) = _overlap_ranges(box, full)
    out = np.zeros(full.shape, dtype=np.uint8)
    out[zs_:ze, ys:ye, xs:xe] = \
        cropped.data[zd:zd + (ze - zs_), yd:yd + (ye - ys), xd:xd + (xe - xs)]
    return LabelMap(full, full_spacing, out)
