"""Pure numpy/scipy/scikit-image implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available. Each function here is the contract reference for the matching
Cython kernel: integer outputs (component maps, reconstructed labels,
histograms) are required to be identical between backends, and the CLAHE
blend is required to be bit-identical (same operation order and precision).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from skimage.morphology import reconstruction as _sk_reconstruction

_STRUCT6 = ndimage.generate_binary_structure(3, 1)  # face connectivity


def tile_histograms(bin_idx: np.ndarray, bounds_x: np.ndarray, bounds_y: np.ndarray,
                    bounds_z: np.ndarray, bins: int) -> np.ndarray:
    """Per-tile histograms of precomputed bin indices.

    Returns an int64 array of shape (tz, ty, tx, bins).
    """
    tx, ty, tz = len(bounds_x) - 1, len(bounds_y) - 1, len(bounds_z) - 1
    hists = np.zeros((tz, ty, tx, bins), dtype=np.int64)
    for kz in range(tz):
        for ky in range(ty):
            for kx in range(tx):
                block = bin_idx[bounds_z[kz]:bounds_z[kz + 1],
                                bounds_y[ky]:bounds_y[ky + 1],
                                bounds_x[kx]:bounds_x[kx + 1]]
                hists[kz, ky, kx] = np.bincount(block.ravel(), minlength=bins)
    return hists


def clahe_blend(bin_idx: np.ndarray, maps: np.ndarray,
                k0x: np.ndarray, k1x: np.ndarray, wx: np.ndarray,
                k0y: np.ndarray, k1y: np.ndarray, wy: np.ndarray,
                k0z: np.ndarray, k1z: np.ndarray, wz: np.ndarray,
                vmin: float, vmax: float) -> np.ndarray:
    """Trilinear blend of per-tile mapping tables, rescaled to [vmin, vmax].

    ``maps`` has shape (tz, ty, tx, bins); k0*/k1*/w* are per-axis lookup
    tables giving each coordinate its bracketing tile indices and the
    fractional weight toward the upper tile. The accumulation order below
    (corner loop z-major, weights multiplied x*y then *z) is part of the
    backend contract and must not be reordered.
    """
    nz, ny, nx = bin_idx.shape
    wxv = wx[np.newaxis, np.newaxis, :]
    wyv = wy[np.newaxis, :, np.newaxis]
    wzv = wz[:, np.newaxis, np.newaxis]
    acc = np.zeros((nz, ny, nx), dtype=np.float64)
    for cz in (0, 1):
        kz = (k0z if cz == 0 else k1z)[:, np.newaxis, np.newaxis]
        wzc = (1.0 - wzv) if cz == 0 else wzv
        for cy in (0, 1):
            ky = (k0y if cy == 0 else k1y)[np.newaxis, :, np.newaxis]
            wyc = (1.0 - wyv) if cy == 0 else wyv
            for cx in (0, 1):
                kx = (k0x if cx == 0 else k1x)[np.newaxis, np.newaxis, :]
                wxc = (1.0 - wxv) if cx == 0 else wxv
                acc += ((wxc * wyc) * wzc) * maps[kz, ky, kx, bin_idx]
    return (vmin + acc * (vmax - vmin)).astype(np.float32)


def label_components(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """6-connected component labeling.

    Components are numbered 1..n in scan order of their first voxel
    (x fastest). Returns (int32 component map, int64 sizes indexed id-1).
    """
    raw, n = ndimage.label(mask != 0, structure=_STRUCT6)
    if n == 0:
        return raw.astype(np.int32), np.zeros(0, dtype=np.int64)
    out = _renumber_scan_order(raw.astype(np.int32), n)
    sizes = np.bincount(out.ravel(), minlength=n + 1)[1:].astype(np.int64)
    return out, sizes


def _renumber_scan_order(raw: np.ndarray, n: int) -> np.ndarray:
    # scipy does not document its numbering; normalise to first-occurrence order
    flat = raw.ravel()
    values, first = np.unique(flat, return_index=True)
    nonzero = values != 0
    values, first = values[nonzero], first[nonzero]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[values[np.argsort(first, kind="stable")]] = np.arange(1, len(values) + 1, dtype=np.int32)
    return remap[raw]


def reconstruct_erosion(marker: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Greyscale reconstruction by erosion of marker over mask, 6-connected.

    Requires marker >= mask voxelwise; returns uint8.
    """
    out = _sk_reconstruction(marker, mask, method="erosion", footprint=_STRUCT6)
    return out.astype(np.uint8)


def distance_to_set(set_mask: np.ndarray, sx: float, sy: float, sz: float) -> np.ndarray:
    """Anisotropic Euclidean distance (mm) from every voxel to the nearest
    set voxel centre. The set must be non-empty.
    """
    # distance_transform_edt measures nonzero -> nearest zero
    return ndimage.distance_transform_edt(set_mask == 0, sampling=(sz, sy, sx))
