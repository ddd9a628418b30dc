"""3D contrast-limited adaptive histogram equalisation.

The volume is divided into a grid of tiles (default 8 per axis, i.e. tile
size is 1/8 of each dimension, the last tile absorbing the remainder). A
histogram over bins spanning the *global* intensity range is accumulated
per tile, clipped at clip_fraction x tile voxel count with the excess
redistributed, and turned into a CDF mapping to [0, 1]. Each voxel's output
blends the mappings of its (up to) 8 nearest tile centres trilinearly,
clamped at the outermost centres, and is rescaled to the input's original
[min, max] so downstream stages keep the native intensity scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import Dims, Volume


class ClaheError(ValueError):
    pass


@dataclass(frozen=True)
class ClaheParams:
    tiles: tuple[int, int, int] = (8, 8, 8)
    bins: int = 256
    clip_fraction: float = 0.01
    max_redistribution_passes: int = 5

    def __post_init__(self):
        if len(self.tiles) != 3 or any(int(t) < 1 for t in self.tiles):
            raise ClaheError(f"tiles must be three integers >= 1, got {self.tiles!r}")
        object.__setattr__(self, "tiles", tuple(int(t) for t in self.tiles))
        if self.bins < 2:
            raise ClaheError(f"bins must be >= 2, got {self.bins}")
        if not (0.0 < self.clip_fraction <= 1.0):
            raise ClaheError(f"clip_fraction must be in (0, 1], got {self.clip_fraction}")
        if self.max_redistribution_passes < 1:
            raise ClaheError("max_redistribution_passes must be >= 1")


@dataclass
class TileGrid:
    """Tile decomposition of a grid: per-axis boundary offsets and tile
    centres, plus (once computed) per-tile mapping tables.

    bounds_* has t+1 entries; tile k covers [bounds[k], bounds[k+1]).
    maps has shape (tz, ty, tx, bins) with values in [0, 1], monotone
    non-decreasing along bins.
    """

    dims: Dims
    bounds_x: np.ndarray
    bounds_y: np.ndarray
    bounds_z: np.ndarray
    centers_x: np.ndarray
    centers_y: np.ndarray
    centers_z: np.ndarray
    maps: np.ndarray | None = field(default=None)

    @property
    def tile_counts(self) -> tuple[int, int, int]:
        return (len(self.bounds_x) - 1, len(self.bounds_y) - 1, len(self.bounds_z) - 1)


def _axis_partition(n: int, t: int):
    base = n // t
    bounds = np.array([k * base for k in range(t)] + [n], dtype=np.int64)
    centers = (bounds[:-1] + bounds[1:] - 1) / 2.0
    return bounds, centers


def build_tile_grid(dims: Dims, params: ClaheParams) -> TileGrid:
    """Tile geometry only; mappings are attached by clahe3d."""
    for axis, n, t in zip("xyz", dims.as_tuple(), params.tiles):
        if t > n:
            raise ClaheError(f"{t} tiles on axis {axis} exceed its {n} voxels")
    bx, cx = _axis_partition(dims.nx, params.tiles[0])
    by, cy = _axis_partition(dims.ny, params.tiles[1])
    bz, cz = _axis_partition(dims.nz, params.tiles[2])
    return TileGrid(dims, bx, by, bz, cx, cy, cz)


def clip_and_redistribute(hist: np.ndarray, clip_limit: int,
                          max_passes: int = 5) -> np.ndarray:
    """Clip a histogram at clip_limit and redistribute the excess.

    Total mass is preserved exactly. Each pass clips the over-limit bins
    and shares the excess uniformly among the bins still under the limit
    (remainder to the lowest-indexed ones). If the pass budget runs out,
    leftover capacity is filled in index order; mass that cannot fit under
    the cap at all is spread uniformly over every bin, ignoring the limit.
    """
    if clip_limit < 1:
        raise ClaheError(f"clip_limit must be >= 1, got {clip_limit}")
    h = np.asarray(hist, dtype=np.int64).copy()
    excess = int(np.maximum(h - clip_limit, 0).sum())
    np.minimum(h, clip_limit, out=h)
    for _ in range(max_passes):
        if excess == 0:
            return h
        under = np.flatnonzero(h < clip_limit)
        if under.size == 0:
            break
        share, rem = divmod(excess, under.size)
        h[under] += share
        h[under[:rem]] += 1
        excess = int(np.maximum(h - clip_limit, 0).sum())
        np.minimum(h, clip_limit, out=h)
    if excess:
        # pass budget spent: fill remaining capacity in index order, then
        # dump whatever cannot fit uniformly, ignoring the limit
        room = clip_limit - h
        fill = np.minimum(room, np.maximum(excess - np.cumsum(room) + room, 0))
        h += fill
        excess -= int(fill.sum())
    if excess:
        share, rem = divmod(excess, h.size)
        h += share
        h[:rem] += 1
    return h


def mapping_from_hist(hist: np.ndarray) -> np.ndarray:
    """CDF of a histogram normalised to [0, 1]; ends exactly at 1."""
    h = np.asarray(hist, dtype=np.int64)
    total = int(h.sum())
    if total < 1:
        raise ClaheError("cannot build a mapping from an empty histogram")
    return np.cumsum(h, dtype=np.float64) / np.float64(total)


def bin_indices(data: np.ndarray, vmin: float, vmax: float, bins: int) -> np.ndarray:
    """Bin index per voxel over [vmin, vmax]; vmax lands in the last bin."""
    scale = np.float64(bins) / (np.float64(vmax) - np.float64(vmin))
    idx = np.floor((data.astype(np.float64) - np.float64(vmin)) * scale).astype(np.int32)
    return np.clip(idx, 0, bins - 1)


def _interp_tables(n: int, centers: np.ndarray):
    """Per-coordinate bracketing tile indices and upper-tile weight, with
    clamped (extrapolation-free) behaviour outside the outer centres."""
    coords = np.arange(n, dtype=np.float64)
    raw = np.searchsorted(centers, coords, side="right").astype(np.int64) - 1
    k0 = np.clip(raw, 0, len(centers) - 1).astype(np.int32)
    k1 = np.minimum(k0 + 1, len(centers) - 1).astype(np.int32)
    k1[raw < 0] = 0  # clamp below the first centre
    w = np.zeros(n, dtype=np.float64)
    interior = k1 > k0
    w[interior] = (coords[interior] - centers[k0[interior]]) / \
                  (centers[k1[interior]] - centers[k0[interior]])
    return k0, k1, w


def compute_tile_maps(vol: Volume, params: ClaheParams, grid: TileGrid,
                      vmin: float, vmax: float,
                      bin_idx: np.ndarray | None = None) -> np.ndarray:
    """Clipped-CDF mapping table for every tile, shape (tz, ty, tx, bins)."""
    if bin_idx is None:
        bin_idx = bin_indices(vol.data, vmin, vmax, params.bins)
    hists = _kernels.tile_histograms(bin_idx, grid.bounds_x, grid.bounds_y, grid.bounds_z,
                                     params.bins)
    tx, ty, tz = grid.tile_counts
    maps = np.empty((tz, ty, tx, params.bins), dtype=np.float64)
    for kz in range(tz):
        for ky in range(ty):
            for kx in range(tx):
                tile_voxels = int(hists[kz, ky, kx].sum())
                limit = max(1, int(params.clip_fraction * tile_voxels))
                clipped = clip_and_redistribute(hists[kz, ky, kx], limit,
                                                params.max_redistribution_passes)
                maps[kz, ky, kx] = mapping_from_hist(clipped)
    return maps


def clahe3d(vol: Volume, params: ClaheParams = ClaheParams()) -> Volume:
    """Adaptive histogram equalisation of a volume; output spans a subset
    of the input's [min, max]. Constant volumes pass through unchanged."""
    vmin = float(vol.data.min())
    vmax = float(vol.data.max())
    if vmin == vmax:
        return Volume(vol.dims, vol.spacing, vol.data.copy())
    grid = build_tile_grid(vol.dims, params)
    bin_idx = bin_indices(vol.data, vmin, vmax, params.bins)
    grid.maps = compute_tile_maps(vol, params, grid, vmin, vmax, bin_idx)
    k0x, k1x, wx = _interp_tables(vol.dims.nx, grid.centers_x)
    k0y, k1y, wy = _interp_tables(vol.dims.ny, grid.centers_y)
    k0z, k1z, wz = _interp_tables(vol.dims.nz, grid.centers_z)
    out = _kernels.clahe_blend(bin_idx, grid.maps,
                               k0x, k1x, wx, k0y, k1y, wy, k0z, k1z, wz,
                               vmin, vmax)
    return Volume(vol.dims, vol.spacing, out)
