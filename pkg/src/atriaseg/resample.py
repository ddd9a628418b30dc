"""Grid resampling around the two network stages.

Trilinear interpolation for intensities (stage-1 downsampling), nearest
neighbour for label maps (down and up). All mappings are pixel-centre
aligned: output voxel t on an axis with integer factor f samples the
source at s = (t + 0.5) * f - 0.5, clamped to the grid. Downsampled dims
are floor(n / f) and spacing scales by f.
"""

from __future__ import annotations

import numpy as np

from .geometry import Dims, GeometryError, LabelMap, Spacing, Volume


class ResampleError(GeometryError):
    pass


def _check_factors(dims: Dims, fx: int, fy: int, fz: int) -> None:
    for axis, n, f in (("x", dims.nx, fx), ("y", dims.ny, fy), ("z", dims.nz, fz)):
        if not (isinstance(f, (int, np.integer)) and f >= 1):
            raise ResampleError(f"{axis} factor must be a positive integer, got {f!r}")
        if f > n:
            raise ResampleError(f"{axis} factor {f} exceeds dimension {n}")


def _out_dims(dims: Dims, fx: int, fy: int, fz: int) -> Dims:
    return Dims(dims.nx // fx, dims.ny // fy, dims.nz // fz)


def _centre_coords(n_out: int, factor: float) -> np.ndarray:
    t = np.arange(n_out, dtype=np.float64)
    return (t + 0.5) * factor - 0.5


def downsample_linear(vol: Volume, fx: int, fy: int, fz: int) -> Volume:
    """Trilinear downsampling by integer factors, clamp-to-edge borders."""
    _check_factors(vol.dims, fx, fy, fz)
    out_dims = _out_dims(vol.dims, fx, fy, fz)
    src = vol.data.astype(np.float64)

    lows, highs, weights = [], [], []
    for n_src, n_out, f in ((vol.dims.nz, out_dims.nz, fz),
                            (vol.dims.ny, out_dims.ny, fy),
                            (vol.dims.nx, out_dims.nx, fx)):
        s = np.clip(_centre_coords(n_out, f), 0.0, n_src - 1.0)
        lo = np.floor(s).astype(np.intp)
        hi = np.minimum(lo + 1, n_src - 1)
        lows.append(lo)
        highs.append(hi)
        weights.append(s - lo)

    (z0, y0, x0), (z1, y1, x1) = lows, highs
    wz = weights[0][:, None, None]
    wy = weights[1][None, :, None]
    wx = weights[2][None, None, :]

    def gather(zi, yi, xi):
        return src[zi[:, None, None], yi[None, :, None], xi[None, None, :]]

    # lerp along x, then y, then z; constant inputs stay exactly constant
    def lerp(a, b, w):
        return a + w * (b - a)

    c00 = lerp(gather(z0, y0, x0), gather(z0, y0, x1), wx)
    c01 = lerp(gather(z0, y1, x0), gather(z0, y1, x1), wx)
    c10 = lerp(gather(z1, y0, x0), gather(z1, y0, x1), wx)
    c11 = lerp(gather(z1, y1, x0), gather(z1, y1, x1), wx)
    c0 = lerp(c00, c01, wy)
    c1 = lerp(c10, c11, wy)
    out = lerp(c0, c1, wz).astype(np.float32)

    spacing = Spacing(vol.spacing.dx * fx, vol.spacing.dy * fy, vol.spacing.dz * fz)
    return Volume(out_dims, spacing, out)


def _nearest_indices(n_src: int, coords: np.ndarray) -> np.ndarray:
    # round half up, then clamp
    idx = np.floor(coords + 0.5).astype(np.intp)
    return np.clip(idx, 0, n_src - 1)


def downsample_nearest(labels: LabelMap, fx: int, fy: int, fz: int) -> LabelMap:
    """Nearest-neighbour label downsampling by integer factors."""
    _check_factors(labels.dims, fx, fy, fz)
    out_dims = _out_dims(labels.dims, fx, fy, fz)
    zi = _nearest_indices(labels.dims.nz, _centre_coords(out_dims.nz, fz))
    yi = _nearest_indices(labels.dims.ny, _centre_coords(out_dims.ny, fy))
    xi = _nearest_indices(labels.dims.nx, _centre_coords(out_dims.nx, fx))
    out = labels.data[zi[:, None, None], yi[None, :, None], xi[None, None, :]]
    spacing = Spacing(labels.spacing.dx * fx, labels.spacing.dy * fy, labels.spacing.dz * fz)
    return LabelMap(out_dims, spacing, out)


def upsample_nearest(labels: LabelMap, target: Dims, target_spacing: Spacing) -> LabelMap:
    """Nearest-neighbour resize to an arbitrary target grid (inverse
    pixel-centre mapping); used to restore predictions to original dims."""
    ratios = (labels.dims.nz / target.nz, labels.dims.ny / target.ny, labels.dims.nx / target.nx)
    zi = _nearest_indices(labels.dims.nz, _centre_coords(target.nz, ratios[0]))
    yi = _nearest_indices(labels.dims.ny, _centre_coords(target.ny, ratios[1]))
    xi = _nearest_indices(labels.dims.nx, _centre_coords(target.nx, ratios[2]))
    out = labels.data[zi[:, None, None], yi[None, :, None], xi[None, None, :]]
    return LabelMap(target, target_spacing, out)
