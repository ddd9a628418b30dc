"""Shared fixtures: synthetic phantoms, dataset layouts, backend sweeps."""

from __future__ import annotations

import numpy as np
import pytest

from atriaseg import (BackendSpec, Dims, LabelMap, PipelineConfig, RoiParams, Spacing, Volume,
                      _kernels, binarize, centroid, crop_box_from_coarse_centroid,
                      crop_with_padding, downsample_nearest, write_volume)

TEST_SPACING = Spacing(0.625, 0.625, 2.5)


def make_phantom(dims: Dims = Dims(48, 48, 20), spacing: Spacing = TEST_SPACING,
                 shift: tuple[int, int, int] = (0, 0, 0), seed: int = 0):
    """Two ellipsoid cavities (RA=2, LA=3) joined by a one-voxel wall shell
    (1), plus an intensity volume with bright cavities over a noisy
    background. The wall is a single 6-connected component and the map has
    no enclosed background, so it is invariant under post-processing.
    """
    nz, ny, nx = dims.shape
    cx = nx // 2 + shift[0]
    cy = ny // 2 + shift[1]
    cz = nz // 2 + shift[2]

    zz, yy, xx = np.mgrid[0:nz, 0:ny, 0:nx].astype(np.float64)

    def ellipsoid(center, radii):
        return (((xx - center[0]) / radii[0]) ** 2
                + ((yy - center[1]) / radii[1]) ** 2
                + ((zz - center[2]) / radii[2]) ** 2) <= 1.0

    ra = ellipsoid((cx - 5, cy, cz), (4.0, 6.0, 4.0))
    la = ellipsoid((cx + 5, cy, cz), (4.0, 5.0, 3.5))
    la &= ~ra
    cavities = ra | la

    def dilate6(m):
        padded = np.pad(m, 1)
        return (padded[1:-1, 1:-1, 1:-1]
                | padded[:-2, 1:-1, 1:-1] | padded[2:, 1:-1, 1:-1]
                | padded[1:-1, :-2, 1:-1] | padded[1:-1, 2:, 1:-1]
                | padded[1:-1, 1:-1, :-2] | padded[1:-1, 1:-1, 2:])

    # two dilations: a one-voxel shell of a discrete ellipsoid is only
    # diagonally connected in places, a two-voxel shell is face-connected
    wall = dilate6(dilate6(cavities)) & ~cavities

    labels = np.zeros(dims.shape, dtype=np.uint8)
    labels[wall] = 1
    labels[ra] = 2
    labels[la] = 3

    rng = np.random.default_rng(seed)
    image = rng.normal(30.0, 5.0, dims.shape)
    image[wall] += 70.0
    image[cavities] += 170.0
    vol = Volume(dims, spacing, image.astype(np.float32))
    return vol, LabelMap(dims, spacing, labels)


def build_dataset(root, n_cases: int = 3, dims: Dims = Dims(48, 48, 20),
                  with_gt: bool = True, seed: int = 7):
    """Write a phantom dataset in the default {case}/{case}.nii.gz layout."""
    shifts = [(0, 0, 0), (3, -2, 1), (-4, 3, -1), (2, 4, 2), (-3, -4, 0)]
    case_ids = []
    for i in range(n_cases):
        case_id = f"case{i:02d}"
        vol, gt = make_phantom(dims, shift=shifts[i % len(shifts)], seed=seed + i)
        case_dir = root / case_id
        case_dir.mkdir(parents=True)
        write_volume(vol, case_dir / f"{case_id}.nii.gz")
        if with_gt:
            write_volume(gt, case_dir / f"{case_id}_gt.nii.gz")
        case_ids.append(case_id)
    return case_ids


def build_oracle_predictions(root, pred_dir, roi: RoiParams):
    """Derive stage-1/stage-2 oracle predictions from the stored GT with
    the same geometry chain the pipeline uses."""
    from atriaseg import read_labels, read_volume

    case_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("_"))
    coarse_dir = pred_dir / "coarse"
    fine_dir = pred_dir / "fine"
    coarse_dir.mkdir(parents=True)
    fine_dir.mkdir(parents=True)
    for case_dir in case_dirs:
        case_id = case_dir.name
        gt = read_labels(case_dir / f"{case_id}_gt.nii.gz")
        image = read_volume(case_dir / f"{case_id}.nii.gz")
        coarse = binarize(downsample_nearest(gt, *roi.factors))
        write_volume(coarse, coarse_dir / f"{case_id}.nii.gz")
        box = crop_box_from_coarse_centroid(centroid(coarse), roi, image.dims)
        write_volume(crop_with_padding(gt, box), fine_dir / f"{case_id}.nii.gz")


def oracle_config(root, out_dir, workers: int = 1) -> PipelineConfig:
    roi = RoiParams(box=Dims(32, 32, 16), factors=(4, 4, 2))
    pred_dir = root / "_oracle"
    if not pred_dir.exists():
        build_oracle_predictions(root, pred_dir, roi)
    return PipelineConfig(
        dataset_root=str(root),
        output_dir=str(out_dir),
        roi=roi,
        coarse_backend=BackendSpec(kind="oracle", prediction_dir=str(pred_dir / "coarse")),
        fine_backend=BackendSpec(kind="oracle", prediction_dir=str(pred_dir / "fine")),
        workers=workers,
    )


@pytest.fixture(params=sorted(_kernels.available_backends()))
def kernel_backend(request):
    """Run a test once per available kernel backend."""
    previous = _kernels.active_backend()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(previous)


@pytest.fixture
def phantom():
    return make_phantom()


def random_labelmap(rng, dims: Dims, n_classes: int = 4,
                    spacing: Spacing = Spacing(1.0, 1.0, 1.0)) -> LabelMap:
    return LabelMap(dims, spacing, rng.integers(0, n_classes, dims.shape).astype(np.uint8))


def random_volume(rng, dims: Dims, spacing: Spacing = Spacing(1.0, 1.0, 1.0)) -> Volume:
    return Volume(dims, spacing, rng.normal(100.0, 25.0, dims.shape).astype(np.float32))
