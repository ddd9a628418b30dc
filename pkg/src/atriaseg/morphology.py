"""Post-processing operators: largest-component selection and greyscale
hole filling, both under 3D face connectivity (6 neighbours).

Hole filling is morphological reconstruction by erosion from a border
marker (input values on the volume border, the map's maximum elsewhere):
every regional minimum not connected to the border is raised to the level
of its enclosing rim, so a background pocket jointly enclosed by wall and
cavity fills to the minimum enclosing label. The output never falls below
the input, and border voxels are unchanged.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .geometry import LabelMap

CONNECTIVITY = 6  # face adjacency; fixed by design


def label_components(mask: LabelMap) -> tuple[np.ndarray, np.ndarray]:
    """6-connected components of a binary mask.

    Returns (component map, sizes): int32 ids 1..n assigned in scan order
    of each component's first voxel, and int64 voxel counts indexed id-1.
    """
    return _kernels.label_components(np.ascontiguousarray(mask.data, dtype=np.uint8))


def keep_largest_component(labels: LabelMap, cls: int) -> LabelMap:
    """Erase all but the largest 6-connected component of one class.

    Size ties keep the component whose first voxel comes earliest in scan
    order. Other classes are untouched; an absent class is a no-op.
    """
    class_mask = labels.data == cls
    if not class_mask.any():
        return labels
    comp, sizes = _kernels.label_components(class_mask.astype(np.uint8))
    keep_id = int(np.argmax(sizes)) + 1  # argmax takes the first maximum
    out = labels.data.copy()
    out[class_mask & (comp != keep_id)] = 0
    return LabelMap(labels.dims, labels.spacing, out)


def fill_holes_greyscale(labels: LabelMap) -> LabelMap:
    """Raise enclosed regional minima to their surrounding rim level."""
    data = labels.data
    peak = int(data.max())
    if peak == 0:
        return labels
    marker = np.full(data.shape, peak, dtype=np.uint8)
    marker[0, :, :] = data[0, :, :]
    marker[-1, :, :] = data[-1, :, :]
    marker[:, 0, :] = data[:, 0, :]
    marker[:, -1, :] = data[:, -1, :]
    marker[:, :, 0] = data[:, :, 0]
    marker[:, :, -1] = data[:, :, -1]
    filled = _kernels.reconstruct_erosion(marker, np.ascontiguousarray(data))
    return LabelMap(labels.dims, labels.spacing, filled)


def postprocess(labels: LabelMap, classes: tuple[int, ...] = (1, 2, 3)) -> LabelMap:
    """Largest-component selection per class (in the given order), then one
    hole-filling pass. Idempotent."""
    out = labels
    for cls in classes:
        out = keep_largest_component(out, cls)
    return fill_holes_greyscale(out)
