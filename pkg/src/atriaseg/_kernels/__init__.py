"""Kernel backend selection.

The hot inner loops (CLAHE histogramming and blending, 6-connected
component labeling, greyscale reconstruction, distance transforms) exist
twice: a compiled Cython extension and a numpy/scipy fallback. The backend
is chosen at import time: the extension if it built, else the fallback.
``ATRIASEG_KERNELS=python`` or ``=cython`` forces a choice (forcing cython
when the extension is missing raises). Both backends produce identical
component maps and reconstructions, and bit-identical CLAHE output.
"""

from __future__ import annotations

import os

from . import pykernels

try:
    from . import _cykernels
except ImportError:
    _cykernels = None

_BACKENDS = {"python": pykernels}
if _cykernels is not None:
    _BACKENDS["cython"] = _cykernels


def _initial_backend() -> str:
    requested = os.environ.get("ATRIASEG_KERNELS", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            raise ImportError(
                f"ATRIASEG_KERNELS={requested!r} but available kernel backends are "
                f"{sorted(_BACKENDS)}")
        return requested
    return "cython" if "cython" in _BACKENDS else "python"


_active = _initial_backend()


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    """Switch kernel backends (used by tests and the benchmark)."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {sorted(_BACKENDS)}")
    _active = name


def tile_histograms(*args, **kwargs):
    return _BACKENDS[_active].tile_histograms(*args, **kwargs)


def clahe_blend(*args, **kwargs):
    return _BACKENDS[_active].clahe_blend(*args, **kwargs)


def label_components(*args, **kwargs):
    return _BACKENDS[_active].label_components(*args, **kwargs)


def reconstruct_erosion(*args, **kwargs):
    return _BACKENDS[_active].reconstruct_erosion(*args, **kwargs)


def distance_to_set(*args, **kwargs):
    return _BACKENDS[_active].distance_to_set(*args, **kwargs)
