"""Pluggable segmentation stage.

Network training is out of scope here, so the segmentation slots are
filled by interchangeable backends behind one interface:

* ``oracle``    — load a stored prediction for the case (testing, replay).
* ``threshold`` — percentile intensity threshold + largest component; a
                  non-clinical smoke-test baseline.
* ``external``  — hand the volume to an arbitrary command via NIfTI files
                  ({input}/{output} placeholders), so a real trained model
                  in any ecosystem can plug in across a process boundary.

Backend output geometry must equal the input's exactly; anything else is
a per-case error, never a silent resample.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nifti
from .geometry import LabelMap, Volume, same_geometry
from .morphology import label_components

KINDS = ("oracle", "threshold", "external")


class BackendError(RuntimeError):
    """Fatal for the current case; the batch continues."""


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    # oracle
    prediction_dir: str | None = None
    pattern: str = "{case}.nii.gz"
    # threshold
    percentile: int = 90
    # external
    command: str | None = None
    timeout_s: float = 600.0
    temp_dir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"backend kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "oracle" and not self.prediction_dir:
            raise ValueError("oracle backend needs prediction_dir")
        if self.kind == "threshold" and not (0 < self.percentile < 100):
            raise ValueError(f"threshold percentile must be in (0, 100), got {self.percentile}")
        if self.kind == "external":
            if not self.command:
                raise ValueError("external backend needs a command template")
            for placeholder in ("{input}", "{output}"):
                if placeholder not in self.command:
                    raise ValueError(f"external command template must contain {placeholder}")

    @classmethod
    def from_dict(cls, d: dict) -> "BackendSpec":
        return cls(**d)


def _run_oracle(spec: BackendSpec, case_id: str, allowed: tuple[int, ...]) -> LabelMap:
    path = Path(spec.prediction_dir) / spec.pattern.format(case=case_id)
    if not path.is_file():
        raise BackendError(f"oracle prediction missing for case {case_id}: {path}")
    try:
        return nifti.read_labels(path, allowed=allowed)
    except nifti.NiftiError as exc:
        raise BackendError(f"oracle prediction unreadable for case {case_id}: {exc}") from exc


def _run_threshold(vol: Volume, spec: BackendSpec) -> LabelMap:
    data = vol.data
    vmin, vmax = float(data.min()), float(data.max())
    if vmin == vmax:
        return LabelMap(vol.dims, vol.spacing, np.zeros(vol.dims.shape, dtype=np.uint8))
    flat = np.sort(data, axis=None)
    k = (spec.percentile * flat.size + 99) // 100  # nearest-rank
    thr = flat[max(k, 1) - 1]
    mask = LabelMap(vol.dims, vol.spacing, (data > thr).astype(np.uint8))
    comp, sizes = label_components(mask)
    if sizes.size == 0:
        return mask
    keep = int(np.argmax(sizes)) + 1
    return LabelMap(vol.dims, vol.spacing, (comp == keep).astype(np.uint8))


def _run_external(vol: Volume, spec: BackendSpec, case_id: str,
                  allowed: tuple[int, ...]) -> LabelMap:
    with tempfile.TemporaryDirectory(prefix=f"atriaseg_{case_id}_",
                                     dir=spec.temp_dir) as tmp:
        in_path = Path(tmp) / "input.nii.gz"
        out_path = Path(tmp) / "output.nii.gz"
        nifti.write_volume(vol, in_path)
        cmd = [arg.replace("{input}", str(in_path)).replace("{output}", str(out_path))
               for arg in shlex.split(spec.command)]
        try:
            proc = subprocess.run(cmd, capture_output=True, timeout=spec.timeout_s)
        except subprocess.TimeoutExpired as exc:
            raise BackendError(f"external backend timed out after {spec.timeout_s}s "
                               f"for case {case_id}") from exc
        if proc.returncode != 0:
            tail = proc.stderr.decode(errors="replace")[-500:]
            raise BackendError(f"external backend exited {proc.returncode} "
                               f"for case {case_id}: {tail}")
        if not out_path.is_file():
            raise BackendError(f"external backend wrote no output for case {case_id}")
        try:
            return nifti.read_labels(out_path, allowed=allowed)
        except nifti.NiftiError as exc:
            raise BackendError(f"external backend output unreadable for case {case_id}: "
                               f"{exc}") from exc


def segment(vol: Volume, spec: BackendSpec, case_id: str,
            allowed: tuple[int, ...] = (0, 1, 2, 3)) -> LabelMap:
    """Run the configured backend on a (cropped, equalised) volume."""
    if spec.kind == "oracle":
        out = _run_oracle(spec, case_id, allowed)
    elif spec.kind == "threshold":
        out = _run_threshold(vol, spec)
    else:
        out = _run_external(vol, spec, case_id, allowed)
    if not same_geometry(out, vol):
        raise BackendError(
            f"backend output geometry {out.dims.as_tuple()}@{out.spacing.as_tuple()} does not "
            f"match input {vol.dims.as_tuple()}@{vol.spacing.as_tuple()} for case {case_id}")
    return out


def coarse_segment(vol: Volume, spec: BackendSpec, case_id: str) -> LabelMap:
    """Stage-1 analogue of :func:`segment`: returns a binary heart mask on
    the downsampled grid."""
    return segment(vol, spec, case_id, allowed=(0, 1))
