import sys

import numpy as np
import pytest

from atriaseg import (BackendError, BackendSpec, Dims, Spacing, coarse_segment,
                      make_volume, segment, write_volume)
from conftest import make_phantom, random_volume


def test_spec_validation():
    with pytest.raises(ValueError):
        BackendSpec(kind="nonsense")
    with pytest.raises(ValueError):
        BackendSpec(kind="oracle")  # no prediction_dir
    with pytest.raises(ValueError):
        BackendSpec(kind="external", command="model.sh {input}")  # no {output}
    with pytest.raises(ValueError):
        BackendSpec(kind="threshold", percentile=0)


def test_oracle_pass_through(tmp_path):
    _, gt = make_phantom()
    write_volume(gt, tmp_path / "caseA.nii.gz")
    spec = BackendSpec(kind="oracle", prediction_dir=str(tmp_path))
    vol = make_volume(gt.dims, gt.spacing, 1.0)
    out = segment(vol, spec, "caseA")
    assert np.array_equal(out.data, gt.data)


def test_oracle_missing_file(tmp_path):
    spec = BackendSpec(kind="oracle", prediction_dir=str(tmp_path))
    vol = make_volume(Dims(4, 4, 4), Spacing(1, 1, 1), 0.0)
    with pytest.raises(BackendError, match="missing"):
        segment(vol, spec, "caseB")


def test_oracle_geometry_mismatch(tmp_path):
    _, gt = make_phantom(Dims(32, 32, 12))
    write_volume(gt, tmp_path / "caseC.nii.gz")
    spec = BackendSpec(kind="oracle", prediction_dir=str(tmp_path))
    vol = make_volume(Dims(16, 16, 8), Spacing(0.625, 0.625, 2.5), 0.0)
    with pytest.raises(BackendError, match="geometry"):
        segment(vol, spec, "caseC")


def test_threshold_marks_everything_above_percentile():
    rng = np.random.default_rng(40)
    vol = random_volume(rng, Dims(14, 13, 12))
    spec = BackendSpec(kind="threshold", percentile=90)
    out = segment(vol, spec, "t")
    # nearest-rank percentile oracle over the sorted intensities
    ordered = sorted(vol.data.ravel().tolist())
    k = (90 * len(ordered) + 99) // 100
    thr = ordered[k - 1]
    above = vol.data > thr
    # backend keeps the largest component of `above`, so mask ⊆ above
    assert not out.data[~above].any()
    assert out.data.sum() <= above.sum()


def test_threshold_bright_phantom_centroid():
    vol, gt = make_phantom()
    spec = BackendSpec(kind="threshold", percentile=90)
    out = coarse_segment(vol, spec, "p")
    assert set(np.unique(out.data)) <= {0, 1}
    fg = np.argwhere(out.data)
    zc, yc, xc = fg.mean(axis=0)
    gz, gy, gx = np.argwhere(gt.data > 1).mean(axis=0)
    assert abs(xc - gx) <= 2 and abs(yc - gy) <= 2 and abs(zc - gz) <= 2


def test_threshold_constant_volume_is_empty():
    vol = make_volume(Dims(6, 6, 6), Spacing(1, 1, 1), 5.0)
    out = segment(vol, BackendSpec(kind="threshold", percentile=90), "c")
    assert not out.data.any()


def test_external_echo_contract(tmp_path):
    # the command copies a stored mask to {output}; {input} is substituted but unused
    _, gt = make_phantom(Dims(24, 24, 12))
    stored = tmp_path / "stored.nii.gz"
    write_volume(gt, stored)
    script = tmp_path / "fake_model.py"
    script.write_text(
        "import shutil, sys\n"
        "shutil.copyfile(sys.argv[1], sys.argv[2])\n")
    spec = BackendSpec(kind="external",
                       command=f"{sys.executable} {script} {stored} {{output}} {{input}}",
                       timeout_s=60)
    vol = make_volume(gt.dims, gt.spacing, 1.0)
    out = segment(vol, spec, "ext")
    assert np.array_equal(out.data, gt.data)


def test_external_nonzero_exit(tmp_path):
    script = tmp_path / "fail.py"
    script.write_text("import sys; sys.exit(3)\n")
    spec = BackendSpec(kind="external",
                       command=f"{sys.executable} {script} {{input}} {{output}}", timeout_s=60)
    vol = make_volume(Dims(4, 4, 4), Spacing(1, 1, 1), 0.0)
    with pytest.raises(BackendError, match="exited 3"):
        segment(vol, spec, "bad")


def test_external_timeout(tmp_path):
    script = tmp_path / "hang.py"
    script.write_text("import time; time.sleep(30)\n")
    spec = BackendSpec(kind="external",
                       command=f"{sys.executable} {script} {{input}} {{output}}", timeout_s=1.0)
    vol = make_volume(Dims(4, 4, 4), Spacing(1, 1, 1), 0.0)
    with pytest.raises(BackendError, match="timed out"):
        segment(vol, spec, "slow")


def test_external_round_trips_input(tmp_path):
    # the command turns {input} into a mask: proves the input file is the ROI volume
    script = tmp_path / "echo_thresh.py"
    script.write_text(
        "import sys\n"
        "sys.path.insert(0, sys.argv[3])\n"
        "from atriaseg import nifti, LabelMap\n"
        "vol = nifti.read_volume(sys.argv[1])\n"
        "mask = (vol.data > vol.data.mean()).astype('uint8')\n"
        "nifti.write_volume(LabelMap(vol.dims, vol.spacing, mask), sys.argv[2])\n")
    import atriaseg
    pkg_root = str(next(iter(atriaseg.__path__)))[: -len("/atriaseg")]
    spec = BackendSpec(kind="external",
                       command=f"{sys.executable} {script} {{input}} {{output}} {pkg_root}",
                       timeout_s=120)
    rng = np.random.default_rng(41)
    vol = random_volume(rng, Dims(10, 10, 6))
    out = segment(vol, spec, "rt", allowed=(0, 1))
    expected = (vol.data > vol.data.mean()).astype(np.uint8)
    assert np.array_equal(out.data, expected)


def test_coarse_segment_rejects_multiclass(tmp_path):
    _, gt = make_phantom(Dims(24, 24, 12))
    write_volume(gt, tmp_path / "m.nii.gz")  # contains labels 2 and 3
    spec = BackendSpec(kind="oracle", prediction_dir=str(tmp_path), pattern="m.nii.gz")
    vol = make_volume(gt.dims, gt.spacing, 0.0)
    with pytest.raises(BackendError):
        coarse_segment(vol, spec, "m")
