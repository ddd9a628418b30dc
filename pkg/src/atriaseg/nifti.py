"""NIfTI-1 reader/writer for the subset the pipeline needs.

Single-file images only (.nii / .nii.gz), 348-byte header, datatypes uint8,
int16 and float32, both endiannesses on read. Orientation fields beyond
pixdim are ignored: the pipeline operates purely in voxel space. A plain
text+raw fixture format is provided for hand-written test volumes.
"""

from __future__ import annotations

import gzip
import io
import struct
from pathlib import Path

import numpy as np

from .geometry import Dims, LabelMap, Spacing, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"
GZIP_MAGIC = b"\x1f\x8b"

# NIfTI datatype code -> numpy dtype (unsized, byte order applied at parse)
DTYPES = {2: "u1", 4: "i2", 16: "f4"}


class NiftiError(ValueError):
    """Base class for NIfTI parse/validation failures."""


class HeaderError(NiftiError):
    """Malformed header; names the offending field."""

    def __init__(self, field: str, detail: str):
        self.field = field
        super().__init__(f"malformed NIfTI header field {field!r}: {detail}")


class UnsupportedDatatypeError(NiftiError):
    def __init__(self, code: int):
        self.code = code
        super().__init__(
            f"unsupported NIfTI datatype code {code} (supported: 2=uint8, 4=int16, 16=float32)")


class TruncatedPayloadError(NiftiError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"truncated voxel payload: expected {expected} bytes, found {actual}")


class NonFiniteDataError(NiftiError):
    def __init__(self):
        super().__init__("volume payload contains non-finite values after scaling")


class LabelValueError(NiftiError):
    """Label file holds a value outside the permitted set, or a non-integer."""

    def __init__(self, detail: str):
        super().__init__(detail)


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    raw = path.read_bytes()
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiError(f"corrupt gzip stream in {path}: {exc}") from exc
    return raw


def _parse_header(raw: bytes):
    """Returns (dims, spacing, dtype_code, byte_order, vox_offset, slope, inter)."""
    if len(raw) < HEADER_SIZE:
        raise HeaderError("sizeof_hdr", f"file holds only {len(raw)} bytes, header needs {HEADER_SIZE}")

    # Endianness: dim[0] must land in 1..7 when read with the right byte order.
    dim0_le = struct.unpack_from("<h", raw, 40)[0]
    if 1 <= dim0_le <= 7:
        order = "<"
    else:
        dim0_be = struct.unpack_from(">h", raw, 40)[0]
        if 1 <= dim0_be <= 7:
            order = ">"
        else:
            raise HeaderError("dim[0]", f"value {dim0_le} (LE) / {dim0_be} (BE) is not in 1..7")

    sizeof_hdr = struct.unpack_from(order + "i", raw, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        raise HeaderError("sizeof_hdr", f"expected {HEADER_SIZE}, got {sizeof_hdr}")
    if raw[344:348] != MAGIC:
        raise HeaderError("magic", f"expected {MAGIC!r} (single-file NIfTI-1), got {raw[344:348]!r}")

    dim = struct.unpack_from(order + "8h", raw, 40)
    if dim[0] not in (2, 3):
        raise HeaderError("dim[0]", f"only 2D/3D images supported, got rank {dim[0]}")
    nx, ny = dim[1], dim[2]
    nz = dim[3] if dim[0] == 3 else 1
    for name, v in (("dim[1]", nx), ("dim[2]", ny), ("dim[3]", nz)):
        if v < 1:
            raise HeaderError(name, f"dimension must be >= 1, got {v}")

    datatype, bitpix = struct.unpack_from(order + "2h", raw, 70)
    if datatype not in DTYPES:
        raise UnsupportedDatatypeError(datatype)
    itemsize = np.dtype(DTYPES[datatype]).itemsize
    if bitpix != itemsize * 8:
        raise HeaderError("bitpix", f"datatype {datatype} implies {itemsize * 8}, got {bitpix}")

    pixdim = struct.unpack_from(order + "8f", raw, 76)
    spacing = [pixdim[1], pixdim[2], pixdim[3] if dim[0] == 3 else 1.0]
    for axis, v in zip("xyz", spacing):
        if not (np.isfinite(v) and v > 0):
            raise HeaderError(f"pixdim[{axis}]", f"spacing must be a positive real, got {v}")

    vox_offset, scl_slope, scl_inter = struct.unpack_from(order + "3f", raw, 108)
    if not np.isfinite(vox_offset) or vox_offset < VOX_OFFSET:
        raise HeaderError("vox_offset", f"must be >= {VOX_OFFSET}, got {vox_offset}")
    if not np.isfinite(scl_slope):
        raise HeaderError("scl_slope", f"must be finite, got {scl_slope}")
    if not np.isfinite(scl_inter):
        raise HeaderError("scl_inter", f"must be finite, got {scl_inter}")

    dims = Dims(int(nx), int(ny), int(nz))
    return dims, Spacing(*spacing), datatype, order, int(vox_offset), scl_slope, scl_inter


def _read_scaled(path) -> tuple[Dims, Spacing, np.ndarray]:
    raw = _read_bytes(path)
    dims, spacing, dtype_code, order, vox_offset, slope, inter = _parse_header(raw)
    itemsize = np.dtype(DTYPES[dtype_code]).itemsize
    need = dims.voxel_count * itemsize
    have = len(raw) - vox_offset
    if have < need:
        raise TruncatedPayloadError(need, max(have, 0))
    payload = np.frombuffer(raw, dtype=order + DTYPES[dtype_code], count=dims.voxel_count,
                            offset=vox_offset)
    data = payload.astype(np.float64)
    if slope != 0.0:
        data = data * np.float64(slope) + np.float64(inter)
    return dims, spacing, data.reshape(dims.shape)


def read_volume(path) -> Volume:
    """Load an intensity volume; applies scl_slope/scl_inter when slope != 0."""
    dims, spacing, data = _read_scaled(path)
    if not np.isfinite(data).all():
        raise NonFiniteDataError()
    return Volume(dims, spacing, data.astype(np.float32))


def read_labels(path, allowed: tuple[int, ...] = (0, 1, 2, 3)) -> LabelMap:
    """Load a label map, checking values are integers within ``allowed``."""
    dims, spacing, data = _read_scaled(path)
    rounded = np.rint(data)
    if not np.array_equal(rounded, data):
        bad = np.argwhere(rounded != data)[0]
        z, y, x = (int(i) for i in bad)
        raise LabelValueError(
            f"non-integral label value {data[z, y, x]!r} at voxel ({x}, {y}, {z})")
    lookup = np.zeros(256, dtype=bool)
    lookup[list(allowed)] = True
    as_int = rounded.astype(np.int64)
    out_of_range = (as_int < 0) | (as_int > 255)
    bad_mask = out_of_range | ~lookup[np.clip(as_int, 0, 255)]
    if bad_mask.any():
        z, y, x = (int(i) for i in np.argwhere(bad_mask)[0])
        raise LabelValueError(
            f"label value {int(as_int[z, y, x])} at voxel ({x}, {y}, {z}) "
            f"is outside the allowed set {sorted(allowed)}")
    return LabelMap(dims, spacing, as_int.astype(np.uint8))


def _build_header(dims: Dims, spacing: Spacing, dtype_code: int) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, dims.nx, dims.ny, dims.nz, 1, 1, 1, 1)
    itemsize = np.dtype(DTYPES[dtype_code]).itemsize
    struct.pack_into("<2h", hdr, 70, dtype_code, itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing.dx, spacing.dy, spacing.dz, 0, 0, 0, 0)
    struct.pack_into("<3f", hdr, 108, float(VOX_OFFSET), 1.0, 0.0)
    hdr[344:348] = MAGIC
    return bytes(hdr)


def write_volume(obj: Volume | LabelMap, path, gzip_compress: bool | None = None) -> None:
    """Write a volume (float32) or label map (uint8) as single-file NIfTI-1.

    ``gzip_compress=None`` infers compression from a ``.gz`` suffix. Output
    is little-endian with scl_slope=1, scl_inter=0; gzip streams carry a
    zero mtime so identical inputs produce byte-identical files.
    """
    path = Path(path)
    if gzip_compress is None:
        gzip_compress = path.name.endswith(".gz")
    if isinstance(obj, LabelMap):
        dtype_code, payload = 2, obj.data
    else:
        dtype_code, payload = 16, obj.data
    blob = (_build_header(obj.dims, obj.spacing, dtype_code)
            + b"\x00\x00\x00\x00"  # no header extensions
            + payload.astype("<" + DTYPES[dtype_code], copy=False).tobytes())
    if gzip_compress:
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(blob)
        blob = buf.getvalue()
    path.write_bytes(blob)


# ---------------------------------------------------------------------------
# Text+raw fixture format: a handful of header lines, a "---" separator,
# then the raw little-endian payload (x fastest). Meant for hand-written
# test cases, not for interchange.

_FIXTURE_DTYPES = {"volume": "<f4", "labels": "<u1"}


def write_fixture(obj: Volume | LabelMap, path) -> None:
    kind = "labels" if isinstance(obj, LabelMap) else "volume"
    head = (f"atriavol 1\n"
            f"kind {kind}\n"
            f"dims {obj.dims.nx} {obj.dims.ny} {obj.dims.nz}\n"
            f"spacing {obj.spacing.dx!r} {obj.spacing.dy!r} {obj.spacing.dz!r}\n"
            f"---\n")
    Path(path).write_bytes(head.encode("ascii")
                           + obj.data.astype(_FIXTURE_DTYPES[kind], copy=False).tobytes())


def read_fixture(path) -> Volume | LabelMap:
    raw = Path(path).read_bytes()
    sep = raw.find(b"---\n")
    if sep < 0:
        raise NiftiError(f"fixture {path} has no '---' header separator")
    fields = {}
    for line in raw[:sep].decode("ascii").splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            fields[key] = value.strip()
    if fields.get("atriavol") != "1":
        raise NiftiError(f"fixture {path} has unknown version {fields.get('atriavol')!r}")
    kind = fields["kind"]
    if kind not in _FIXTURE_DTYPES:
        raise NiftiError(f"fixture {path} has unknown kind {kind!r}")
    dims = Dims(*(int(v) for v in fields["dims"].split()))
    spacing = Spacing(*(float(v) for v in fields["spacing"].split()))
    payload = np.frombuffer(raw, dtype=_FIXTURE_DTYPES[kind], offset=sep + 4,
                            count=dims.voxel_count).reshape(dims.shape)
    if kind == "labels":
        return LabelMap(dims, spacing, payload)
    return Volume(dims, spacing, payload)
