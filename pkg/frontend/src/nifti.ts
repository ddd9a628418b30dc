/**
 * Minimal single-file NIfTI-1 reader/writer for exchanging volumes with
 * the pipeline CLI. Little-endian only on write (what the CLI emits and
 * what every platform this runs on uses for typed arrays); gzip streams
 * are detected by their magic bytes on read.
 */

import { gunzipSync } from "node:zlib";

export type Vec3 = [number, number, number];

const HEADER_SIZE = 348;
const VOX_OFFSET = 352;
const DT_UINT8 = 2;
const DT_FLOAT32 = 16;

export interface NiftiVolume {
  dims: Vec3; // (nx, ny, nz)
  spacing: Vec3; // millimetres per voxel
  data: Float32Array | Uint8Array; // x fastest, then y, then z
}

function buildHeader(dims: Vec3, spacing: Vec3, datatype: number, bitpix: number): Buffer {
  const hdr = Buffer.alloc(HEADER_SIZE);
  hdr.writeInt32LE(HEADER_SIZE, 0);
  hdr.writeInt16LE(3, 40); // dim[0]
  hdr.writeInt16LE(dims[0], 42);
  hdr.writeInt16LE(dims[1], 44);
  hdr.writeInt16LE(dims[2], 46);
  for (let i = 4; i <= 7; i++) hdr.writeInt16LE(1, 40 + 2 * i);
  hdr.writeInt16LE(datatype, 70);
  hdr.writeInt16LE(bitpix, 72);
  hdr.writeFloatLE(1.0, 76); // pixdim[0]
  hdr.writeFloatLE(spacing[0], 80);
  hdr.writeFloatLE(spacing[1], 84);
  hdr.writeFloatLE(spacing[2], 88);
  hdr.writeFloatLE(VOX_OFFSET, 108);
  hdr.writeFloatLE(1.0, 112); // scl_slope
  hdr.writeFloatLE(0.0, 116); // scl_inter
  hdr.write("n+1\0", 344, "latin1");
  return hdr;
}

export function encodeNifti(volume: NiftiVolume): Buffer {
  const [nx, ny, nz] = volume.dims;
  const expected = nx * ny * nz;
  if (volume.data.length !== expected) {
    throw new RangeError(
      `payload length ${volume.data.length} does not match dims ${nx}x${ny}x${nz} = ${expected}`,
    );
  }
  const isLabels = volume.data instanceof Uint8Array;
  const header = buildHeader(
    volume.dims,
    volume.spacing,
    isLabels ? DT_UINT8 : DT_FLOAT32,
    isLabels ? 8 : 32,
  );
  const payload = Buffer.from(volume.data.buffer, volume.data.byteOffset, volume.data.byteLength);
  return Buffer.concat([header, Buffer.alloc(4), payload]);
}

export function decodeNifti(raw: Buffer): NiftiVolume {
  if (raw.length >= 2 && raw[0] === 0x1f && raw[1] === 0x8b) {
    raw = gunzipSync(raw);
  }
  if (raw.length < HEADER_SIZE) {
    throw new RangeError(`file too short for a NIfTI-1 header (${raw.length} bytes)`);
  }
  if (raw.readInt32LE(0) !== HEADER_SIZE) {
    throw new RangeError("not a little-endian NIfTI-1 file (sizeof_hdr mismatch)");
  }
  if (raw.toString("latin1", 344, 347) !== "n+1") {
    throw new RangeError("unsupported NIfTI magic (expected single-file n+1)");
  }
  const rank = raw.readInt16LE(40);
  if (rank !== 2 && rank !== 3) {
    throw new RangeError(`unsupported image rank ${rank}`);
  }
  const dims: Vec3 = [
    raw.readInt16LE(42),
    raw.readInt16LE(44),
    rank === 3 ? raw.readInt16LE(46) : 1,
  ];
  const spacing: Vec3 = [
    raw.readFloatLE(80),
    raw.readFloatLE(84),
    rank === 3 ? raw.readFloatLE(88) : 1.0,
  ];
  const datatype = raw.readInt16LE(70);
  const voxOffset = raw.readFloatLE(108);
  const count = dims[0] * dims[1] * dims[2];
  const start = Math.trunc(voxOffset);
  let data: Float32Array | Uint8Array;
  if (datatype === DT_FLOAT32) {
    if (raw.length < start + 4 * count) throw new RangeError("truncated float32 payload");
    data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = raw.readFloatLE(start + 4 * i);
  } else if (datatype === DT_UINT8) {
    if (raw.length < start + count) throw new RangeError("truncated uint8 payload");
    data = new Uint8Array(raw.subarray(start, start + count));
  } else {
    throw new RangeError(`unsupported datatype code ${datatype} (expected 2 or 16)`);
  }
  return { dims, spacing, data };
}
