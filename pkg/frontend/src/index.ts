/**
 * Node bindings for the atriaseg pipeline.
 *
 * Arrays cross the process boundary as NIfTI files and come back through
 * the same CLI the batch pipeline uses, so a model-hosting script gets
 * numerically identical pre/post-processing and metrics: float32 volumes
 * round-trip bit-exactly and label maps are integers throughout.
 */

import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { runCli } from "./cli.js";
import { decodeNifti, encodeNifti, type Vec3 } from "./nifti.js";

export { decodeNifti, encodeNifti } from "./nifti.js";
export type { NiftiVolume, Vec3 } from "./nifti.js";

/** Version of this package; must match the CLI's --version. */
export const VERSION = "0.1.0";

export interface ClaheOptions {
  /** Tiles per axis; tile size defaults to 1/8 of each dimension. */
  tiles?: Vec3;
  /** Histogram bins over the global intensity range. */
  bins?: number;
  /** Clip limit as a fraction of each tile's voxel count. */
  clipFraction?: number;
}

export interface PairMetrics {
  dice: number;
  /** 95% Hausdorff distance in millimetres; null when undefined. */
  hd95mm: number | null;
  /** "ok", or why HD95 is undefined (both_empty / pred_empty / gt_empty). */
  hd95Status: string;
}

function checkDims(dims: Vec3, what: string): void {
  if (!Array.isArray(dims) || dims.length !== 3) {
    throw new RangeError(`${what}: expected 3 dimensions (nx, ny, nz), got ${JSON.stringify(dims)}`);
  }
  for (const d of dims) {
    if (!Number.isInteger(d) || d < 1) {
      throw new RangeError(`${what}: dimensions must be positive integers, got ${dims}`);
    }
  }
}

function checkSpacing(spacing: Vec3, what: string): void {
  if (!Array.isArray(spacing) || spacing.length !== 3 || spacing.some((s) => !(s > 0))) {
    throw new RangeError(`${what}: spacing must be three positive numbers, got ${spacing}`);
  }
}

function checkLength(length: number, dims: Vec3, what: string): void {
  const expected = dims[0] * dims[1] * dims[2];
  if (length !== expected) {
    throw new RangeError(
      `${what}: array length ${length} does not match ${dims[0]}x${dims[1]}x${dims[2]} = ${expected}`,
    );
  }
}

async function inScratchDir<T>(fn: (dir: string) => Promise<T>): Promise<T> {
  const dir = await mkdtemp(join(tmpdir(), "atriaseg-"));
  try {
    return await fn(dir);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}

/**
 * 3D contrast-limited adaptive histogram equalisation. Bit-exact with the
 * pipeline's own CLAHE stage on the same input.
 */
export async function claheVolume(
  data: Float32Array,
  dims: Vec3,
  spacing: Vec3,
  options: ClaheOptions = {},
): Promise<Float32Array> {
  if (!(data instanceof Float32Array)) {
    throw new TypeError("claheVolume: data must be a Float32Array of intensities");
  }
  checkDims(dims, "claheVolume");
  checkSpacing(spacing, "claheVolume");
  checkLength(data.length, dims, "claheVolume");
  const tiles = options.tiles ?? [8, 8, 8];
  const bins = options.bins ?? 256;
  const clip = options.clipFraction ?? 0.01;
  return inScratchDir(async (dir) => {
    const input = join(dir, "input.nii");
    const output = join(dir, "output.nii");
    await writeFile(input, encodeNifti({ dims, spacing, data }));
    await runCli([
      "clahe", input, output,
      "--tiles", String(tiles[0]), String(tiles[1]), String(tiles[2]),
      "--bins", String(bins),
      "--clip", String(clip),
    ]);
    const out = decodeNifti(await readFile(output));
    return out.data as Float32Array;
  });
}

function labelConfig(classes: number[]): Record<string, unknown> {
  const labels: Record<string, number> = { background: 0 };
  const order: string[] = [];
  classes.forEach((cls, i) => {
    if (!Number.isInteger(cls) || cls < 1 || cls > 255) {
      throw new RangeError(`class labels must be integers in 1..255, got ${cls}`);
    }
    const name = `class${i + 1}`;
    labels[name] = cls;
    order.push(name);
  });
  return { labels, class_order: order, compute_thickness: false };
}

/**
 * Largest-component selection per class followed by greyscale hole
 * filling (face connectivity), identical to the pipeline's stage D.
 */
export async function postprocessLabels(
  labels: Uint8Array,
  dims: Vec3,
  spacing: Vec3,
  classes: number[] = [1, 2, 3],
): Promise<Uint8Array> {
  if (!(labels instanceof Uint8Array)) {
    throw new TypeError("postprocessLabels: labels must be a Uint8Array of class ids");
  }
  checkDims(dims, "postprocessLabels");
  checkSpacing(spacing, "postprocessLabels");
  checkLength(labels.length, dims, "postprocessLabels");
  return inScratchDir(async (dir) => {
    const input = join(dir, "input.nii");
    const output = join(dir, "output.nii");
    const config = join(dir, "config.json");
    await writeFile(input, encodeNifti({ dims, spacing, data: labels }));
    await writeFile(config, JSON.stringify(labelConfig(classes)));
    await runCli(["postprocess", "--config", config, "--input", input, "--output", output]);
    const out = decodeNifti(await readFile(output));
    return out.data as Uint8Array;
  });
}

/**
 * Dice and HD95 (mm) of one class between equal-shaped label arrays,
 * matching the pipeline's evaluator to full float precision. Other label
 * values present in the arrays are tolerated; only `cls` is scored.
 */
export async function evaluatePair(
  pred: Uint8Array,
  gt: Uint8Array,
  dims: Vec3,
  spacing: Vec3,
  cls = 1,
): Promise<PairMetrics> {
  if (!(pred instanceof Uint8Array) || !(gt instanceof Uint8Array)) {
    throw new TypeError("evaluatePair: pred and gt must be Uint8Array label maps");
  }
  if (pred.length !== gt.length) {
    throw new RangeError(
      `evaluatePair: shape mismatch, pred has ${pred.length} voxels, gt has ${gt.length}`,
    );
  }
  if (!Number.isInteger(cls) || cls < 1 || cls > 255) {
    throw new RangeError(`evaluatePair: class must be an integer in 1..255, got ${cls}`);
  }
  checkDims(dims, "evaluatePair");
  checkSpacing(spacing, "evaluatePair");
  checkLength(pred.length, dims, "evaluatePair");

  // the evaluator validates label values, so whitelist everything present
  const present = new Set<number>([0, cls]);
  for (const v of pred) present.add(v);
  for (const v of gt) present.add(v);
  const labels: Record<string, number> = { background: 0, class1: cls };
  for (const v of present) {
    if (v !== 0 && v !== cls) labels[`value${v}`] = v;
  }

  return inScratchDir(async (dir) => {
    const predPath = join(dir, "pred.nii");
    const gtPath = join(dir, "gt.nii");
    const jsonPath = join(dir, "metrics.json");
    const config = join(dir, "config.json");
    await writeFile(predPath, encodeNifti({ dims, spacing, data: pred }));
    await writeFile(gtPath, encodeNifti({ dims, spacing, data: gt }));
    await writeFile(config, JSON.stringify({
      labels,
      class_order: ["class1"],
      compute_thickness: false,
    }));
    await runCli([
      "evaluate", "--config", config,
      "--pred", predPath, "--gt", gtPath, "--json-out", jsonPath,
    ]);
    const doc = JSON.parse(await readFile(jsonPath, "utf8")) as {
      classes: Record<string, { dice: number; hd95_mm: number | null; hd95_status: string }>;
    };
    const entry = doc.classes["class1"];
    if (!entry) {
      throw new Error("evaluatePair: CLI output is missing the requested class");
    }
    return { dice: entry.dice, hd95mm: entry.hd95_mm, hd95Status: entry.hd95_status };
  });
}

/** Version string reported by the pipeline CLI. */
export async function nativeVersion(): Promise<string> {
  const { stdout } = await runCli(["--version"]);
  return stdout.trim();
}
