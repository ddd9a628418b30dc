/**
 * Parity tests: every bound operation must reproduce the pipeline CLI's
 * own output on the same fixtures — bit-equal for CLAHE and
 * post-processing, exact JSON values for the metrics.
 */

import { execFile } from "node:child_process";
import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

import { afterAll, describe, expect, it } from "vitest";

import {
  claheVolume,
  decodeNifti,
  encodeNifti,
  evaluatePair,
  nativeVersion,
  postprocessLabels,
  VERSION,
  type Vec3,
} from "../src/index.js";

const execFileAsync = promisify(execFile);
const CLI = (process.env.ATRIASEG_CLI ?? "atriaseg").split(/\s+/);

async function cli(args: string[]): Promise<string> {
  const [cmd, ...prefix] = CLI;
  const { stdout } = await execFileAsync(cmd as string, [...prefix, ...args], {
    maxBuffer: 64 * 1024 * 1024,
  });
  return stdout;
}

/** Deterministic PRNG so fixtures are stable across runs. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const DIMS: Vec3 = [20, 18, 12];
const SPACING: Vec3 = [0.625, 0.625, 2.5];
const N = DIMS[0] * DIMS[1] * DIMS[2];

function randomVolume(seed: number): Float32Array {
  const rand = mulberry32(seed);
  const data = new Float32Array(N);
  for (let i = 0; i < N; i++) data[i] = Math.fround(rand() * 200 - 40);
  return data;
}

function randomLabels(seed: number): Uint8Array {
  const rand = mulberry32(seed);
  const data = new Uint8Array(N);
  for (let i = 0; i < N; i++) data[i] = Math.floor(rand() * 4);
  return data;
}

/** A solid block of class 2 with a hollow interior. */
function hollowShell(): Uint8Array {
  const [nx, ny] = DIMS;
  const data = new Uint8Array(N);
  const at = (x: number, y: number, z: number) => x + nx * (y + ny * z);
  for (let z = 2; z < 9; z++)
    for (let y = 3; y < 12; y++)
      for (let x = 3; x < 14; x++) data[at(x, y, z)] = 2;
  for (let z = 4; z < 7; z++)
    for (let y = 6; y < 9; y++)
      for (let x = 6; x < 11; x++) data[at(x, y, z)] = 0;
  return data;
}

const scratchDirs: string[] = [];
afterAll(async () => {
  await Promise.all(scratchDirs.map((dir) => rm(dir, { recursive: true, force: true })));
});

async function scratch(): Promise<string> {
  const dir = await mkdtemp(join(tmpdir(), "atriaseg-test-"));
  scratchDirs.push(dir);
  return dir;
}

describe("claheVolume", () => {
  it("leaves a constant volume unchanged", async () => {
    const data = new Float32Array(N).fill(7.5);
    const out = await claheVolume(data, DIMS, SPACING);
    expect(out).toEqual(data);
  });

  it.each([1, 42, 1337])("is bit-equal to the CLI on shared fixture %d", async (seed) => {
    const data = randomVolume(seed);
    const dir = await scratch();
    const input = join(dir, "in.nii");
    const reference = join(dir, "ref.nii");
    await writeFile(input, encodeNifti({ dims: DIMS, spacing: SPACING, data }));
    await cli(["clahe", input, reference, "--tiles", "4", "4", "3", "--bins", "64",
               "--clip", "0.02"]);
    const expected = decodeNifti(await readFile(reference)).data as Float32Array;

    const bound = await claheVolume(data, DIMS, SPACING,
                                    { tiles: [4, 4, 3], bins: 64, clipFraction: 0.02 });
    expect(new Uint8Array(bound.buffer)).toEqual(new Uint8Array(expected.buffer));
  });

  it("rejects non-3D dims", async () => {
    const data = new Float32Array(16);
    await expect(claheVolume(data, [4, 4] as unknown as Vec3, SPACING))
      .rejects.toThrow(/expected 3 dimensions/);
  });

  it("rejects non-float32 data", async () => {
    const data = new Float64Array(N) as unknown as Float32Array;
    await expect(claheVolume(data, DIMS, SPACING)).rejects.toThrow(/Float32Array/);
  });
});

describe("postprocessLabels", () => {
  it("keeps a clean map unchanged", async () => {
    const data = hollowShell();
    // fill the cavity first so the fixture is already clean
    const clean = await postprocessLabels(data, DIMS, SPACING);
    const again = await postprocessLabels(clean, DIMS, SPACING);
    expect(again).toEqual(clean);
  });

  it("fills a hollow shell, equal to the CLI output", async () => {
    const data = hollowShell();
    const dir = await scratch();
    const input = join(dir, "in.nii");
    const reference = join(dir, "ref.nii");
    await writeFile(input, encodeNifti({ dims: DIMS, spacing: SPACING, data }));
    await cli(["postprocess", "--input", input, "--output", reference]);
    const expected = decodeNifti(await readFile(reference)).data as Uint8Array;

    const bound = await postprocessLabels(data, DIMS, SPACING);
    expect(bound).toEqual(expected);
    // the cavity voxel at the centre became class 2
    const at = (x: number, y: number, z: number) => x + DIMS[0] * (y + DIMS[1] * z);
    expect(bound[at(8, 7, 5)]).toBe(2);
    expect(data[at(8, 7, 5)]).toBe(0);
  });

  it("rejects float arrays", async () => {
    const data = new Float32Array(N) as unknown as Uint8Array;
    await expect(postprocessLabels(data, DIMS, SPACING)).rejects.toThrow(/Uint8Array/);
  });

  it("surfaces out-of-set label errors from the CLI", async () => {
    const data = randomLabels(2);
    data[5] = 7;
    await expect(postprocessLabels(data, DIMS, SPACING)).rejects.toThrow(/label value 7/);
  });
});

describe("evaluatePair", () => {
  it("returns (1.0, 0.0) for identical arrays", async () => {
    const labels = randomLabels(3);
    labels[0] = 1; // make sure class 1 exists
    const metrics = await evaluatePair(labels, labels, DIMS, SPACING, 1);
    expect(metrics.dice).toBe(1.0);
    expect(metrics.hd95mm).toBe(0.0);
    expect(metrics.hd95Status).toBe("ok");
  });

  it("matches the CLI evaluate output exactly on a fixture pair", async () => {
    const pred = randomLabels(4);
    const gt = randomLabels(5);
    pred[0] = 1;
    gt[1] = 1;
    const dir = await scratch();
    const predPath = join(dir, "pred.nii");
    const gtPath = join(dir, "gt.nii");
    const configPath = join(dir, "config.json");
    await writeFile(predPath, encodeNifti({ dims: DIMS, spacing: SPACING, data: pred }));
    await writeFile(gtPath, encodeNifti({ dims: DIMS, spacing: SPACING, data: gt }));
    await writeFile(configPath, JSON.stringify({
      labels: { background: 0, class1: 1, value2: 2, value3: 3 },
      class_order: ["class1"],
      compute_thickness: false,
    }));
    const stdout = await cli(["evaluate", "--config", configPath,
                              "--pred", predPath, "--gt", gtPath]);
    const reference = JSON.parse(stdout).classes.class1;

    const metrics = await evaluatePair(pred, gt, DIMS, SPACING, 1);
    expect(metrics.dice).toBe(reference.dice);
    expect(metrics.hd95mm).toBe(reference.hd95_mm);
  });

  it("reports undefined HD95 distinctly when a side lacks the class", async () => {
    const pred = new Uint8Array(N); // class 3 absent
    const gt = randomLabels(6);
    gt[10] = 3;
    const metrics = await evaluatePair(pred, gt, DIMS, SPACING, 3);
    expect(metrics.dice).toBe(0.0);
    expect(metrics.hd95mm).toBeNull();
    expect(metrics.hd95Status).toBe("pred_empty");
  });

  it("rejects mismatched shapes", async () => {
    const pred = new Uint8Array(N);
    const gt = new Uint8Array(N - 8);
    await expect(evaluatePair(pred, gt, DIMS, SPACING, 1)).rejects.toThrow(/shape mismatch/);
  });
});

describe("process contract", () => {
  it("version matches the CLI", async () => {
    expect(await nativeVersion()).toBe(VERSION);
  });

  it("is reentrant: concurrent calls do not interfere", async () => {
    const a = randomVolume(7);
    const b = randomVolume(8);
    const [outA1, outB, outA2] = await Promise.all([
      claheVolume(a, DIMS, SPACING),
      claheVolume(b, DIMS, SPACING),
      claheVolume(a, DIMS, SPACING),
    ]);
    expect(new Uint8Array(outA1.buffer)).toEqual(new Uint8Array(outA2.buffer));
    expect(outB).not.toEqual(outA1);
  });
});
