#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy/scipy fallback.

Times the four dual-implementation hot paths on pipeline-realistic sizes
(the 320x320x44 ROI grid) and prints a comparison table.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--small]
"""

import argparse
import time

import numpy as np

from atriaseg import ClaheParams, Dims, LabelMap, Spacing, Volume, _kernels, clahe3d, \
    fill_holes_greyscale, label_components
from atriaseg.metrics import boundary_distance_field


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def make_inputs(dims: Dims, seed=0):
    rng = np.random.default_rng(seed)
    spacing = Spacing(0.625, 0.625, 2.5)
    vol = Volume(dims, spacing, rng.normal(120, 40, dims.shape).astype(np.float32))

    nz, ny, nx = dims.shape
    zz, yy, xx = np.mgrid[0:nz, 0:ny, 0:nx].astype(np.float32)
    ra = (((xx - nx * 0.4) / (nx * 0.2)) ** 2 + ((yy - ny * 0.5) / (ny * 0.22)) ** 2
          + ((zz - nz * 0.5) / (nz * 0.28)) ** 2) <= 1
    la = (((xx - nx * 0.65) / (nx * 0.17)) ** 2 + ((yy - ny * 0.5) / (ny * 0.19)) ** 2
          + ((zz - nz * 0.5) / (nz * 0.24)) ** 2) <= 1
    la &= ~ra
    shell = (((xx - nx * 0.52) / (nx * 0.34)) ** 2 + ((yy - ny * 0.5) / (ny * 0.3)) ** 2
             + ((zz - nz * 0.5) / (nz * 0.38)) ** 2) <= 1
    data = np.zeros(dims.shape, dtype=np.uint8)
    data[shell] = 1
    data[ra] = 2
    data[la] = 3
    noise = rng.random(dims.shape) < 0.001
    data[noise] = rng.integers(0, 4, int(noise.sum())).astype(np.uint8)
    labels = LabelMap(dims, spacing, data)
    return vol, labels


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--small", action="store_true", help="use a 96x96x24 grid")
    args = parser.parse_args()

    dims = Dims(96, 96, 24) if args.small else Dims(320, 320, 44)
    vol, labels = make_inputs(dims)
    binary = LabelMap(labels.dims, labels.spacing, (labels.data > 0).astype(np.uint8))

    benches = {
        "clahe3d (8x8x8 tiles, 256 bins)": lambda: clahe3d(vol, ClaheParams()),
        "label_components (6-conn)": lambda: label_components(binary),
        "fill_holes_greyscale": lambda: fill_holes_greyscale(labels),
        "wall boundary EDT": lambda: boundary_distance_field(labels, 1),
    }

    available = _kernels.available_backends()
    print(f"grid {dims.as_tuple()}, repeats={args.repeats}, backends: {', '.join(available)}\n")
    width = max(len(name) for name in benches)
    header = f"{'kernel'.ljust(width)}  " + "".join(f"{b:>12}" for b in available)
    if len(available) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, fn in benches.items():
        times = {}
        for backend in available:
            _kernels.set_backend(backend)
            fn()  # warm-up
            times[backend] = timeit(fn, args.repeats)
        row = f"{name.ljust(width)}  " + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in available)
        if "cython" in times and "python" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
