#!/usr/bin/env python3
"""Timing comparison of the numba kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/kernel_bench.py [--repeats N]

Each kernel is timed on a representative workload (a 420x420 template
raster, a 30x30 descriptor grid, a few thousand matches). The numba path is
warmed up once before timing so JIT compilation is excluded.
"""

import argparse
import time

import numpy as np

from bowpose.geometry import Pose
from bowpose.kernels import numba_impl, numpy_impl
from bowpose.rendering import sample_rotations
from bowpose.synth import blob_mesh


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workloads():
    rng = np.random.default_rng(0)
    mesh = blob_mesh()
    pose = Pose(sample_rotations(8, 0)[3], np.array([0.0, 0.0, 500.0]))
    verts = np.ascontiguousarray(pose.apply(mesh.vertices))
    raster_args = (verts, mesh.triangles, mesh.colors,
                   420.0, 420.0, 210.0, 210.0, 420, 420)

    gray = rng.uniform(size=(420, 420))
    src = rng.uniform(size=(480, 640, 3))
    h_inv = np.linalg.inv(np.array([[0.8, 0.05, 30.0],
                                    [-0.03, 0.85, 12.0],
                                    [1e-5, -2e-5, 1.0]]))
    query = rng.normal(size=(900, 128))
    ref = rng.normal(size=(900, 128))
    centroids = rng.normal(size=(512, 128))

    return [
        ("rasterize 420x420", lambda impl: impl.rasterize(*raster_args)),
        ("warp_bilinear 420x420",
         lambda impl: impl.warp_bilinear(src, h_inv, 420, 420)),
        ("warp_nearest 420x420",
         lambda impl: impl.warp_nearest(src[:, :, 0], h_inv, 420, 420)),
        ("gradient_grid 30x30",
         lambda impl: impl.gradient_grid(gray, 14)),
        ("nn_match 900x900", lambda impl: impl.nn_match(query, ref)),
        ("assign_topk 900x512",
         lambda impl: impl.assign_topk(query, centroids, 3)),
    ]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=3,
                        help="timed repeats per kernel, best is reported")
    args = parser.parse_args()

    print(f"{'kernel':<26} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, call in workloads():
        call(numba_impl)  # JIT warm-up
        t_np = _time(lambda: call(numpy_impl), args.repeats)
        t_nb = _time(lambda: call(numba_impl), args.repeats)
        print(f"{name:<26} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
