#!/usr/bin/env python3
"""Compare the numba kernels against the pure-numpy fallback.

Runs the forward/backward rasterizer and the K-th-neighbor search on
identical inputs under both backends, checks that the outputs agree,
and prints a timing table. Select sizes with --quick for a fast pass.

The numpy fallback is selected per-call by setting GSX_NO_NUMBA in the
environment, which both hot paths consult at dispatch time.
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np


def _timeit(fn, repeats):
    fn()                       # warmup (includes JIT compilation)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _random_cloud(rng, n):
    from gsx.types import GaussianCloud
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    coeffs = np.zeros((n, 3, 1))
    coeffs[:, :, 0] = rng.normal(0.0, 0.8, (n, 3))
    return GaussianCloud(
        positions=rng.uniform(-1, 1, (n, 3)),
        rotations=quats,
        scales=rng.uniform(0.02, 0.12, (n, 3)),
        opacities=rng.uniform(0.2, 0.95, n),
        object_features=rng.normal(0.0, 0.5, (n, 8)),
        color_coeffs=coeffs)


def _camera(size):
    from gsx.types import Camera
    return Camera(width=size, height=size, fx=1.2 * size, fy=1.2 * size,
                  cx=size / 2, cy=size / 2, rotation=np.eye(3),
                  translation=np.array([0.0, 0.0, 4.0]))


def bench_renderer(n_gaussians, image_size, repeats):
    from gsx.renderer import render, render_backward
    rng = np.random.default_rng(0)
    cloud = _random_cloud(rng, n_gaussians)
    cam = _camera(image_size)
    d_color = rng.normal(size=(image_size, image_size, 3))

    results = {}
    outputs = {}
    for backend, flag in (("numba", "0"), ("numpy", "1")):
        os.environ["GSX_NO_NUMBA"] = flag
        results[f"forward/{backend}"] = _timeit(
            lambda: render(cloud, cam), repeats)
        results[f"backward/{backend}"] = _timeit(
            lambda: render_backward(cloud, cam, None, d_color=d_color),
            repeats)
        outputs[backend] = render(cloud, cam).color
    drift = float(np.abs(outputs["numba"] - outputs["numpy"]).max())
    assert drift < 1e-9, f"backend outputs diverged by {drift}"
    return results


def bench_knn(n_points, k, repeats):
    from gsx.pruning import kth_neighbor_distances
    rng = np.random.default_rng(1)
    pts = rng.random((n_points, 3))
    results = {}
    outputs = {}
    for backend, flag in (("numba", "0"), ("numpy", "1")):
        os.environ["GSX_NO_NUMBA"] = flag
        results[f"knn/{backend}"] = _timeit(
            lambda: kth_neighbor_distances(pts, k), repeats)
        outputs[backend] = kth_neighbor_distances(pts, k)
    assert np.array_equal(outputs["numba"], outputs["numpy"]), \
        "backend K-th distances diverged"
    return results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--quick", action="store_true",
                   help="smaller workloads for a fast smoke run")
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args()

    if args.quick:
        cases_render = [(500, 64)]
        cases_knn = [(20_000, 16)]
    else:
        cases_render = [(500, 64), (2000, 128), (5000, 128)]
        cases_knn = [(20_000, 16), (100_000, 16), (200_000, 64)]

    rows = []
    for n, size in cases_render:
        res = bench_renderer(n, size, args.repeats)
        for op in ("forward", "backward"):
            tn = res[f"{op}/numba"]
            tp = res[f"{op}/numpy"]
            rows.append((f"render {op} n={n} {size}x{size}", tn, tp))
    for n, k in cases_knn:
        res = bench_knn(n, k, args.repeats)
        rows.append((f"knn n={n} k={k}", res["knn/numba"],
                     res["knn/numpy"]))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'numba':>10}  {'numpy':>10}  {'speedup':>8}")
    for label, tn, tp in rows:
        print(f"{label:<{width}}  {tn * 1e3:>8.1f}ms  {tp * 1e3:>8.1f}ms  "
              f"{tp / tn:>7.1f}x")


if __name__ == "__main__":
    main()
