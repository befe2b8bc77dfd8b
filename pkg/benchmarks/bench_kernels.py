"""Compare the compiled kernels against the pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--particles N] [--steps K]

Times one full MPM step, splat compositing of a synthetic scene, and batched
point-to-triangle distance queries on both backends, and reports the speedup.
"""

import argparse
import time

import numpy as np

from splatsim import _kernels
from splatsim import mpm
from splatsim.gaussian_scene import Scene
from splatsim.interior_fill import heightfield_surface, nearest_surface_distances
from splatsim.render import Camera, render


def time_it(fn, repeat):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_mpm(n_particles, steps):
    side = round(n_particles ** (1 / 3))
    spacing = 1.0 / side
    parts = mpm.ParticleSet.lattice((2, 2, 0), (3, 3, 1.5), spacing * 1.5, 2000.0)
    mat = mpm.MaterialParams(youngs_modulus=3e6)
    cfg = mpm.SimConfig(dx=3 * spacing, domain_lo=(0, 0, 0), domain_hi=(5, 5, 2.5))
    results = {}
    for backend in _kernels.available_backends():
        state = mpm.make_state(parts.copy(), mat, cfg)

        def one():
            for _ in range(steps):
                mpm.step(state, backend=backend)
        results[backend] = time_it(one, 3) / steps
    return len(parts), results


def bench_render(n_splats):
    rng = np.random.default_rng(0)
    centers = np.column_stack([rng.uniform(2, 8, n_splats),
                               rng.uniform(-1.5, 1.5, n_splats),
                               rng.uniform(-1.0, 1.0, n_splats)])
    scene = Scene(centers, np.log(rng.uniform(0.03, 0.25, (n_splats, 3))),
                  np.tile([1.0, 0, 0, 0], (n_splats, 1)),
                  rng.uniform(-1, 3, n_splats), rng.uniform(-1, 1, (n_splats, 3)))
    cam = Camera.from_look_at(position=(0, 0, 0), target=(1, 0, 0), fx=300.0,
                              width=640, height=480, near=0.1)
    results = {}
    for backend in _kernels.available_backends():
        results[backend] = time_it(lambda: render(scene, cam, backend=backend), 3)
    return results


def bench_mesh(n_points):
    rng = np.random.default_rng(1)
    xs = np.linspace(0, 4, 30)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel(),
                               2.0 + 0.3 * np.sin(gx.ravel()) * np.cos(gy.ravel())])
    n = len(centers)
    scene = Scene(centers, np.zeros((n, 3)), np.tile([1.0, 0, 0, 0], (n, 1)),
                  np.zeros(n), np.zeros((n, 3)))
    mesh = heightfield_surface(scene, 0.2)
    pts = rng.uniform([0, 0, 0], [4, 4, 2], (n_points, 3))
    results = {}
    for backend in _kernels.available_backends():
        results[backend] = time_it(
            lambda: nearest_surface_distances(pts, mesh, backend=backend), 3)
    return len(mesh.triangles), results


def show(label, results, unit="ms", scale=1e3):
    py = results.get("python")
    nat = results.get("native")
    line = f"{label:<44}"
    if py is not None:
        line += f" python {py * scale:9.2f} {unit}"
    if nat is not None:
        line += f"  native {nat * scale:9.2f} {unit}  ({py / nat:5.1f}x)"
    print(line)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--particles", type=int, default=8000)
    ap.add_argument("--steps", type=int, default=10)
    ap.add_argument("--splats", type=int, default=20000)
    ap.add_argument("--points", type=int, default=4000)
    args = ap.parse_args()

    print(f"backends available: {', '.join(_kernels.available_backends())}")
    n, res = bench_mpm(args.particles, args.steps)
    show(f"mpm step ({n} particles)", res)
    res = bench_render(args.splats)
    show(f"splat render ({args.splats} splats, 640x480)", res)
    ntri, res = bench_mesh(args.points)
    show(f"mesh distance ({args.points} pts x {ntri} tris)", res)


if __name__ == "__main__":
    main()
