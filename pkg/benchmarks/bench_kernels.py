"""Time the compiled kernels against the numpy fallback on a box-room scan.

    python benchmarks/bench_kernels.py [--repeat N] [--width W]

Both implementations are imported directly, so the selected backend doesn't
matter. Prints best-of-N wall time per kernel and the speed-up.
"""

import argparse
import time

import numpy as np

from lidarkit import _fallback
from lidarkit.normals import NormalConfig
from lidarkit.projection import ProjectionConfig, project
from lidarkit.synthetic import SyntheticWorld
from lidarkit.voxel_map import VoxelMap

try:
    from lidarkit import _core
except ImportError:
    _core = None


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--width", type=int, default=1024)
    args = ap.parse_args()

    proj = ProjectionConfig.from_fov(args.width, 64)
    world = SyntheticWorld("box_room", projection=proj)
    pts, _ = world.scan(world.poses()[0])
    image = project(pts, proj)
    nc = NormalConfig()
    n_args = (image.vertex_map(), image.ranges, proj.full_turn, nc.discontinuity_abs,
              nc.discontinuity_rel, float(np.cos(np.deg2rad(nc.crease_angle_deg))))
    normals, valid = _fallback.normals_kernel(*n_args)
    c_args = (normals, valid, proj.full_turn, 0.26, 2.0 / 3.0)

    rng = np.random.default_rng(0)
    m = VoxelMap(0.5)
    m.add_points(pts, rng.integers(0, 5, len(pts)).astype(np.uint8), np.full((len(pts), 3), np.nan))
    q = pts[rng.choice(len(pts), 20000)] + rng.normal(scale=0.1, size=(20000, 3))
    ql = rng.integers(0, 5, len(q)).astype(np.uint8)
    v_args = (q, ql, m._vkeys, m._vstarts, m._vcounts, m.points, m.labels, m.voxel_size, 3, 1.5)

    cases = [("normals", "normals_kernel", n_args), ("classify", "classify_kernel", c_args),
             ("voxel_nn (20k queries)", "voxel_nn_kernel", v_args)]
    print(f"{len(pts)} points, {args.width}x64 image, best of {args.repeat}")
    print(f"{'kernel':<24}{'numpy [ms]':>12}{'compiled [ms]':>15}{'speed-up':>10}")
    for label, name, a in cases:
        t_py = best_of(lambda: getattr(_fallback, name)(*a), args.repeat)
        if _core is None:
            print(f"{label:<24}{t_py * 1e3:>12.2f}{'n/a':>15}{'':>10}")
            continue
        t_c = best_of(lambda: getattr(_core, name)(*a), args.repeat)
        print(f"{label:<24}{t_py * 1e3:>12.2f}{t_c * 1e3:>15.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
