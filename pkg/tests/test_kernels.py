"""The compiled kernels and the numpy fallback must agree exactly."""

import os
import subprocess
import sys

import numpy as np
import pytest

from lidarkit import _fallback, kernels
from lidarkit.classification import PointLabel
from lidarkit.normals import NormalConfig
from lidarkit.voxel_map import VoxelMap

core = pytest.importorskip("lidarkit._core", reason="compiled extension not built")


def test_backend_selected_at_import():
    assert kernels.BACKEND == ("compiled" if os.environ.get("LIDARKIT_PURE_PYTHON") != "1" else "python")


def test_pure_python_switch():
    code = "import lidarkit; print(lidarkit.BACKEND)"
    env = dict(os.environ, LIDARKIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def _normal_args(image, cfg=NormalConfig()):
    return (image.vertex_map(), image.ranges, image.config.full_turn, cfg.discontinuity_abs,
            cfg.discontinuity_rel, float(np.cos(np.deg2rad(cfg.crease_angle_deg))))


def _assert_same_normals(a, b):
    (na, va), (nb, vb) = a, b
    np.testing.assert_array_equal(va, vb)
    np.testing.assert_allclose(na[va], nb[vb], atol=1e-12)
    assert np.isnan(na[~va]).all() and np.isnan(nb[~vb]).all()


def test_normals_parity_on_scan(box_scan):
    args = _normal_args(box_scan.image)
    _assert_same_normals(core.normals_kernel(*args), _fallback.normals_kernel(*args))


def test_normals_parity_with_holes_and_noise(box_scan, rng):
    img = box_scan.image
    ranges = img.ranges.copy()
    vertex = img.vertex_map().copy()
    holes = rng.random(ranges.shape) < 0.1
    ranges[holes] = np.nan
    vertex[holes] = np.nan
    vertex += rng.normal(scale=0.01, size=vertex.shape)
    for wrap in (True, False):
        args = (vertex, ranges, wrap, 0.3, 0.05, float(np.cos(np.deg2rad(1.5))))
        _assert_same_normals(core.normals_kernel(*args), _fallback.normals_kernel(*args))


def test_classify_parity(box_scan, rng):
    n, v = box_scan.normals.normals, box_scan.normals.valid
    for wrap in (True, False):
        for edge, maj in ((0.26, 2 / 3), (0.1, 0.5), (np.pi, 1.0)):
            np.testing.assert_array_equal(core.classify_kernel(n, v, wrap, edge, maj),
                                          _fallback.classify_kernel(n, v, wrap, edge, maj))
    # random normals exercise the Edge and Unknown paths heavily
    rn = rng.normal(size=n.shape)
    rn /= np.linalg.norm(rn, axis=-1, keepdims=True)
    rv = rng.random(v.shape) < 0.7
    rn[~rv] = np.nan
    np.testing.assert_array_equal(core.classify_kernel(rn, rv, True, 0.26, 2 / 3),
                                  _fallback.classify_kernel(rn, rv, True, 0.26, 2 / 3))


def _nn_args(m, queries, qlabels, max_dist):
    rings = max(1, int(np.ceil(max_dist / m.voxel_size - 1e-12)))
    return (queries, qlabels, m._vkeys, m._vstarts, m._vcounts, m.points, m.labels,
            m.voxel_size, rings, float(max_dist))


def test_voxel_nn_parity(rng):
    m = VoxelMap(0.5, 20, np.inf)
    pts = rng.uniform(-5, 5, size=(5000, 3))
    m.add_points(pts, rng.integers(0, 5, len(pts)).astype(np.uint8), np.full((len(pts), 3), np.nan))
    q = rng.uniform(-6, 6, size=(3000, 3))
    ql = rng.integers(0, 5, len(q)).astype(np.uint8)
    for max_dist in (0.3, 0.5, 1.2):
        a = core.voxel_nn_kernel(*_nn_args(m, q, ql, max_dist))
        b = _fallback.voxel_nn_kernel(*_nn_args(m, q, ql, max_dist))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


def test_voxel_nn_parity_on_ties():
    m = VoxelMap(1.0, 20, np.inf)
    # every target is exactly 1 from the query: the lexicographically smallest must win
    targets = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], float)
    m.add_points(targets, np.full(6, PointLabel.WALL, np.uint8), np.full((6, 3), np.nan))
    q = np.zeros((1, 3))
    ql = np.array([PointLabel.WALL], np.uint8)
    a = core.voxel_nn_kernel(*_nn_args(m, q, ql, 1.5))
    b = _fallback.voxel_nn_kernel(*_nn_args(m, q, ql, 1.5))
    assert a[0][0] == b[0][0] and a[1][0] == b[1][0]
    np.testing.assert_array_equal(m.points[a[0][0]], [-1, 0, 0])


def test_empty_inputs_parity():
    m = VoxelMap(0.5)
    q = np.zeros((3, 3))
    ql = np.zeros(3, np.uint8)
    for impl in (core, _fallback):
        a, s = impl.voxel_nn_kernel(*_nn_args(m, q, ql, 1.0))
        assert (a == -1).all() and (s == -1).all()


def test_voxel_nn_parity_on_lattice_ties_and_duplicates(rng):
    # lattice points queried at cell centres: up to eight equidistant targets per query
    g = np.arange(-2.0, 2.01, 0.25)
    lattice = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = np.concatenate([lattice, lattice[::7]])  # exact duplicates too
    m = VoxelMap(0.5, 1000, np.inf)
    m.add_points(pts, rng.integers(0, 5, len(pts)).astype(np.uint8), np.full((len(pts), 3), np.nan))
    q = lattice[rng.choice(len(lattice), 500)] + 0.125
    ql = rng.integers(0, 5, len(q)).astype(np.uint8)
    for max_dist in (0.2, 0.6):
        a = core.voxel_nn_kernel(*_nn_args(m, q, ql, max_dist))
        b = _fallback.voxel_nn_kernel(*_nn_args(m, q, ql, max_dist))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
