import numpy as np
import pytest
from hypothesis import given, strategies as st

from lidarkit.classification import LabeledCloud, PointLabel
from lidarkit.geometry import make_pose
from lidarkit.voxel_map import VoxelMap, downsample, voxel_cells

PLANAR = (PointLabel.GROUND, PointLabel.ROOF, PointLabel.WALL)


def _cloud(points, labels=None, with_normals=True):
    points = np.asarray(points, float).reshape(-1, 3)
    n = len(points)
    labels = np.full(n, PointLabel.WALL) if labels is None else np.asarray(labels)
    normals = np.tile([0.0, 0.0, 1.0], (n, 1)) if with_normals else np.full((n, 3), np.nan)
    return LabeledCloud(points, labels, normals)


def test_downsample_duplicates_collapse():
    assert len(downsample(_cloud(np.tile([1.2, 3.4, 5.6], (100, 1))), 0.5)) == 1


def test_downsample_keeps_separate_voxels():
    assert len(downsample(_cloud([[0.1, 0.1, 0.1], [1.1, 0.1, 0.1]]), 0.5)) == 2


def test_downsample_grid_matches_binning():
    g = np.arange(10) * 0.1 + 0.01
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    out = downsample(_cloud(pts), 0.5, adaptive=False)
    occupied = {tuple(np.floor(p / 0.5).astype(int)) for p in pts}
    assert len(out) == len(occupied)


def test_downsample_keeps_point_nearest_center(rng):
    pts = rng.uniform(-3, 3, size=(3000, 3))
    out = downsample(_cloud(pts), 0.7, adaptive=False)
    best = {}
    for p in pts:
        key = tuple(np.floor(p / 0.7).astype(int))
        d = np.sum((p - (np.array(key) + 0.5) * 0.7) ** 2)
        if key not in best or d < best[key][0]:
            best[key] = (d, tuple(p))
    assert {tuple(p) for p in out.points} == {v[1] for v in best.values()}


def test_adaptive_downsample_rates(rng):
    pts = rng.uniform(0, 4, size=(5000, 3))
    labels = np.where(np.arange(5000) % 2 == 0, PointLabel.WALL, PointLabel.EDGE)
    out = downsample(_cloud(pts, labels), 1.0, adaptive=True)
    planar = out.points[out.labels == PointLabel.WALL]
    other = out.points[out.labels == PointLabel.EDGE]
    assert len(np.unique(voxel_cells(planar, 1.0), axis=0)) == len(planar) <= 64
    assert len(np.unique(voxel_cells(other, 0.5), axis=0)) == len(other)
    assert len(other) > len(planar)


def test_downsample_carries_attributes(rng):
    pts = rng.uniform(0, 3, size=(400, 3))
    labels = rng.integers(0, 5, size=400)
    normals = rng.normal(size=(400, 3))
    c = LabeledCloud(pts, labels, normals)
    out = downsample(c, 0.5)
    lookup = {tuple(p): (l, tuple(n)) for p, l, n in zip(pts, c.labels, normals)}
    for p, l, n in zip(out.points, out.labels, out.normals):
        assert lookup[tuple(p)] == (l, tuple(n))


def test_downsample_rejects_bad_size():
    with pytest.raises(ValueError):
        downsample(_cloud(np.zeros((1, 3))), 0.0)


def test_insert_into_empty_map(rng):
    c = downsample(_cloud(rng.uniform(-5, 5, size=(2000, 3))), 0.5)
    m = VoxelMap(0.5, 20)
    m.insert(c, np.eye(4))
    assert len(m) == len(c)


def test_capacity_rule(rng):
    c = _cloud(rng.uniform(-5, 5, size=(1000, 3)))
    m = VoxelMap(0.5, max_points_per_voxel=1)
    m.insert(c, np.eye(4))
    n = len(m)
    m.insert(c, np.eye(4))
    assert len(m) == n == m.num_voxels


def test_stored_points_lie_in_their_voxels(rng):
    m = VoxelMap(0.3, 4)
    for k in range(5):
        m.insert(_cloud(rng.uniform(-3, 3, size=(800, 3))), make_pose(translation=(0.1 * k, 0, 0)))
    cells = voxel_cells(m.points, 0.3)
    keys = m.voxel_keys()
    counts = m._vcounts
    owner = np.repeat(keys, counts, axis=0)
    np.testing.assert_array_equal(cells, owner)
    assert counts.max() <= 4


def test_eviction_after_moving_away(rng):
    m = VoxelMap(1.0, 20, max_map_range=20.0)
    c = _cloud(rng.uniform(-5, 5, size=(500, 3)))
    m.insert(c, np.eye(4))
    original = {tuple(k) for k in m.voxel_keys()}
    m.insert(c, make_pose(translation=(40.0, 0, 0)))
    remaining = {tuple(k) for k in m.voxel_keys()}
    assert not original & remaining
    centers = (m.voxel_keys() + 0.5) * 1.0
    assert np.all(np.linalg.norm(centers - (40.0, 0, 0), axis=1) <= 20.0)


def test_identical_cloud_matches_itself(rng):
    c = downsample(_cloud(rng.uniform(-5, 5, size=(3000, 3))), 0.3)
    m = VoxelMap(0.5)
    m.insert(c, np.eye(4))
    corr = m.find_correspondences(c, np.eye(4), 0.5)
    assert corr.n_planar == len(c) and corr.n_point == 0
    np.testing.assert_array_equal(corr.planar_src, corr.planar_tgt)


def test_distance_gate():
    m = VoxelMap(0.5)
    m.insert(_cloud([[0.0, 0.0, 0.0]]), np.eye(4))
    corr = m.find_correspondences(_cloud([[1.0, 0.0, 0.0]]), np.eye(4), 0.5)
    assert len(corr) == 0


def _brute_force(src, src_labels, tgt, tgt_labels, tgt_has_normal, max_dist):
    """Class-wise policy by exhaustive search; ties go to the lexicographically smallest target."""
    out = []
    d = np.linalg.norm(src[:, None] - tgt[None], axis=-1)
    order = np.lexsort(tgt.T[::-1])  # lexicographic by (x, y, z)
    for i in range(len(src)):
        di = d[i][order]
        ok = di <= max_dist
        planar = src_labels[i] <= PointLabel.WALL
        pick = None
        if planar:
            same = ok & (tgt_labels[order] == src_labels[i])
            if same.any():
                pick = order[np.flatnonzero(same)[np.argmin(di[same])]]
        if pick is None and ok.any():
            pick = order[np.flatnonzero(ok)[np.argmin(di[ok])]]
        if pick is None:
            out.append(None)
        else:
            kind = "planar" if planar and tgt_has_normal[pick] else "point"
            out.append((kind, pick))
    return out


@pytest.mark.parametrize("max_dist,voxel", [(0.4, 0.5), (0.5, 0.5), (1.3, 0.5)])
def test_correspondences_match_exhaustive_search(rng, max_dist, voxel):
    tgt = rng.uniform(-3, 3, size=(500, 3))
    tgt_labels = rng.integers(0, 5, size=500)
    normals = np.where((rng.random(500) < 0.8)[:, None], np.array([0.0, 0.0, 1.0]), np.nan)
    m = VoxelMap(voxel, 1000)
    m.add_points(tgt, tgt_labels, normals)
    src = rng.uniform(-3, 3, size=(500, 3))
    src_labels = rng.integers(0, 5, size=500)
    corr = m.find_correspondences(LabeledCloud(src, src_labels, np.zeros((500, 3))), np.eye(4), max_dist)
    expect = _brute_force(src, src_labels, m.points, m.labels, np.all(np.isfinite(m.normals), axis=1), max_dist)
    planar = [(tuple(src[i]), tuple(m.points[j])) for i, e in enumerate(expect) if e and e[0] == "planar"
              for j in [e[1]]]
    point = [(tuple(src[i]), tuple(m.points[j])) for i, e in enumerate(expect) if e and e[0] == "point"
             for j in [e[1]]]
    assert sorted(zip(map(tuple, corr.planar_src), map(tuple, corr.planar_tgt))) == sorted(planar)
    assert sorted(zip(map(tuple, corr.point_src), map(tuple, corr.point_tgt))) == sorted(point)
    d = np.r_[np.linalg.norm(corr.planar_src - corr.planar_tgt, axis=1),
              np.linalg.norm(corr.point_src - corr.point_tgt, axis=1)]
    assert np.all(d <= max_dist)
    assert np.all(corr.planar_weights == 1) and np.all(corr.point_weights == 1)


def test_tie_break_is_lexicographic():
    m = VoxelMap(0.5)
    # two targets at equal distance from the query, inserted in reverse order
    m.add_points([[0.2, 0.1, 0.0], [-0.2, 0.1, 0.0]], [PointLabel.EDGE] * 2)
    corr = m.find_correspondences(_cloud([[0.0, 0.1, 0.0]], [PointLabel.EDGE]), np.eye(4), 0.5)
    np.testing.assert_array_equal(corr.point_tgt, [[-0.2, 0.1, 0.0]])


def test_planar_source_falls_back_to_any_label():
    m = VoxelMap(0.5)
    m.add_points([[0.1, 0.0, 0.0]], [PointLabel.GROUND], [[0.0, 0.0, 1.0]])
    corr = m.find_correspondences(_cloud([[0.0, 0.0, 0.0]], [PointLabel.WALL]), np.eye(4), 0.5)
    assert corr.n_planar == 1


def test_target_without_normal_becomes_point_pair():
    m = VoxelMap(0.5)
    m.add_points([[0.1, 0.0, 0.0]], [PointLabel.WALL])
    corr = m.find_correspondences(_cloud([[0.0, 0.0, 0.0]]), np.eye(4), 0.5)
    assert corr.n_planar == 0 and corr.n_point == 1


def test_result_independent_of_insertion_order(rng):
    pts = rng.uniform(-2, 2, size=(600, 3))
    labels = rng.integers(0, 5, size=600)
    normals = np.tile([0.0, 1.0, 0.0], (600, 1))
    a, b = VoxelMap(0.5), VoxelMap(0.5)
    a.add_points(pts, labels, normals)
    perm = rng.permutation(600)
    b.add_points(pts[perm], labels[perm], normals[perm])
    src = LabeledCloud(rng.uniform(-2, 2, size=(300, 3)), rng.integers(0, 5, size=300), np.zeros((300, 3)))
    ca = a.find_correspondences(src, np.eye(4), 0.6)
    cb = b.find_correspondences(src, np.eye(4), 0.6)
    np.testing.assert_array_equal(ca.planar_tgt, cb.planar_tgt)
    np.testing.assert_array_equal(ca.point_tgt, cb.point_tgt)


def test_guess_is_applied(rng):
    c = _cloud(rng.uniform(-3, 3, size=(300, 3)))
    m = VoxelMap(0.5)
    m.insert(c, make_pose(translation=(0.2, 0, 0)))
    corr = m.find_correspondences(c, make_pose(translation=(0.2, 0, 0)), 0.5)
    assert corr.n_planar == len(c)
    np.testing.assert_allclose(corr.planar_src + (0.2, 0, 0), corr.planar_tgt, atol=1e-12)


@given(st.integers(1, 6), st.floats(0.1, 2.0), st.integers(0, 2**32 - 1))
def test_map_size_bounded(cap, voxel, seed):
    r = np.random.default_rng(seed)
    m = VoxelMap(voxel, cap, max_map_range=5.0)
    for _ in range(3):
        m.insert(_cloud(r.uniform(-8, 8, size=(400, 3))), make_pose(translation=r.uniform(-1, 1, 3)))
    assert len(m) <= m.num_voxels * cap
    assert np.all(m._vcounts <= cap)


def test_bad_parameters():
    with pytest.raises(ValueError):
        VoxelMap(0.0)
    with pytest.raises(ValueError):
        VoxelMap(0.5, 0)
    with pytest.raises(ValueError):
        VoxelMap(0.5).find_correspondences(_cloud(np.zeros((1, 3))), np.eye(4), 0.0)
