import numpy as np
import pytest

from lidarkit.projection import (
    EmptyInputError,
    InvalidPixelError,
    ProjectionConfig,
    projection_to_sensor,
    project,
    unproject,
    unproject_all,
)


def _quarter_fov_config(width=1024, height=64):
    return ProjectionConfig(width=width, height=height, phi_min=-np.pi / 4, phi_max=np.pi / 4)


def _centered_config():
    """Full turn whose pixel (512, 32) has bin-center angles exactly (0, 0)."""
    W, H = 1024, 64
    dt, dp = 2 * np.pi / W, (np.pi / 2) / H
    return ProjectionConfig(width=W, height=H, theta_min=-np.pi - 0.5 * dt, theta_max=np.pi - 0.5 * dt,
                            phi_min=-32.5 * dp, phi_max=31.5 * dp)


def _random_points(rng, n, cfg, r_lo=None, r_hi=None):
    r = rng.uniform(r_lo or cfg.r_min * 1.01, r_hi or 50.0, size=n)
    az = rng.uniform(-np.pi, np.pi, size=n)
    el = rng.uniform(cfg.phi_min + 1e-6, cfg.phi_max - 1e-6, size=n)
    return np.stack([r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el)], axis=1)


def test_config_invariants():
    for bad in (dict(width=4), dict(height=7), dict(theta_min=1.0, theta_max=0.0),
                dict(phi_min=0.2, phi_max=0.1), dict(r_min=0.0), dict(r_min=5.0, r_max=1.0)):
        with pytest.raises(ValueError):
            ProjectionConfig(**bad)


def test_on_axis_point_lands_mid_image():
    cfg = _quarter_fov_config()
    # (0, 0, 1) in the projection frame is the sensor's +x axis
    p = projection_to_sensor(np.array([0.0, 0.0, 1.0]))
    img = project(p[None], cfg)
    assert img.point_index[32, 512] == 0
    assert img.ranges[32, 512] == pytest.approx(1.0)
    assert img.valid.sum() == 1


def test_range_gate():
    cfg = _quarter_fov_config()
    img = project(np.array([[0.05, 0.0, 0.0], [2.0, 0.0, 0.0], [200.0, 0.0, 0.0]]), cfg)
    assert sorted(img.point_index[img.valid].tolist()) == [1]


def test_empty_cloud():
    with pytest.raises(EmptyInputError):
        project(np.zeros((0, 3)), ProjectionConfig())


def test_ranges_match_indexed_points(rng):
    cfg = ProjectionConfig()
    pts = _random_points(rng, 10_000, cfg)
    img = project(pts, cfg)
    v = img.valid
    rec = np.linalg.norm(pts[img.point_index[v]], axis=1)
    assert np.abs(img.ranges[v] - rec).max() <= 1e-6
    assert np.all((img.ranges[v] >= cfg.r_min) & (img.ranges[v] <= cfg.r_max))


def test_nearest_point_wins_collisions(rng):
    cfg = ProjectionConfig()
    pts = _random_points(rng, 2000, cfg)
    both = np.vstack([pts * 2.0, pts])  # same rays, the second copy is nearer
    img = project(both, cfg)
    assert np.all(img.point_index[img.valid] >= len(pts))


def test_permutation_invariance(rng):
    cfg = ProjectionConfig(width=256, height=16)
    pts = _random_points(rng, 5000, cfg)  # many collisions at this resolution
    a = project(pts, cfg)
    perm = rng.permutation(len(pts))
    b = project(pts[perm], cfg)
    np.testing.assert_array_equal(a.valid, b.valid)
    np.testing.assert_array_equal(a.ranges[a.valid], b.ranges[b.valid])
    np.testing.assert_array_equal(a.point_index[a.valid], perm[b.point_index[b.valid]])


def test_unproject_examples():
    cfg = _centered_config()
    ref = [np.array([0.0, 0.0, 1.0]), np.array([2.0, 0.0, 0.0])]  # projection frame
    pts = projection_to_sensor(np.array(ref))
    img = project(pts, cfg)
    np.testing.assert_allclose(unproject(img, 512, 32, frame="projection"), ref[0], atol=1e-12)
    np.testing.assert_allclose(unproject(img, 768, 32, frame="projection"), ref[1], atol=1e-12)
    np.testing.assert_allclose(unproject(img, 768, 32), pts[1], atol=1e-12)


def test_unproject_invalid_pixel():
    cfg = _quarter_fov_config()
    img = project(np.array([[1.0, 0.0, 0.0]]), cfg)
    with pytest.raises(InvalidPixelError):
        unproject(img, 0, 0)
    with pytest.raises(InvalidPixelError):
        unproject(img, cfg.width, 0)


def test_round_trip_bound(rng):
    cfg = ProjectionConfig()
    pts = _random_points(rng, 10_000, cfg)
    img = project(pts, cfg)
    rec = unproject_all(img)
    v = img.valid
    err = np.linalg.norm(rec[v] - pts[img.point_index[v]], axis=1)
    bound = img.ranges[v] * max(cfg.d_theta, cfg.d_phi)
    assert np.all(err <= bound)
    # the vectorized form agrees with the per-pixel one
    vv, uu = np.nonzero(v)
    for k in range(0, len(vv), 997):
        np.testing.assert_allclose(unproject(img, uu[k], vv[k]), rec[vv[k], uu[k]], atol=1e-12)


def test_azimuth_monotone():
    cfg = ProjectionConfig()
    az = np.linspace(-np.pi + 1e-6, np.pi - 1e-6, 5000)
    pts = np.stack([5 * np.cos(az), 5 * np.sin(az), np.zeros_like(az)], axis=1)
    img = project(pts, cfg)
    u = np.full(len(pts), -1)
    vv, uu = np.nonzero(img.valid)
    u[img.point_index[vv, uu]] = uu
    kept = u >= 0
    assert np.all(np.diff(u[kept]) >= 0)


def test_partial_azimuth_rejects_instead_of_wrapping():
    cfg = ProjectionConfig(width=64, height=16, theta_min=-np.pi / 2, theta_max=np.pi / 2)
    img = project(np.array([[-3.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), cfg)
    assert img.point_index[img.valid].tolist() == [1]
