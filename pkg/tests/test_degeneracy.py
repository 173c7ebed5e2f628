import numpy as np
import pytest
from hypothesis import given, strategies as st

from lidarkit.degeneracy import (
    EmptyInputError,
    build_translational_hessian,
    compute_point_weights,
    weights_from_basis,
)

from conftest import random_rotation


def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_hessian_examples():
    np.testing.assert_array_equal(build_translational_hessian([(1, 0, 0)] * 100), np.diag([100.0, 0, 0]))
    np.testing.assert_array_equal(build_translational_hessian(np.eye(3)), np.eye(3))


def test_hessian_matches_outer_product_sum(rng):
    n = _unit(rng, 1000)
    H = np.zeros((3, 3))
    for row in n:
        H += np.outer(row, row)
    got = build_translational_hessian(n)
    assert np.abs(got - H).max() <= 1e-9
    assert np.trace(got) == pytest.approx(1000, abs=1e-6)
    assert np.linalg.eigvalsh(got).min() >= -1e-9


def test_hessian_empty():
    with pytest.raises(EmptyInputError):
        build_translational_hessian(np.zeros((0, 3)))
    with pytest.raises(EmptyInputError):
        compute_point_weights(np.zeros((0, 3)))


def test_rank_one_weights():
    w, rep = compute_point_weights([(1, 0, 0)] * 30)
    np.testing.assert_allclose(w, 1.0)
    np.testing.assert_allclose(rep.normalized_eigenvalues, [1, 0, 0])


def test_corridor_weights():
    normals = [(1, 0, 0)] * 50 + [(0, 1, 0)] * 2
    w, rep = compute_point_weights(normals)
    np.testing.assert_allclose(rep.H_tt, np.diag([50.0, 2.0, 0.0]))
    np.testing.assert_allclose(rep.normalized_eigenvalues, [1.0, 0.04, 0.0], atol=1e-12)
    assert np.abs(w[:50] - 1.0).max() <= 1e-9
    assert np.abs(w[50:] - 0.04).max() <= 1e-9
    assert rep.min_weight == pytest.approx(0.04)


def test_isotropic_weights():
    w, _ = compute_point_weights(np.eye(3))
    np.testing.assert_allclose(w, 1.0)


def test_rotation_invariance(rng):
    base = [(1, 0, 0)] * 50 + [(0, 1, 0)] * 2 + [(0, 0, 1)] * 7
    w0, _ = compute_point_weights(base)
    for _ in range(20):
        R = random_rotation(rng)
        w, rep = compute_point_weights(np.asarray(base, float) @ R.T)
        assert np.abs(w - w0).max() <= 1e-9


def test_eigenvector_sign_flips(rng):
    n = _unit(rng, 200)
    w, rep = compute_point_weights(n)
    for signs in ([-1, 1, 1], [1, -1, -1], [-1, -1, -1]):
        flipped = weights_from_basis(n, rep.eigenvectors * np.array(signs), rep.normalized_eigenvalues)
        assert np.abs(np.minimum(flipped, 1.0) - w).max() <= 1e-12


def test_duplication_invariance(rng):
    n = _unit(rng, 100)
    w, _ = compute_point_weights(n)
    w2, _ = compute_point_weights(np.vstack([n, n]))
    assert np.abs(w2[:100] - w).max() <= 1e-9
    assert np.abs(w2[100:] - w).max() <= 1e-9


def test_weights_from_hand_eigenbasis(rng):
    # independent oracle: eigen-decomposition by numpy, then the projection/normalization by hand
    n = _unit(rng, 300) * np.array([1.0, 0.3, 0.05])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    lam, V = np.linalg.eigh(n.T @ n)
    lam, V = lam[::-1], V[:, ::-1]
    expect = np.sqrt(np.sum((np.abs(n @ V) * (lam / lam[0])) ** 2, axis=1))
    w, _ = compute_point_weights(n)
    assert np.abs(w - expect).max() <= 1e-9


@given(st.integers(1, 80), st.integers(0, 2**32 - 1))
def test_weights_bounded(count, seed):
    n = _unit(np.random.default_rng(seed), count)
    w, rep = compute_point_weights(n)
    assert np.all((w >= 0) & (w <= 1))
    assert rep.normalized_eigenvalues[0] == 1.0
    assert np.all(np.diff(rep.eigenvalues) <= 1e-12)
