"""Rigid-body algebra and the small dense solvers shared by every stage.

Poses are 4x4 homogeneous ``float64`` arrays. Twists are 6-vectors ordered
rotation first, ``(wx, wy, wz, vx, vy, vz)``, matching the block layout of the
registration Hessian.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-8
SERIES_ANGLE = 1e-2  # below this the cancelling coefficients use their Taylor series
ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    """Raised when an input violates a geometric precondition."""


class DegenerateAngleError(GeometryError):
    pass


class SingularSystemError(GeometryError):
    pass


def identity() -> np.ndarray:
    return np.eye(4)


def make_pose(rotation=None, translation=None) -> np.ndarray:
    T = np.eye(4)
    if rotation is not None:
        T[:3, :3] = rotation
    if translation is not None:
        T[:3, 3] = translation
    return T


def skew(v) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]], dtype=float
    )


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def is_valid_pose(T: np.ndarray, tol: float = ORTHO_TOL) -> bool:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        return False
    R = T[:3, :3]
    return (
        np.abs(R.T @ R - np.eye(3)).max() <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def pose_compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a @ b`` (apply ``b`` first), re-orthonormalizing on drift."""
    out = a @ b
    R = out[:3, :3]
    if np.abs(R.T @ R - np.eye(3)).max() > ORTHO_TOL:
        out[:3, :3] = orthonormalize(R)
    out[3] = (0.0, 0.0, 0.0, 1.0)
    return out


def pose_inverse(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def pose_apply(T: np.ndarray, points) -> np.ndarray:
    """Apply ``T`` to a single point (3,) or an array of points (N, 3)."""
    p = np.asarray(points, dtype=float)
    return p @ T[:3, :3].T + T[:3, 3]


def _coef_b(theta: float) -> float:
    """(1 - cos t) / t^2 in the half-angle form, free of cancellation."""
    h = np.sin(0.5 * theta) / theta
    return 2.0 * h * h


def _coef_c(theta: float) -> float:
    """(t - sin t) / t^3."""
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    return (theta - np.sin(theta)) / theta**3


def _coef_log(theta: float) -> float:
    """(1 - (t/2) cot(t/2)) / t^2, the K^2 coefficient of the inverse left Jacobian."""
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        return 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    half = 0.5 * theta
    return (1.0 - half * np.cos(half) / np.sin(half)) / theta**2


def so3_exp(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K
    A = np.sin(theta) / theta
    B = _coef_b(theta)
    return np.eye(3) + A * K + B * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    w = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta > np.pi - 1e-6:
        raise DegenerateAngleError(f"rotation angle {theta:.9f} too close to pi")
    if theta < SMALL_ANGLE:
        return w
    return theta / s * w


def se3_exp(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    omega, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < SMALL_ANGLE:
        R = np.eye(3) + K
        V = np.eye(3) + 0.5 * K
    else:
        K2 = K @ K
        A = np.sin(theta) / theta
        B = _coef_b(theta)
        C = _coef_c(theta)
        R = np.eye(3) + A * K + B * K2
        V = np.eye(3) + B * K + C * K2
    return make_pose(R, V @ v)


def se3_log(T: np.ndarray) -> np.ndarray:
    omega = so3_log(T[:3, :3])
    theta = float(np.linalg.norm(omega))
    K = skew(omega)
    if theta < SMALL_ANGLE:
        V_inv = np.eye(3) - 0.5 * K
    else:
        V_inv = np.eye(3) - 0.5 * K + _coef_log(theta) * (K @ K)
    return np.concatenate([omega, V_inv @ T[:3, 3]])


def sym_eig3(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a symmetric 3x3 matrix.

    Eigenvalues come back in descending order with eigenvectors as columns.
    Each eigenvector is signed so that its largest-magnitude component is
    positive (first such component on ties). For repeated eigenvalues any
    orthonormal basis of the eigenspace may be returned.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise GeometryError(f"expected 3x3 matrix, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-9 * scale:
        raise GeometryError("sym_eig3 requires a symmetric matrix")
    w, V = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    for j in range(3):
        col = V[:, j]
        k = int(np.argmax(np.abs(col)))
        if col[k] < 0:
            V[:, j] = -col
    return w, V


def solve_spd6(H, b, damping: float = 0.0) -> np.ndarray:
    """Solve ``(H + damping*I) x = -b`` by Cholesky factorization."""
    H = np.asarray(H, dtype=float)
    b = np.asarray(b, dtype=float)
    n = H.shape[0]
    A = H + damping * np.eye(n)
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if d < 1e-12:
            raise SingularSystemError(f"pivot {d:.3e} at column {j}")
        L[j, j] = np.sqrt(d)
        L[j + 1 :, j] = (A[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    y = np.zeros(n)
    for i in range(n):
        y[i] = (-b[i] - L[i, :i] @ y[:i]) / L[i, i]
    x = np.zeros(n)
    for i in reversed(range(n)):
        x[i] = (y[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Return ``(qx, qy, qz, qw)`` with ``qw >= 0``.

    When ``qw == 0`` the first nonzero vector component is made positive.
    """
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
        )
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array(
            [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
        )
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array(
            [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
        )
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array(
            [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
        )
    return canonical_quaternion(q)


def canonical_quaternion(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    elif q[3] == 0:
        nz = np.flatnonzero(q[:3])
        if nz.size and q[nz[0]] < 0:
            q = -q
    return q + 0.0


def quaternion_to_rotation(q) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_angle(R: np.ndarray) -> float:
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    s = 0.5 * np.linalg.norm(vee(R - R.T))
    return float(np.arctan2(s, c))


def yaw_of(R: np.ndarray) -> float:
    return float(np.arctan2(R[1, 0], R[0, 0]))
