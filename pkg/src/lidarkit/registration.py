"""Degeneracy-weighted multi-metric ICP against a voxel map.

The objective mixes point-to-plane and point-to-point residuals,

    alpha * sum_j w_j (n_j . (T p_j - q_j))^2 + (1 - alpha) * sum_k |T p_k - q_k|^2,

with ``w_j`` the per-pair observability weights and ``alpha`` the share of
planar pairs (clamped). Steps are left-multiplicative, ``T <- exp(xi) T`` with
``xi = (omega, v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classification import LabeledCloud
from .degeneracy import DegeneracyReport, compute_point_weights
from .geometry import pose_compose, pose_inverse, se3_exp, solve_spd6
from .voxel_map import CorrespondenceSet, VoxelMap


class EmptyInputError(ValueError):
    pass


class RegistrationError(RuntimeError):
    """Registration could not proceed; ``pose`` is the last estimate."""

    def __init__(self, message, pose):
        super().__init__(message)
        self.pose = pose


@dataclass(frozen=True)
class RegistrationParams:
    max_iterations: int = 50
    convergence_eps: float = 1e-4
    max_dist: float = 1.5
    min_dist: float = 0.5
    dist_decay: float = 0.8
    alpha_min: float = 0.1
    alpha_max: float = 0.9
    lm_damping: float = 1e-6
    degeneracy_weights: bool = True
    fixed_alpha: float | None = None

    def __post_init__(self):
        if not 0 <= self.alpha_min <= self.alpha_max <= 1:
            raise ValueError("need 0 <= alpha_min <= alpha_max <= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.min_dist <= self.max_dist:
            raise ValueError("need 0 < min_dist <= max_dist")
        if not 0 < self.dist_decay <= 1:
            raise ValueError("dist_decay must be in (0, 1]")
        if self.fixed_alpha is not None and not 0 <= self.fixed_alpha <= 1:
            raise ValueError("fixed_alpha must be in [0, 1]")

    def gate(self, iteration: int) -> float:
        return max(self.min_dist, self.max_dist * self.dist_decay**iteration)


@dataclass
class RegistrationReport:
    pose: np.ndarray
    iterations: int = 0
    converged: bool = False
    rms_planar: float = float("nan")
    rms_point: float = float("nan")
    n_planar: int = 0
    n_point: int = 0
    alpha: float = float("nan")
    degeneracy: DegeneracyReport | None = None
    hessian: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))
    costs: list = field(default_factory=list)


def adaptive_alpha(n_pl: int, n_po: int, params: RegistrationParams | None = None) -> float:
    params = params or RegistrationParams()
    total = n_pl + n_po
    if total < 1:
        raise EmptyInputError("no correspondences to weigh")
    return float(np.clip(n_pl / total, params.alpha_min, params.alpha_max))


def _residuals(corr: CorrespondenceSet, pose: np.ndarray):
    R, t = pose[:3, :3], pose[:3, 3]
    p_pl = corr.planar_src @ R.T + t
    p_po = corr.point_src @ R.T + t
    e_pl = np.einsum("ij,ij->i", corr.planar_normals, p_pl - corr.planar_tgt)
    e_po = p_po - corr.point_tgt
    return p_pl, e_pl, p_po, e_po


def build_system(corr: CorrespondenceSet, alpha: float, pose: np.ndarray):
    """Gauss-Newton normal equations ``(H, b, cost)`` at ``pose``."""
    if len(corr) == 0:
        raise EmptyInputError("empty correspondence set")
    p_pl, e_pl, p_po, e_po = _residuals(corr, pose)
    H = np.zeros((6, 6))
    b = np.zeros(6)
    cost = 0.0
    if corr.n_planar:
        n = corr.planar_normals
        J = np.hstack([np.cross(p_pl, n), n])
        w = alpha * corr.planar_weights
        H += (J * w[:, None]).T @ J
        b += J.T @ (w * e_pl)
        cost += float(np.sum(w * e_pl**2))
    if corr.n_point:
        w = (1.0 - alpha) * corr.point_weights
        x, y, z = p_po[:, 0], p_po[:, 1], p_po[:, 2]
        o = np.zeros_like(x)
        # rows of -[p]x for each pair, then identity for translation
        J = np.empty((len(x), 3, 6))
        J[:, 0, :3] = np.stack([o, z, -y], axis=1)
        J[:, 1, :3] = np.stack([-z, o, x], axis=1)
        J[:, 2, :3] = np.stack([y, -x, o], axis=1)
        J[:, :, 3:] = np.eye(3)
        Jw = J * w[:, None, None]
        H += np.einsum("kri,krj->ij", Jw, J)
        b += np.einsum("kri,kr->i", Jw, e_po)
        cost += float(np.sum(w * np.sum(e_po**2, axis=1)))
    H = 0.5 * (H + H.T)
    return H, b, cost


def cost_at(corr: CorrespondenceSet, alpha: float, pose: np.ndarray) -> float:
    _, e_pl, _, e_po = _residuals(corr, pose)
    return float(
        alpha * np.sum(corr.planar_weights * e_pl**2)
        + (1.0 - alpha) * np.sum(corr.point_weights * np.sum(e_po**2, axis=1))
    )


def weigh(corr: CorrespondenceSet, params: RegistrationParams):
    """Attach observability weights and pick alpha for one iteration."""
    report = None
    if corr.n_planar and params.degeneracy_weights:
        corr.planar_weights, report = compute_point_weights(corr.planar_normals)
    if params.fixed_alpha is not None:
        alpha = params.fixed_alpha
    else:
        alpha = adaptive_alpha(corr.n_planar, corr.n_point, params)
    return alpha, report


def register(source: LabeledCloud, voxel_map: VoxelMap, guess: np.ndarray,
             params: RegistrationParams | None = None):
    params = params or RegistrationParams()
    if len(source) == 0:
        raise EmptyInputError("empty source cloud")
    if voxel_map.empty():
        raise EmptyInputError("empty map")
    pose = np.array(guess, dtype=float)
    report = RegistrationReport(pose=pose)
    last = None
    for it in range(params.max_iterations):
        corr = voxel_map.find_correspondences(source, pose, params.gate(it))
        if len(corr) == 0:
            raise RegistrationError(f"no correspondences at iteration {it}", pose)
        alpha, degen = weigh(corr, params)
        H, b, cost = build_system(corr, alpha, pose)
        step = solve_spd6(H, b, params.lm_damping)
        pose = pose_compose(se3_exp(step), pose)
        report.iterations = it + 1
        report.costs.append(cost)
        last = (corr, alpha, degen, H)
        if np.linalg.norm(step) < params.convergence_eps:
            report.converged = True
            break
    corr, alpha, degen, H = last
    _, e_pl, _, e_po = _residuals(corr, pose)
    report.pose = pose
    report.n_planar, report.n_point = corr.n_planar, corr.n_point
    report.alpha = alpha
    report.degeneracy = degen
    report.hessian = H
    report.rms_planar = float(np.sqrt(np.mean(e_pl**2))) if len(e_pl) else float("nan")
    report.rms_point = float(np.sqrt(np.mean(np.sum(e_po**2, axis=1)))) if len(e_po) else float("nan")
    return pose, report


def predict_initial_guess(poses) -> np.ndarray:
    """Constant-velocity prediction from the last two poses."""
    poses = list(poses)
    if not poses:
        return np.eye(4)
    if len(poses) == 1:
        return np.array(poses[-1], dtype=float)
    a, b = poses[-2], poses[-1]
    return pose_compose(b, pose_inverse(a) @ b)
