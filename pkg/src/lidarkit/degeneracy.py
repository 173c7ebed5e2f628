"""Observability-based weights for planar correspondences.

For point-to-plane residuals the translational Jacobian row of a pair is its
normal, so the translational Hessian block is the sum of normal outer
products. Each normal is projected onto that block's eigenbasis, the
projections are scaled by eigenvalue normalized to the largest, and the row
norm is the pair's weight in [0, 1]. Pairs whose normals only constrain
weakly observed directions get small weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import sym_eig3


class EmptyInputError(ValueError):
    pass


@dataclass
class DegeneracyReport:
    H_tt: np.ndarray
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns
    normalized_eigenvalues: np.ndarray
    weights: np.ndarray

    @property
    def min_weight(self) -> float:
        return float(self.weights.min()) if len(self.weights) else float("nan")

    @property
    def mean_weight(self) -> float:
        return float(self.weights.mean()) if len(self.weights) else float("nan")


def build_translational_hessian(normals) -> np.ndarray:
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(n) == 0:
        raise EmptyInputError("no normals")
    return n.T @ n


def weights_from_basis(normals, eigenvectors, normalized_eigenvalues) -> np.ndarray:
    """Row norms of ``|normals @ V| * lambda_normalized``."""
    contrib = np.abs(np.asarray(normals, float) @ eigenvectors)
    return np.linalg.norm(contrib * normalized_eigenvalues, axis=1)


def compute_point_weights(normals) -> tuple[np.ndarray, DegeneracyReport]:
    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    H = build_translational_hessian(n)
    lam, V = sym_eig3(H)
    lam = np.maximum(lam, 0.0)
    if lam[0] <= 0:
        raise EmptyInputError("translational Hessian has no positive eigenvalue")
    lam_n = lam / lam[0]
    w = np.minimum(weights_from_basis(n, V, lam_n), 1.0)
    return w, DegeneracyReport(H, lam, V, lam_n, w)
