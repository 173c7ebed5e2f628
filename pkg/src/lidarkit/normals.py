"""Per-pixel surface normals from a range image.

Tangents are central differences of the back-pointed points along the image
rows and columns; the normal is their normalized cross product, flipped to
face the sensor. Where a central difference straddles a crease (the two
one-sided differences disagree) and one side continues straight, that
one-sided difference is used instead, so crease pixels take the normal of
the surface they lie on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .projection import RangeImage


@dataclass(frozen=True)
class NormalConfig:
    discontinuity_abs: float = 0.3
    discontinuity_rel: float = 0.05
    crease_angle_deg: float = 1.5


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3), NaN where invalid
    valid: np.ndarray  # (H, W) bool


def orient_normal(n, p) -> np.ndarray:
    """Flip ``n`` if it points away from the sensor at the origin."""
    n = np.asarray(n, dtype=float)
    return -n if float(np.dot(n, p)) > 0 else n


def compute_normals(image: RangeImage, config: NormalConfig | None = None) -> NormalMap:
    config = config or NormalConfig()
    normals, valid = kernels.normals_kernel(
        image.vertex_map(),
        image.ranges,
        image.config.full_turn,
        config.discontinuity_abs,
        config.discontinuity_rel,
        float(np.cos(np.deg2rad(config.crease_angle_deg))),
    )
    return NormalMap(normals=normals, valid=valid)
