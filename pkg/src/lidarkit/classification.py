from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .normals import NormalMap
from .projection import RangeImage


class PointLabel(enum.IntEnum):
    GROUND = 0
    ROOF = 1
    WALL = 2
    EDGE = 3
    UNKNOWN = 4


PLANAR_LABELS = (PointLabel.GROUND, PointLabel.ROOF, PointLabel.WALL)


@dataclass(frozen=True)
class ClassifyConfig:
    edge_angle_rad: float = 0.26
    majority_fraction: float = 2.0 / 3.0


@dataclass
class LabeledCloud:
    """Points with one label each and an optional unit normal (NaN row when absent)."""

    points: np.ndarray
    labels: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if not (len(self.points) == len(self.labels) == len(self.normals)):
            raise ValueError("points, labels and normals must have equal length")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0, np.uint8), np.zeros((0, 3)))

    @classmethod
    def unlabeled(cls, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        return cls(points, np.full(n, PointLabel.UNKNOWN, np.uint8), np.full((n, 3), np.nan))

    @property
    def has_normal(self) -> np.ndarray:
        return np.all(np.isfinite(self.normals), axis=1)

    @property
    def planar(self) -> np.ndarray:
        return self.labels <= PointLabel.WALL

    def subset(self, mask) -> "LabeledCloud":
        return LabeledCloud(self.points[mask], self.labels[mask], self.normals[mask])

    def transformed(self, T: np.ndarray) -> "LabeledCloud":
        R, t = T[:3, :3], T[:3, 3]
        return LabeledCloud(self.points @ R.T + t, self.labels.copy(), self.normals @ R.T)


def classify_pixels(normals: NormalMap, wrap: bool, config: ClassifyConfig | None = None) -> np.ndarray:
    config = config or ClassifyConfig()
    return kernels.classify_kernel(
        normals.normals, normals.valid, wrap, config.edge_angle_rad, config.majority_fraction
    )


def classify(image: RangeImage, normals: NormalMap, config: ClassifyConfig | None = None) -> LabeledCloud:
    """Label every point of the projected cloud.

    Pixels use the rules Edge > Ground > Roof > Wall over the valid normals of
    their 3x3 neighborhood; points that won no pixel, or whose pixel has fewer
    than 3 valid normals around it, are Unknown.
    """
    if normals.valid.shape != image.ranges.shape or normals.normals.shape[:2] != image.ranges.shape:
        raise ValueError("normal map and range image dimensions differ")
    pixel_labels = classify_pixels(normals, image.config.full_turn, config)
    n = len(image.points)
    labels = np.full(n, PointLabel.UNKNOWN, dtype=np.uint8)
    point_normals = np.full((n, 3), np.nan)
    mask = image.valid & normals.valid
    idx = image.point_index[mask]
    labels[idx] = pixel_labels[mask]
    point_normals[idx] = normals.normals[mask]
    return LabeledCloud(image.points, labels, point_normals)


def label_stats(cloud: LabeledCloud) -> dict[PointLabel, int]:
    counts = np.bincount(cloud.labels, minlength=len(PointLabel))
    return {lab: int(counts[lab]) for lab in PointLabel}


def neighborhood_label(window_normals, config: ClassifyConfig | None = None) -> PointLabel:
    """Rule evaluation for one explicit set of neighborhood normals.

    Handy for inspecting a single window; the image-wide path is :func:`classify`.
    """
    config = config or ClassifyConfig()
    ns = [np.asarray(n, dtype=float) for n in window_normals]
    k = len(ns)
    if k < 3:
        return PointLabel.UNKNOWN
    angles = [
        math.acos(max(-1.0, min(1.0, float(ns[i] @ ns[j]))))
        for i in range(k)
        for j in range(i + 1, k)
    ]
    if sum(angles) / len(angles) > config.edge_angle_rad:
        return PointLabel.EDGE
    need = math.ceil(config.majority_fraction * k - 1e-9)
    a = [np.abs(n) for n in ns]
    z_dom = [x[2] > x[0] and x[2] > x[1] for x in a]
    up = sum(1 for n, d in zip(ns, z_dom) if d and n[2] > 0)
    down = sum(1 for n, d in zip(ns, z_dom) if d and n[2] < 0)
    wall = sum(1 for x in a if (x[0] > x[1] and x[0] > x[2]) or (x[1] > x[0] and x[1] > x[2]))
    if up >= need:
        return PointLabel.GROUND
    if down >= need:
        return PointLabel.ROOF
    if wall >= need:
        return PointLabel.WALL
    return PointLabel.UNKNOWN
