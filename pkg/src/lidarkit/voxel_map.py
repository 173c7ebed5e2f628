"""World-frame voxel hash map with per-point labels and normals.

Storage is kept as flat arrays sorted by packed voxel key, so each voxel's
points are contiguous and lookups are binary searches. This is the layout the
nearest-neighbour kernel consumes directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .classification import LabeledCloud, PointLabel


@dataclass
class CorrespondenceSet:
    """Matched pairs split by residual kind. Targets are world-frame map points."""

    planar_src: np.ndarray  # (Np, 3) source points, scan frame
    planar_tgt: np.ndarray  # (Np, 3)
    planar_normals: np.ndarray  # (Np, 3) target normals
    planar_weights: np.ndarray  # (Np,)
    point_src: np.ndarray  # (No, 3)
    point_tgt: np.ndarray  # (No, 3)
    point_weights: np.ndarray  # (No,)

    @property
    def n_planar(self) -> int:
        return len(self.planar_src)

    @property
    def n_point(self) -> int:
        return len(self.point_src)

    def __len__(self):
        return self.n_planar + self.n_point

    @classmethod
    def build(cls, planar_src, planar_tgt, planar_normals, point_src, point_tgt,
              planar_weights=None, point_weights=None):
        planar_src = np.asarray(planar_src, float).reshape(-1, 3)
        point_src = np.asarray(point_src, float).reshape(-1, 3)
        return cls(
            planar_src,
            np.asarray(planar_tgt, float).reshape(-1, 3),
            np.asarray(planar_normals, float).reshape(-1, 3),
            np.ones(len(planar_src)) if planar_weights is None else np.asarray(planar_weights, float),
            point_src,
            np.asarray(point_tgt, float).reshape(-1, 3),
            np.ones(len(point_src)) if point_weights is None else np.asarray(point_weights, float),
        )


def voxel_cells(points: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(np.asarray(points, float) / voxel_size).astype(np.int64)


def _downsample_one(cloud: LabeledCloud, voxel_size: float) -> np.ndarray:
    """Indices of the point nearest each occupied voxel center."""
    if len(cloud) == 0:
        return np.zeros(0, dtype=np.int64)
    cells = voxel_cells(cloud.points, voxel_size)
    keys = kernels.pack_keys(cells)
    d2 = np.sum((cloud.points - (cells + 0.5) * voxel_size) ** 2, axis=1)
    order = np.lexsort((np.arange(len(keys)), d2, keys))
    k = keys[order]
    first = np.ones(len(k), dtype=bool)
    first[1:] = k[1:] != k[:-1]
    return order[first]


def downsample(cloud: LabeledCloud, voxel_size: float, adaptive: bool = True) -> LabeledCloud:
    """Keep one point per voxel, the one closest to the voxel center.

    With ``adaptive`` planar points (Ground/Roof/Wall) use ``voxel_size`` and
    Edge/Unknown points use half of it.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if not adaptive:
        return cloud.subset(np.sort(_downsample_one(cloud, voxel_size)))
    planar = np.flatnonzero(cloud.planar)
    other = np.flatnonzero(~cloud.planar)
    keep = np.concatenate([
        planar[_downsample_one(cloud.subset(planar), voxel_size)],
        other[_downsample_one(cloud.subset(other), 0.5 * voxel_size)],
    ])
    return cloud.subset(np.sort(keep))


class VoxelMap:
    def __init__(self, voxel_size: float = 0.5, max_points_per_voxel: int = 20,
                 max_map_range: float = 100.0):
        if voxel_size <= 0 or max_points_per_voxel < 1 or max_map_range <= 0:
            raise ValueError("invalid voxel map parameters")
        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.max_map_range = float(max_map_range)
        self.clear()

    def clear(self) -> None:
        self.points = np.zeros((0, 3))
        self.labels = np.zeros(0, dtype=np.uint8)
        self.normals = np.zeros((0, 3))
        self._keys = np.zeros(0, dtype=np.int64)  # per point, sorted
        self._vkeys = np.zeros(0, dtype=np.int64)
        self._vstarts = np.zeros(0, dtype=np.int64)
        self._vcounts = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def num_voxels(self) -> int:
        return len(self._vkeys)

    def empty(self) -> bool:
        return len(self.points) == 0

    def voxel_keys(self) -> np.ndarray:
        return kernels.unpack_keys(self._vkeys)

    def _reindex(self) -> None:
        k = self._keys
        if len(k) == 0:
            self._vkeys = self._vstarts = self._vcounts = np.zeros(0, dtype=np.int64)
            return
        first = np.ones(len(k), dtype=bool)
        first[1:] = k[1:] != k[:-1]
        self._vstarts = np.flatnonzero(first)
        self._vkeys = k[self._vstarts]
        self._vcounts = np.diff(np.append(self._vstarts, len(k)))

    def add_points(self, points, labels=None, normals=None) -> None:
        """Insert world-frame points, dropping those beyond voxel capacity."""
        points = np.asarray(points, float).reshape(-1, 3)
        n = len(points)
        if n == 0:
            return
        labels = np.full(n, PointLabel.UNKNOWN, np.uint8) if labels is None else np.asarray(labels, np.uint8)
        normals = np.full((n, 3), np.nan) if normals is None else np.asarray(normals, float)
        keys = kernels.pack_keys(voxel_cells(points, self.voxel_size))
        order = np.argsort(keys, kind="stable")
        keys, points, labels, normals = keys[order], points[order], labels[order], normals[order]
        # rank of each new point inside its voxel, offset by what is already stored
        first = np.ones(n, dtype=bool)
        first[1:] = keys[1:] != keys[:-1]
        group_start = np.maximum.accumulate(np.where(first, np.arange(n), 0))
        rank = np.arange(n) - group_start
        existing = np.zeros(n, dtype=np.int64)
        if len(self._vkeys):
            pos = np.minimum(np.searchsorted(self._vkeys, keys), len(self._vkeys) - 1)
            hit = self._vkeys[pos] == keys
            existing[hit] = self._vcounts[pos[hit]]
        accept = rank + existing < self.max_points_per_voxel
        if not accept.any():
            return
        all_keys = np.concatenate([self._keys, keys[accept]])
        merge = np.argsort(all_keys, kind="stable")
        self._keys = all_keys[merge]
        self.points = np.concatenate([self.points, points[accept]])[merge]
        self.labels = np.concatenate([self.labels, labels[accept]])[merge]
        self.normals = np.concatenate([self.normals, normals[accept]])[merge]
        self._reindex()

    def remove_far_away(self, origin) -> None:
        if self.empty():
            return
        centers = (kernels.unpack_keys(self._keys) + 0.5) * self.voxel_size
        keep = np.linalg.norm(centers - np.asarray(origin, float), axis=1) <= self.max_map_range
        if keep.all():
            return
        self._keys = self._keys[keep]
        self.points = self.points[keep]
        self.labels = self.labels[keep]
        self.normals = self.normals[keep]
        self._reindex()

    def insert(self, cloud: LabeledCloud, pose: np.ndarray) -> None:
        """Transform a scan-frame cloud into the world and add it, then evict far voxels."""
        world = cloud.transformed(pose)
        self.add_points(world.points, world.labels, world.normals)
        self.remove_far_away(pose[:3, 3])

    def nearest(self, queries, query_labels, max_dist: float):
        """Nearest stored point per query (``any``) and nearest with the same label (``same``).

        The search covers every voxel within ``ceil(max_dist / voxel_size)``
        rings of the query voxel, so it is exact for any ``max_dist``.
        """
        queries = np.asarray(queries, float).reshape(-1, 3)
        rings = max(1, math.ceil(max_dist / self.voxel_size - 1e-12))
        return kernels.voxel_nn_kernel(
            queries, np.asarray(query_labels, np.uint8), self._vkeys, self._vstarts,
            self._vcounts, self.points, self.labels, self.voxel_size, rings, float(max_dist),
        )

    def find_correspondences(self, cloud: LabeledCloud, guess: np.ndarray,
                             max_dist: float) -> CorrespondenceSet:
        """Class-wise data association of a scan-frame cloud at pose ``guess``.

        Ground/Roof/Wall sources prefer a same-label target and fall back to any
        label; they become planar pairs when the target carries a normal.
        Edge/Unknown sources match any label as point pairs.
        """
        if max_dist <= 0:
            raise ValueError("max_dist must be positive")
        src = cloud.points
        moved = src @ guess[:3, :3].T + guess[:3, 3]
        any_idx, same_idx = self.nearest(moved, cloud.labels, max_dist)
        planar_src = cloud.planar
        tgt = np.where(planar_src & (same_idx >= 0), same_idx, any_idx)
        matched = tgt >= 0
        tgt_has_normal = np.zeros(len(src), dtype=bool)
        tgt_has_normal[matched] = np.all(np.isfinite(self.normals[tgt[matched]]), axis=1)
        is_planar = matched & planar_src & tgt_has_normal
        is_point = matched & ~is_planar
        return CorrespondenceSet.build(
            src[is_planar], self.points[tgt[is_planar]], self.normals[tgt[is_planar]],
            src[is_point], self.points[tgt[is_point]],
        )

    def point_cloud(self) -> LabeledCloud:
        return LabeledCloud(self.points.copy(), self.labels.copy(), self.normals.copy())
