"""Polar max-height descriptors and a ring-key indexed database for place recognition.

A descriptor bins the scan's points by planar radius (rings) and azimuth
(sectors) and keeps the highest point per cell. Rotating the sensor about its
vertical axis cyclically shifts the sector columns, so matching tries every
column shift and keeps the best one; the shift doubles as a yaw estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class ScanContextConfig:
    n_ring: int = 20
    n_sector: int = 60
    max_radius: float = 80.0
    height_offset: float = 2.0
    num_candidates: int = 10
    accept_threshold: float = 0.2
    exclusion_window: int = 50

    def __post_init__(self):
        if self.n_ring < 1 or self.n_sector < 1:
            raise ValueError("n_ring and n_sector must be >= 1")
        if not self.max_radius > 0:
            raise ValueError("max_radius must be positive")
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if not 0 < self.accept_threshold < 1:
            raise ValueError("accept_threshold must be in (0, 1)")
        if self.exclusion_window < 0:
            raise ValueError("exclusion_window must be >= 0")


@dataclass
class ScanContextDescriptor:
    matrix: np.ndarray  # (n_ring, n_sector), metres, 0 = empty
    ring_key: np.ndarray  # (n_ring,), occupied fraction per ring

    @property
    def shape(self):
        return self.matrix.shape


def make_descriptor(points, n_ring: int = 20, n_sector: int = 60, max_radius: float = 80.0,
                    height_offset: float = 2.0) -> ScanContextDescriptor:
    """Descriptor of a sensor-frame cloud.

    Cell value is ``max(z) + height_offset`` clamped at 0, so returns below
    the sensor still register as positive heights.
    """
    if n_ring < 1 or n_sector < 1 or not max_radius > 0:
        raise ValueError("need n_ring >= 1, n_sector >= 1, max_radius > 0")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    matrix = np.zeros((n_ring, n_sector))
    if len(pts):
        rho = np.hypot(pts[:, 0], pts[:, 1])
        keep = rho < max_radius
        pts, rho = pts[keep], rho[keep]
        a = np.arctan2(pts[:, 1], pts[:, 0])
        ring = np.minimum((rho / max_radius * n_ring).astype(np.int64), n_ring - 1)
        sector = np.floor((a + np.pi) / (2 * np.pi) * n_sector).astype(np.int64)
        sector = np.clip(sector, 0, n_sector - 1)  # a == pi lands on the seam
        h = np.maximum(pts[:, 2] + height_offset, 0.0)
        np.maximum.at(matrix, (ring, sector), h)
    ring_key = np.count_nonzero(matrix, axis=1) / n_sector
    return ScanContextDescriptor(matrix, ring_key.astype(float))


def descriptor_from_config(points, config: ScanContextConfig) -> ScanContextDescriptor:
    return make_descriptor(points, config.n_ring, config.n_sector, config.max_radius,
                           config.height_offset)


def shift_distances(a: ScanContextDescriptor, b: ScanContextDescriptor) -> np.ndarray:
    """Mean column cosine distance between ``a`` and ``b`` rolled left by each shift."""
    A, B = a.matrix, b.matrix
    if A.shape != B.shape:
        raise ValueError(f"descriptor shapes differ: {A.shape} vs {B.shape}")
    S = A.shape[1]
    idx = (np.arange(S)[None, :] + np.arange(S)[:, None]) % S  # idx[s, j] = j + s
    Bs = B[:, idx]  # (R, S shifts, S columns)
    dot = np.sum(A[:, None, :] * Bs, axis=0)
    na2 = np.sum(A * A, axis=0)[None, :]
    nb2 = np.sum(B * B, axis=0)[idx]
    live = (na2 > 0) & (nb2 > 0)
    # sqrt(na2 * nb2) keeps d(a, a) exactly zero: dot == na2 == nb2 bitwise there
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(live, dot / np.sqrt(na2 * nb2), 0.0)
    d = np.where(live, 1.0 - np.clip(cos, -1.0, 1.0), 0.0)
    n_live = live.sum(axis=1)
    out = np.ones(S)
    has = n_live > 0
    out[has] = d[has].sum(axis=1) / n_live[has]
    return np.clip(out, 0.0, 1.0)


def descriptor_distance(a: ScanContextDescriptor, b: ScanContextDescriptor) -> tuple[float, int]:
    """(min over shifts, argmin shift). ``b`` rotated by ``k`` sectors gives shift ``k``."""
    d = shift_distances(a, b)
    s = int(np.argmin(d))  # first index on ties
    return float(d[s]), s


def shift_to_yaw(shift: int, n_sector: int) -> float:
    """Yaw (rad, in (-pi, pi]) of a matched scan's frame relative to the query's frame.

    If the stored scan sees the scene rotated by ``+yaw`` about z, the query's
    pose in the stored scan's frame is approximately ``rot_z(yaw)``.
    """
    yaw = 2 * math.pi * shift / n_sector
    return yaw - 2 * math.pi if yaw > math.pi else yaw


@dataclass
class LoopCandidate:
    id: int
    distance: float
    shift: int


class DescriptorDatabase:
    """Append-only descriptor store; queries ignore the newest ``exclusion_window`` entries."""

    def __init__(self, exclusion_window: int = 50):
        if exclusion_window < 0:
            raise ValueError("exclusion_window must be >= 0")
        self.exclusion_window = int(exclusion_window)
        self.ids: list[int] = []
        self.descriptors: list[ScanContextDescriptor] = []
        self._tree = None
        self._tree_size = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def index_size(self) -> int:
        """Number of entries eligible for queries right now."""
        return max(0, len(self.ids) - self.exclusion_window)

    def insert(self, descriptor: ScanContextDescriptor, id: int) -> None:
        id = int(id)
        if self.ids and id <= self.ids[-1]:
            raise ValueError(f"ids must be strictly increasing: {id} after {self.ids[-1]}")
        if self.descriptors and descriptor.shape != self.descriptors[0].shape:
            raise ValueError("descriptor shape differs from database")
        self.ids.append(id)
        self.descriptors.append(descriptor)

    def _index(self):
        n = self.index_size
        if n != self._tree_size:
            keys = np.array([d.ring_key for d in self.descriptors[:n]])
            self._tree = cKDTree(keys) if n else None
            self._tree_size = n
        return self._tree

    def candidates(self, descriptor: ScanContextDescriptor, num_candidates: int) -> list[int]:
        """Positions of the nearest ring keys (Euclidean) among eligible entries."""
        tree = self._index()
        if tree is None:
            return []
        k = min(num_candidates, self._tree_size)
        _, pos = tree.query(descriptor.ring_key, k=k)
        return sorted(int(p) for p in np.atleast_1d(pos))

    def query(self, descriptor: ScanContextDescriptor, num_candidates: int = 10,
              accept_threshold: float = 0.2) -> LoopCandidate | None:
        if not 0 < accept_threshold < 1:
            raise ValueError("accept_threshold must be in (0, 1)")
        best = None
        for p in self.candidates(descriptor, num_candidates):
            dist, shift = descriptor_distance(descriptor, self.descriptors[p])
            if best is None or dist < best.distance:
                best = LoopCandidate(self.ids[p], dist, shift)
        if best is None or not best.distance < accept_threshold:
            return None
        return best
