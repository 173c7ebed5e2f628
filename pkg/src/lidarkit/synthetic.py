"""Ray-cast synthetic worlds built from planar rectangles.

Scans are exact ray/rectangle intersections sampled on the bin-center grid of
a :class:`ProjectionConfig`, so every pixel of a projected synthetic scan maps
back to its own ray. Ground truth poses are sensor poses in the world frame;
files written by :func:`generate_synthetic` express them relative to the
first pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classification import PointLabel
from .dataset_io import DatasetLayout, Trajectory, open_dataset, write_ply, write_trajectory_tum
from .geometry import make_pose, pose_inverse, rot_z
from .projection import ProjectionConfig

SCENES = ("straight_corridor", "zigzag_corridor", "corridor_loop", "box_room", "outdoor_blocks")


@dataclass
class Scene:
    centers: np.ndarray  # (K, 3)
    half_a: np.ndarray  # (K, 3) half-edge vectors
    half_b: np.ndarray  # (K, 3)
    kinds: list = field(default_factory=list)

    @property
    def normals(self) -> np.ndarray:
        n = np.cross(self.half_a, self.half_b)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def __len__(self):
        return len(self.centers)


def _scene(rects) -> Scene:
    c, a, b, k = zip(*rects)
    return Scene(np.array(c, float), np.array(a, float), np.array(b, float), list(k))


def _vertical_wall(p0, p1, z0, z1, kind="wall"):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    mid = 0.5 * (p0 + p1)
    return (
        (mid[0], mid[1], 0.5 * (z0 + z1)),
        (0.5 * (p1[0] - p0[0]), 0.5 * (p1[1] - p0[1]), 0.0),
        (0.0, 0.0, 0.5 * (z1 - z0)),
        kind,
    )


def _horizontal(x0, x1, y0, y1, z, kind):
    return (
        (0.5 * (x0 + x1), 0.5 * (y0 + y1), z),
        (0.5 * (x1 - x0), 0.0, 0.0),
        (0.0, 0.5 * (y1 - y0), 0.0),
        kind,
    )


def box_room(length=10.0, width=8.0, height=3.0) -> Scene:
    x, y = 0.5 * length, 0.5 * width
    corners = [(-x, -y), (x, -y), (x, y), (-x, y)]
    rects = [_horizontal(-x, x, -y, y, 0.0, "floor"), _horizontal(-x, x, -y, y, height, "ceiling")]
    for i in range(4):
        rects.append(_vertical_wall(corners[i], corners[(i + 1) % 4], 0.0, height))
    return _scene(rects)


def _offset_polyline(points, offset, closed=False):
    """Miter-joined parallel polyline at signed distance ``offset`` (left positive).

    With ``closed`` the first and last points coincide and are mitered too.
    """
    pts = np.asarray(points, float)
    d = np.diff(pts, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    left = np.stack([-d[:, 1], d[:, 0]], axis=1)

    def miter(i, l0, l1):
        m = l0 + l1
        m /= np.linalg.norm(m)
        return pts[i] + offset / float(m @ l1) * m

    out = [miter(0, left[-1], left[0]) if closed else pts[0] + offset * left[0]]
    for i in range(1, len(pts) - 1):
        out.append(miter(i, left[i - 1], left[i]))
    out.append(out[0].copy() if closed else pts[-1] + offset * left[-1])
    return np.array(out)


def _pillars(centerline, width, height, n, size, rng):
    """Square floor-to-ceiling pillars set against alternating corridor walls."""
    pts = np.asarray(centerline, float)
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    rects = []
    for k, s in enumerate(np.sort(rng.uniform(0.0, cum[-1], size=n))):
        i = min(np.searchsorted(cum, s, side="right") - 1, len(seg) - 1)
        d = seg[i] / seg_len[i]
        left = np.array([-d[1], d[0]])
        side = 1.0 if k % 2 == 0 else -1.0
        c = pts[i] + (s - cum[i]) * d + side * (0.5 * width - 0.5 * size) * left
        h = 0.5 * size
        foot = [c + h * (-d - left), c + h * (d - left), c + h * (d + left), c + h * (-d + left)]
        for j in range(4):
            rects.append(_vertical_wall(foot[j], foot[(j + 1) % 4], 0.0, height))
    return rects


def corridor(centerline, width=2.5, height=3.0, closed=None, n_pillars=0, pillar_size=0.5,
             seed=0) -> Scene:
    """Walls either side of ``centerline``; open corridors get end caps.

    ``n_pillars`` square pillars placed at random stations along the walls
    break the corridor's self-similarity (useful for place recognition).
    """
    pts = np.asarray(centerline, float)
    if closed is None:
        closed = bool(np.allclose(pts[0], pts[-1]))
    left = _offset_polyline(pts, 0.5 * width, closed)
    right = _offset_polyline(pts, -0.5 * width, closed)
    rects = []
    for side in (left, right):
        for p0, p1 in zip(side[:-1], side[1:]):
            rects.append(_vertical_wall(p0, p1, 0.0, height))
    if not closed:
        rects.append(_vertical_wall(left[0], right[0], 0.0, height))
        rects.append(_vertical_wall(left[-1], right[-1], 0.0, height))
    if n_pillars:
        rects += _pillars(pts, width, height, n_pillars, pillar_size, np.random.default_rng(seed))
    allp = np.vstack([left, right])
    lo, hi = allp.min(axis=0) - 1.0, allp.max(axis=0) + 1.0
    rects.append(_horizontal(lo[0], hi[0], lo[1], hi[1], 0.0, "floor"))
    rects.append(_horizontal(lo[0], hi[0], lo[1], hi[1], height, "ceiling"))
    return _scene(rects)


def zigzag_centerline(segment_length=6.0, n_segments=4, angle_deg=35.0):
    pts = [np.zeros(2)]
    for i in range(n_segments):
        a = np.deg2rad(angle_deg if i % 2 == 0 else -angle_deg)
        pts.append(pts[-1] + segment_length * np.array([np.cos(a), np.sin(a)]))
    return np.array(pts)


def rounded_polygon(vertices, radius=4.0, n_arc=13):
    """Closed polyline through a polygon with filleted corners.

    Starts at the midpoint of the first edge and returns to it. ``radius`` is
    reduced per corner where the adjacent edges are too short.
    """
    V = np.asarray(vertices, float)
    n = len(V)
    start = 0.5 * (V[0] + V[1])
    pts = [start]
    for k in range(1, n + 1):
        v, a, b = V[k % n], V[k - 1], V[(k + 1) % n]
        d_in = (v - a) / np.linalg.norm(v - a)
        d_out = (b - v) / np.linalg.norm(b - v)
        turn = np.arctan2(d_in[0] * d_out[1] - d_in[1] * d_out[0], d_in @ d_out)
        if abs(turn) < 1e-9:
            pts.append(v)
            continue
        half_edge = 0.5 * min(np.linalg.norm(v - a), np.linalg.norm(b - v))
        r = min(radius, half_edge / np.tan(0.5 * abs(turn)))
        t = r * np.tan(0.5 * abs(turn))
        p_in = v - t * d_in
        side = np.sign(turn)
        normal = side * np.array([-d_in[1], d_in[0]])
        center = p_in + r * normal
        a0 = np.arctan2(p_in[1] - center[1], p_in[0] - center[0])
        for ang in np.linspace(a0, a0 + turn, n_arc):
            pts.append(center + r * np.array([np.cos(ang), np.sin(ang)]))
    pts.append(start)
    return np.array(pts)


def square_path(side=20.0, corner_radius=4.0):
    """Closed square loop with rounded corners, starting mid-way along the bottom side."""
    h = 0.5 * side
    return rounded_polygon([(-h, -h), (h, -h), (h, h), (-h, h)], corner_radius)


def loop_centerline(scale=1.0, corner_radius=3.0):
    """Irregular pentagon loop (no rotational symmetry), rounded corners."""
    verts = np.array([(0.0, 0.0), (22.0, 0.0), (28.0, 12.0), (12.0, 19.0), (-5.0, 11.0)]) * scale
    return rounded_polygon(verts, corner_radius)


def _segment_distance(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


def outdoor_blocks(extent=60.0, n_blocks=40, seed=0, clear_path=None, clearance=4.0) -> Scene:
    rng = np.random.default_rng(seed)
    rects = [_horizontal(-extent, extent, -extent, extent, 0.0, "floor")]
    placed = 0
    tries = 0
    while placed < n_blocks and tries < 50 * n_blocks:
        tries += 1
        cx, cy = rng.uniform(-extent + 8, extent - 8, size=2)
        sx, sy = rng.uniform(2.0, 8.0, size=2)
        h = rng.uniform(2.5, 14.0)
        yaw = rng.uniform(0, np.pi / 2)
        R = rot_z(yaw)[:2, :2]
        foot = np.array([[-sx, -sy], [sx, -sy], [sx, sy], [-sx, sy]]) * 0.5 @ R.T + (cx, cy)
        probe = np.vstack([foot, [[cx, cy]]])
        if np.min(np.linalg.norm(probe, axis=1)) < clearance + 2.0:
            continue
        if clear_path is not None:
            d = min(
                _segment_distance(probe, a, b).min() for a, b in zip(clear_path[:-1], clear_path[1:])
            )
            if d < clearance + 0.5 * max(sx, sy):
                continue
        for i in range(4):
            rects.append(_vertical_wall(foot[i], foot[(i + 1) % 4], 0.0, h))
        ax = np.append(0.5 * sx * R[:, 0], 0.0)
        ay = np.append(0.5 * sy * R[:, 1], 0.0)
        rects.append(((cx, cy, h), tuple(ax), tuple(ay), "block_top"))
        placed += 1
    return _scene(rects)


def ray_directions(config: ProjectionConfig) -> np.ndarray:
    """Sensor-frame unit rays on the bin-center grid, ordered row-major ``[v, u]``."""
    th = config.azimuths()[None, :]
    ph = config.elevations()[:, None]
    d = np.stack(
        [np.cos(ph) * np.cos(th), np.cos(ph) * np.sin(th), np.sin(ph) * np.ones_like(th)], axis=-1
    )
    return d.reshape(-1, 3)


def raycast(scene: Scene, pose, config: ProjectionConfig, noise_std=0.0, rng=None):
    """Intersect every ray of a scan taken at ``pose`` with the scene.

    Returns ``(points, surface_ids)``: sensor-frame hits inside the range gate
    and the index of the rectangle each one lies on.
    """
    dirs_s = ray_directions(config)
    R, o = pose[:3, :3], pose[:3, 3]
    dirs = dirs_s @ R.T
    best = np.full(len(dirs), np.inf)
    sid = np.full(len(dirs), -1, dtype=np.int64)
    normals = scene.normals
    for k in range(len(scene)):
        n = normals[k]
        denom = dirs @ n
        num = float(n @ (scene.centers[k] - o))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        cand = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t < best)
        if not cand.any():
            continue
        idx = np.flatnonzero(cand)
        hit = o + t[idx, None] * dirs[idx] - scene.centers[k]
        a, b = scene.half_a[k], scene.half_b[k]
        inside = (np.abs(hit @ a) <= a @ a * (1 + 1e-12)) & (np.abs(hit @ b) <= b @ b * (1 + 1e-12))
        idx = idx[inside]
        best[idx] = t[idx]
        sid[idx] = k
    keep = np.isfinite(best) & (best >= config.r_min) & (best <= config.r_max)
    r = best[keep]
    if noise_std > 0:
        rng = rng or np.random.default_rng(0)
        r = r + rng.normal(0.0, noise_std, size=r.shape)
    return dirs_s[keep] * r[:, None], sid[keep]


def surface_labels(scene: Scene, surface_ids, sensor_position) -> np.ndarray:
    """Ground-truth class of each hit: the orientation of its surface as seen by the sensor."""
    n = scene.normals.copy()
    facing = np.einsum("ij,ij->i", n, sensor_position - scene.centers)
    n[facing < 0] *= -1
    a = np.abs(n)
    lab = np.where(
        (a[:, 2] > a[:, 0]) & (a[:, 2] > a[:, 1]),
        np.where(n[:, 2] > 0, PointLabel.GROUND, PointLabel.ROOF),
        PointLabel.WALL,
    ).astype(np.uint8)
    return lab[np.asarray(surface_ids)]


def _along_path(path, n, margin, closed=False):
    """``n`` poses along a 2D polyline with headings smoothed over +-1 m."""
    path = np.asarray(path, float)
    seg = np.diff(path, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]

    def point(s):
        s = np.clip(s, 0.0, total) if not closed else np.mod(s, total)
        i = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
        return path[i] + (s - cum[i])[:, None] * (seg[i] / seg_len[i, None])

    if closed:
        s = np.linspace(0.0, total, n + 1)[:-1] + margin
    else:
        s = np.linspace(margin, total - margin, n)
    pos = point(s)
    window = np.linspace(-1.0, 1.0, 21)
    tang = np.zeros((n, 2))
    for w in window:
        step = point(s + w + 0.05) - point(s + w - 0.05)
        tang += step / np.maximum(np.linalg.norm(step, axis=1, keepdims=True), 1e-12)
    yaw = np.arctan2(tang[:, 1], tang[:, 0])
    return pos, yaw


@dataclass
class SyntheticWorld:
    kind: str = "box_room"
    n_scans: int = 100
    seed: int = 0
    noise_std: float = 0.0
    sensor_height: float = 1.5
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    dims: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENES:
            raise ValueError(f"unknown scene {self.kind!r}; choose from {SCENES}")
        if self.n_scans < 1:
            raise ValueError("n_scans must be positive")

    def path(self):
        d = self.dims
        if self.kind == "straight_corridor":
            return np.array([[0.0, 0.0], [d.get("length", 40.0), 0.0]])
        if self.kind == "zigzag_corridor":
            return zigzag_centerline(
                d.get("segment_length", 6.0), int(d.get("n_segments", 4)), d.get("angle_deg", 35.0)
            )
        if self.kind == "corridor_loop":
            return loop_centerline(d.get("scale", 1.0), d.get("corner_radius", 3.0))
        if self.kind == "outdoor_blocks":
            return square_path(d.get("side", 20.0))
        return None

    def scene(self) -> Scene:
        d = self.dims
        if self.kind == "box_room":
            return box_room(d.get("length", 10.0), d.get("width", 8.0), d.get("height", 3.0))
        if self.kind in ("straight_corridor", "zigzag_corridor", "corridor_loop"):
            return corridor(self.path(), d.get("width", 2.5), d.get("height", 3.0),
                            n_pillars=int(d.get("n_pillars", 0)), pillar_size=d.get("pillar_size", 0.5),
                            seed=self.seed)
        return outdoor_blocks(
            d.get("extent", 60.0), int(d.get("n_blocks", 40)), self.seed, clear_path=self.path()
        )

    def poses(self) -> list[np.ndarray]:
        """World-frame sensor poses along the scene's ground-truth path."""
        d = self.dims
        z = self.sensor_height
        if self.kind == "box_room":
            radius = d.get("radius", 1.5)
            ang = np.linspace(0.0, 2 * np.pi, self.n_scans, endpoint=False)
            pos = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            yaw = ang + 0.5 * np.pi
        else:
            closed = self.kind in ("outdoor_blocks", "corridor_loop")
            pos, yaw = _along_path(self.path(), self.n_scans, 0.0 if closed else 1.0, closed=closed)
        return [make_pose(rot_z(y), (p[0], p[1], z)) for p, y in zip(pos, yaw)]

    def scan(self, pose, rng=None):
        return raycast(self.scene(), pose, self.projection, self.noise_std, rng)


def generate_synthetic(world: SyntheticWorld, out_dir) -> DatasetLayout:
    out = Path(out_dir)
    scan_dir = out / "scans"
    scan_dir.mkdir(parents=True, exist_ok=True)
    scene = world.scene()
    poses = world.poses()
    rng = np.random.default_rng(world.seed)
    origin_inv = pose_inverse(poses[0])
    stamps = []
    for i, pose in enumerate(poses):
        pts, _ = raycast(scene, pose, world.projection, world.noise_std, rng)
        write_ply(scan_dir / f"{i:06d}.ply", pts, dtype="double")
        stamps.append(i * 0.1)
    gt = Trajectory(stamps, [origin_inv @ p for p in poses])
    write_trajectory_tum(gt, out / "groundtruth.txt")
    return open_dataset(out)
