"""Per-scan odometry loop and the loop-closing SLAM wrapper around it."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .classification import LabeledCloud, classify
from .config import PipelineConfig, default_config
from .dataset_io import DatasetLayout, Trajectory, read_scan, scan_timestamps, write_ply
from .geometry import GeometryError, make_pose, pose_compose, pose_inverse, rot_z
from .normals import compute_normals
from .pose_graph import PoseGraph, loop_information, odometry_information
from .projection import EmptyInputError, project
from .registration import (
    EmptyInputError as RegistrationEmptyError,
    RegistrationError,
    RegistrationParams,
    predict_initial_guess,
    register,
)
from .scan_context import DescriptorDatabase, descriptor_from_config, shift_to_yaw
from .voxel_map import VoxelMap, downsample

log = logging.getLogger(__name__)

DIAGNOSTIC_FIELDS = [
    "scan", "timestamp", "status", "n_points", "n_source", "iterations", "converged",
    "alpha", "n_planar", "n_point", "lambda_t1", "lambda_t2", "lambda_t3",
    "min_weight", "mean_weight", "rms_planar", "rms_point",
]

LOOP_FIELDS = ["query_id", "match_id", "distance", "shift", "accepted", "rms", "query_scan", "match_scan"]


@dataclass
class ScanDiagnostics:
    scan: int
    timestamp: float
    status: str  # "first", "ok", "skipped"
    n_points: int = 0
    n_source: int = 0
    iterations: int = 0
    converged: bool = False
    alpha: float = float("nan")
    n_planar: int = 0
    n_point: int = 0
    lambda_t: tuple = (float("nan"),) * 3
    min_weight: float = float("nan")
    mean_weight: float = float("nan")
    rms_planar: float = float("nan")
    rms_point: float = float("nan")

    def row(self) -> list:
        return [
            self.scan, repr(self.timestamp), self.status, self.n_points, self.n_source,
            self.iterations, int(self.converged), repr(self.alpha), self.n_planar, self.n_point,
            *(repr(float(x)) for x in self.lambda_t), repr(self.min_weight), repr(self.mean_weight),
            repr(self.rms_planar), repr(self.rms_point),
        ]


@dataclass
class LoopEvent:
    query_id: int
    match_id: int
    distance: float
    shift: int
    accepted: bool
    rms: float
    query_scan: int
    match_scan: int

    def row(self) -> list:
        return [self.query_id, self.match_id, repr(self.distance), self.shift, int(self.accepted),
                repr(self.rms), self.query_scan, self.match_scan]


@dataclass
class Keyframe:
    id: int
    scan: int
    pose: np.ndarray  # odometry estimate
    source: LabeledCloud  # downsampled, sensor frame


@dataclass
class RunResult:
    trajectory: Trajectory
    diagnostics: list
    voxel_map: VoxelMap
    keyframes: list = field(default_factory=list)
    graph: PoseGraph | None = None
    loops: list = field(default_factory=list)
    odometry: Trajectory | None = None  # before loop correction (SLAM only)

    @property
    def n_skipped(self) -> int:
        return sum(d.status == "skipped" for d in self.diagnostics)

    def failed(self, max_skip_fraction: float = 0.1) -> bool:
        n = len(self.diagnostics)
        return n == 0 or self.n_skipped > max_skip_fraction * n

    def map_cloud(self) -> LabeledCloud:
        """World-frame map; with a pose graph, rebuilt from keyframes at corrected poses."""
        if self.graph is None or not self.graph.loop_edges:
            return self.voxel_map.point_cloud()
        m = VoxelMap(self.voxel_map.voxel_size, self.voxel_map.max_points_per_voxel, np.inf)
        for kf in self.keyframes:
            m.add_points(*_world_arrays(kf.source, self.graph.nodes[kf.id]))
        return m.point_cloud()


def _world_arrays(cloud: LabeledCloud, pose):
    w = cloud.transformed(pose)
    return w.points, w.labels, w.normals


def preprocess(points: np.ndarray, config: PipelineConfig):
    """Range gate, project, estimate normals and classify; returns (full, downsampled) clouds."""
    proj = config.projection()
    pts = np.asarray(points, float).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    pts = pts[(r >= proj.r_min) & (r <= proj.r_max)]
    if len(pts) == 0:
        raise EmptyInputError("no points inside the range gate")
    image = project(pts, proj)
    normals = compute_normals(image, config.normals())
    cloud = classify(image, normals, config.classify())
    # keep only points that own a pixel; collision losers carry no geometry information
    cloud = cloud.subset(np.sort(image.point_index[image.valid]))
    source = downsample(cloud, config["map.downsample_voxel"], config["map.adaptive_downsample"])
    return cloud, source


class Odometry:
    """Stateful scan-to-map odometry; feed scans in order with :meth:`step`."""

    def __init__(self, config: PipelineConfig | None = None, drift: np.ndarray | None = None):
        self.config = config or default_config()
        self.params: RegistrationParams = self.config.registration()
        self.map = VoxelMap(self.config["map.voxel_size"], self.config["map.max_points_per_voxel"],
                            self.config["map.max_map_range"])
        self.poses: list[np.ndarray] = []
        self.drift = drift
        self.diagnostics: list[ScanDiagnostics] = []

    def step(self, index: int, timestamp: float, points: np.ndarray):
        """Register one scan. Returns ``(pose, full_cloud, source_cloud, diagnostics)``."""
        diag = ScanDiagnostics(index, timestamp, "ok", n_points=len(points))
        try:
            cloud, source = preprocess(points, self.config)
        except EmptyInputError as exc:
            log.warning("scan %d: %s; skipped", index, exc)
            cloud, source = LabeledCloud.empty(), LabeledCloud.empty()
        diag.n_source = len(source)
        guess = predict_initial_guess(self.poses[-2:])
        if not self.poses:
            pose = np.eye(4)
            diag.status = "first"
            if len(source) == 0:
                diag.status = "skipped"
        elif len(source) == 0 or self.map.empty():
            pose = guess
            diag.status = "skipped"
        else:
            try:
                pose, rep = register(source, self.map, guess, self.params)
            except (RegistrationError, RegistrationEmptyError, GeometryError) as exc:
                log.warning("scan %d: registration failed (%s); constant-velocity pose used", index, exc)
                pose = guess
                diag.status = "skipped"
            else:
                diag.iterations, diag.converged = rep.iterations, rep.converged
                diag.alpha, diag.n_planar, diag.n_point = rep.alpha, rep.n_planar, rep.n_point
                diag.rms_planar, diag.rms_point = rep.rms_planar, rep.rms_point
                if rep.degeneracy is not None:
                    diag.lambda_t = tuple(rep.degeneracy.eigenvalues)
                    diag.min_weight = rep.degeneracy.min_weight
                    diag.mean_weight = rep.degeneracy.mean_weight
        if self.drift is not None and self.poses:
            pose = pose_compose(pose, self.drift)
        if diag.status != "skipped":
            self.map.insert(source, pose)
        self.poses.append(pose)
        self.diagnostics.append(diag)
        return pose, cloud, source, diag


def _scans(dataset: DatasetLayout, config: PipelineConfig):
    stamps = scan_timestamps(dataset.scan_files, config["pipeline.scan_period"])
    for i, (path, t) in enumerate(zip(dataset.scan_files, stamps)):
        yield i, t, read_scan(path, dataset.scan_format)


def run_odometry(dataset: DatasetLayout, config: PipelineConfig | None = None,
                 drift: np.ndarray | None = None) -> RunResult:
    """Scan-to-map odometry over the whole dataset.

    ``drift`` (a 4x4 transform) is right-multiplied onto every registered pose
    after the first; it exists to stress the loop-closure back-end in tests.
    """
    config = config or default_config()
    odo = Odometry(config, drift)
    traj = Trajectory()
    for i, t, pts in _scans(dataset, config):
        pose, _, _, _ = odo.step(i, t, pts)
        traj.append(t, pose)
    return RunResult(traj, odo.diagnostics, odo.map)


class LoopCloser:
    """Keyframe selection, descriptor retrieval, loop verification and the pose graph."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.sc = config.scan_context()
        self.db = DescriptorDatabase(self.sc.exclusion_window)
        self.graph = PoseGraph(loop_exclusion=self.sc.exclusion_window)
        self.keyframes: list[Keyframe] = []
        self.loops: list[LoopEvent] = []
        self.params = config.registration()

    def is_keyframe(self, scan: int, pose: np.ndarray) -> bool:
        if not self.keyframes:
            return True
        last = self.keyframes[-1]
        return (scan - last.scan >= self.config["sc.keyframe_every"]
                or np.linalg.norm(pose[:3, 3] - last.pose[:3, 3]) >= self.config["sc.keyframe_distance"])

    def add(self, scan: int, pose: np.ndarray, cloud: LabeledCloud, source: LabeledCloud) -> None:
        kid = len(self.keyframes)
        kf = Keyframe(kid, scan, pose, source)
        if kid == 0:
            self.graph.add_node(0, pose)
        else:
            prev = self.keyframes[-1]
            Z = pose_inverse(prev.pose) @ pose
            info = odometry_information(Z, self.config["graph.odom_min_step"])
            self.graph.add_odometry_edge(prev.id, kid, Z, info)
        desc = descriptor_from_config(cloud.points, self.sc)
        cand = self.db.query(desc, self.sc.num_candidates, self.sc.accept_threshold)
        if cand is not None:
            self._verify(kf, cand)
        self.db.insert(desc, kid)
        self.keyframes.append(kf)

    def _verify(self, kf: Keyframe, cand) -> None:
        match = self.keyframes[cand.id]
        yaw = shift_to_yaw(cand.shift, self.sc.n_sector)
        target = VoxelMap(self.config["map.voxel_size"], self.config["map.max_points_per_voxel"], np.inf)
        target.insert(match.source, np.eye(4))
        odo_rel = pose_inverse(match.pose) @ kf.pose
        guesses = [make_pose(rot_z(yaw)), make_pose(rot_z(yaw), odo_rel[:3, 3])]
        best = None
        for g in guesses:
            try:
                T, rep = register(kf.source, target, g, self.params)
            except (RegistrationError, RegistrationEmptyError, GeometryError):
                continue
            n = max(len(kf.source), 1)
            overlap = (rep.n_planar + rep.n_point) / n
            rms = rep.rms_planar if rep.n_planar else rep.rms_point
            if overlap < self.config["graph.loop_min_overlap"] or not np.isfinite(rms):
                continue
            if best is None or rms < best[2]:
                best = (T, rep, rms)
        accepted = best is not None and best[2] <= self.config["graph.loop_max_rms"]
        rms = best[2] if best is not None else float("nan")
        self.loops.append(LoopEvent(kf.id, match.id, cand.distance, cand.shift, accepted, rms,
                                    kf.scan, match.scan))
        if accepted:
            T, rep, _ = best
            # T is the pose of kf in match's frame:  X_match^-1 X_kf
            self.graph.add_loop_edge(match.id, kf.id, T, loop_information(T, rep.hessian))


def run_slam(dataset: DatasetLayout, config: PipelineConfig | None = None,
             drift: np.ndarray | None = None) -> RunResult:
    """Odometry plus Scan Context loop closure and a final pose-graph optimization.

    Scans are re-expressed relative to their most recent keyframe, so the
    corrected trajectory follows the optimized keyframe poses. The live map
    used by odometry is never rebuilt.
    """
    config = config or default_config()
    odo = Odometry(config, drift)
    closer = LoopCloser(config) if config["loop_closure.enabled"] else None
    traj = Trajectory()
    owner = []  # keyframe id governing each scan
    for i, t, pts in _scans(dataset, config):
        pose, cloud, source, diag = odo.step(i, t, pts)
        traj.append(t, pose)
        if closer is not None and diag.status != "skipped" and closer.is_keyframe(i, pose):
            closer.add(i, pose, cloud, source)
        owner.append(len(closer.keyframes) - 1 if closer is not None else -1)
    result = RunResult(traj, odo.diagnostics, odo.map, odometry=traj)
    if closer is None:
        return result
    result.keyframes, result.graph, result.loops = closer.keyframes, closer.graph, closer.loops
    if not closer.graph.loop_edges:
        return result
    closer.graph.optimize(config["graph.max_iters"], config["graph.eps"], config["graph.damping"])
    corrected = Trajectory()
    for (t, pose), k in zip(traj, owner):
        if k < 0:
            corrected.append(t, pose)
            continue
        kf = closer.keyframes[k]
        corrected.append(t, closer.graph.nodes[k] @ pose_inverse(kf.pose) @ pose)
    result.trajectory = corrected
    return result


def write_diagnostics(path, diagnostics) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(DIAGNOSTIC_FIELDS)
        for d in diagnostics:
            w.writerow(d.row())


def write_loops(path, loops) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOOP_FIELDS)
        for e in loops:
            w.writerow(e.row())


def export_map(result: RunResult, path) -> int:
    cloud = result.map_cloud()
    write_ply(path, cloud.points, cloud.labels)
    return len(cloud)
