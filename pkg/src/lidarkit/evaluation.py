"""Absolute and relative trajectory error statistics (translation, metres)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset_io import Trajectory
from .geometry import make_pose, pose_inverse


class AssociationError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class ErrorStats:
    mean: float
    max: float
    rmse: float
    stdev: float
    errors: np.ndarray  # per-pair series
    timestamps: np.ndarray

    @classmethod
    def from_errors(cls, errors, timestamps=None) -> "ErrorStats":
        e = np.asarray(errors, dtype=float)
        if len(e) == 0:
            raise InsufficientDataError("no errors to summarize")
        ts = np.arange(len(e), dtype=float) if timestamps is None else np.asarray(timestamps, float)
        return cls(float(np.mean(e)), float(np.max(e)), float(np.sqrt(np.mean(e**2))),
                   float(np.std(e)), e, ts)

    def row(self) -> dict:
        return {"mean": self.mean, "max": self.max, "rmse": self.rmse, "std": self.stdev}


def associate(est: Trajectory, ref: Trajectory, max_dt: float = 0.01) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp matching; each pose on either side is used once.

    Candidate pairs within ``max_dt`` are taken in order of increasing
    ``|dt|`` (ties by est index, then ref index). Result is sorted by est index.
    """
    if len(est) == 0 or len(ref) == 0:
        raise AssociationError("empty trajectory")
    te = np.asarray(est.timestamps, float)
    tr = np.asarray(ref.timestamps, float)
    lo = np.searchsorted(tr, te - max_dt, side="left")
    hi = np.searchsorted(tr, te + max_dt, side="right")
    counts = hi - lo
    ei = np.repeat(np.arange(len(te)), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    ri = np.repeat(lo, counts) + offs
    dt = np.abs(te[ei] - tr[ri])
    ok = dt <= max_dt
    ei, ri, dt = ei[ok], ri[ok], dt[ok]
    used_e = np.zeros(len(te), bool)
    used_r = np.zeros(len(tr), bool)
    pairs = []
    for k in np.lexsort((ri, ei, dt)):
        a, b = ei[k], ri[k]
        if not used_e[a] and not used_r[b]:
            used_e[a] = used_r[b] = True
            pairs.append((int(a), int(b)))
    if not pairs:
        raise AssociationError(f"no timestamps within {max_dt} s")
    pairs.sort()
    return pairs


def align_rigid(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares rigid transform (no scale) mapping ``src`` points onto ``dst``."""
    src = np.asarray(src, float)
    dst = np.asarray(dst, float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(C)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return make_pose(R, mu_d - R @ mu_s)


def _matched(est, ref, max_dt):
    pairs = associate(est, ref, max_dt)
    E = [est.poses[i] for i, _ in pairs]
    F = [ref.poses[j] for _, j in pairs]
    ts = np.array([ref.timestamps[j] for _, j in pairs])
    return E, F, ts


def ape(est: Trajectory, ref: Trajectory, align: bool = True, max_dt: float = 0.01) -> ErrorStats:
    E, F, ts = _matched(est, ref, max_dt)
    if len(E) < 2:
        raise InsufficientDataError("APE needs at least 2 associated poses")
    pe = np.array([T[:3, 3] for T in E])
    pr = np.array([T[:3, 3] for T in F])
    if align:
        S = align_rigid(pe, pr)
        pe = pe @ S[:3, :3].T + S[:3, 3]
    return ErrorStats.from_errors(np.linalg.norm(pe - pr, axis=1), ts)


def rpe(est: Trajectory, ref: Trajectory, delta: int = 1, max_dt: float = 0.01) -> ErrorStats:
    if delta < 1:
        raise ValueError("delta must be >= 1")
    E, F, ts = _matched(est, ref, max_dt)
    if len(E) < delta + 1:
        raise InsufficientDataError(f"RPE with delta={delta} needs at least {delta + 1} pairs")
    err = []
    for i in range(len(E) - delta):
        d_ref = pose_inverse(F[i]) @ F[i + delta]
        d_est = pose_inverse(E[i]) @ E[i + delta]
        err.append(np.linalg.norm((pose_inverse(d_ref) @ d_est)[:3, 3]))
    return ErrorStats.from_errors(err, ts[delta:])


def write_stats_csv(path, stats: dict[str, ErrorStats]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "mean", "max", "rmse", "std", "n"])
        for name, s in stats.items():
            w.writerow([name, repr(s.mean), repr(s.max), repr(s.rmse), repr(s.stdev), len(s.errors)])


def write_series_csv(path, stats: ErrorStats) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "error"])
        for t, e in zip(stats.timestamps, stats.errors):
            w.writerow([repr(float(t)), repr(float(e))])
