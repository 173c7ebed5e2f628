"""Scan and trajectory file formats.

Scans: KITTI velodyne ``.bin`` (float32 x, y, z, intensity records) and PLY
(ascii or binary little endian). Trajectories: TUM
(``timestamp tx ty tz qx qy qz qw``) and KITTI poses (row-major 3x4).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import make_pose, quaternion_to_rotation, rotation_to_quaternion

NOMINAL_PERIOD = 0.1

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class ParseError(ValueError):
    pass


class Trajectory:
    """Timestamped poses with strictly increasing timestamps."""

    def __init__(self, timestamps=(), poses=()):
        self.timestamps = [float(t) for t in timestamps]
        self.poses = [np.array(p, dtype=float) for p in poses]
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")
        if any(b <= a for a, b in zip(self.timestamps, self.timestamps[1:])):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    def append(self, timestamp: float, pose) -> None:
        if self.timestamps and timestamp <= self.timestamps[-1]:
            raise ValueError(f"timestamp {timestamp} does not increase")
        self.timestamps.append(float(timestamp))
        self.poses.append(np.array(pose, dtype=float))

    def positions(self) -> np.ndarray:
        return np.array([p[:3, 3] for p in self.poses]).reshape(-1, 3)

    def copy(self) -> "Trajectory":
        return Trajectory(list(self.timestamps), [p.copy() for p in self.poses])


@dataclass
class DatasetLayout:
    scan_dir: Path
    scan_format: str
    scan_files: list = field(default_factory=list)
    groundtruth: Path | None = None
    groundtruth_format: str = "tum"

    def __len__(self):
        return len(self.scan_files)


def _scan_format_of(path: Path) -> str | None:
    ext = path.suffix.lower()
    if ext == ".bin":
        return "kitti_bin"
    if ext == ".ply":
        return "ply"
    return None


def open_dataset(path, groundtruth=None, groundtruth_format=None) -> DatasetLayout:
    """Locate scans under ``path`` (or ``path/scans``) and an optional ground truth file."""
    root = Path(path)
    scan_dir = root / "scans" if (root / "scans").is_dir() else root
    if not scan_dir.is_dir():
        raise FileNotFoundError(f"no scan directory at {scan_dir}")
    files = sorted(
        (p for p in scan_dir.iterdir() if p.is_file() and _scan_format_of(p)),
        key=lambda p: os.fsencode(p.name),
    )
    formats = {_scan_format_of(p) for p in files}
    if len(formats) > 1:
        raise ParseError(f"mixed scan formats in {scan_dir}: {sorted(formats)}")
    if groundtruth is None:
        for name, fmt in (("groundtruth.txt", "tum"), ("groundtruth.tum", "tum"), ("poses.txt", "kitti")):
            if (root / name).is_file():
                groundtruth, groundtruth_format = root / name, groundtruth_format or fmt
                break
    return DatasetLayout(
        scan_dir=scan_dir,
        scan_format=formats.pop() if formats else "ply",
        scan_files=files,
        groundtruth=Path(groundtruth) if groundtruth is not None else None,
        groundtruth_format=groundtruth_format or "tum",
    )


def scan_timestamps(files, period: float = NOMINAL_PERIOD) -> list[float]:
    """Seconds parsed from decimal file stems, else ``index * period``."""
    stamps = []
    for p in files:
        stem = Path(p).stem
        if not re.fullmatch(r"[0-9]+\.[0-9]+", stem):
            break
        stamps.append(float(stem))
    if len(stamps) == len(files) and all(b > a for a, b in zip(stamps, stamps[1:])):
        return stamps
    return [i * period for i in range(len(files))]


def read_scan(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = fmt or _scan_format_of(path)
    if fmt == "kitti_bin":
        pts = read_kitti_bin(path)
    elif fmt == "ply":
        pts = read_ply(path)["points"]
    else:
        raise ParseError(f"unknown scan format {fmt!r} for {path}")
    return pts[np.all(np.isfinite(pts), axis=1)]


def read_kitti_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise ParseError(
            f"{path}: truncated payload at byte offset {len(raw) - len(raw) % 16} "
            f"({len(raw)} bytes is not a multiple of 16)"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    return data[:, :3].astype(np.float64)


def write_kitti_bin(path, points, intensity=None) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.zeros((len(points), 4), dtype="<f4")
    out[:, :3] = points
    if intensity is not None:
        out[:, 3] = intensity
    Path(path).write_bytes(out.tobytes())


def _parse_ply_header(raw: bytes, path):
    end = raw.find(b"end_header")
    if not raw.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: missing ply magic or end_header at byte offset 0")
    nl = raw.find(b"\n", end)
    if nl < 0:
        raise ParseError(f"{path}: unterminated header at byte offset {end}")
    body_offset = nl + 1
    fmt = None
    elements = []
    offset = 0
    for line in raw[:end].decode("ascii", errors="replace").splitlines():
        tokens = line.split()
        here = offset
        offset += len(line) + 1
        if not tokens or tokens[0] in ("ply", "comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}: unsupported ply format at byte offset {here}: {line!r}")
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise ParseError(f"{path}: malformed element line at byte offset {here}")
            elements.append({"name": tokens[1], "count": int(tokens[2]), "props": []})
        elif tokens[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before element at byte offset {here}")
            if tokens[1] == "list":
                elements[-1]["props"].append(("list", tokens[-1]))
            elif len(tokens) == 3 and tokens[1] in _PLY_TYPES:
                elements[-1]["props"].append((_PLY_TYPES[tokens[1]], tokens[2]))
            else:
                raise ParseError(f"{path}: bad property at byte offset {here}: {line!r}")
        else:
            raise ParseError(f"{path}: unexpected header line at byte offset {here}: {line!r}")
    if fmt is None:
        raise ParseError(f"{path}: no format line in header")
    return fmt, elements, body_offset


def read_ply(path) -> dict:
    """Return ``{"points": (N, 3) float64, <other vertex properties>: (N,)}``."""
    raw = Path(path).read_bytes()
    fmt, elements, body = _parse_ply_header(raw, path)
    vertex_at = next((i for i, e in enumerate(elements) if e["name"] == "vertex"), None)
    if vertex_at is None:
        raise ParseError(f"{path}: no vertex element")
    vertex = elements[vertex_at]
    names = [n for _, n in vertex["props"]]
    if not {"x", "y", "z"} <= set(names):
        raise ParseError(f"{path}: vertex element lacks x, y, z")
    if any(t == "list" for t, _ in vertex["props"]):
        raise ParseError(f"{path}: list properties on vertices are not supported")
    count = vertex["count"]
    if fmt == "ascii":
        lines = raw[body:].decode("ascii", errors="replace").split("\n")
        skip = sum(e["count"] for e in elements[:vertex_at])
        rows = [ln for ln in lines if ln.strip()][skip : skip + count]
        if len(rows) < count:
            raise ParseError(f"{path}: truncated payload at byte offset {len(raw)}: "
                             f"expected {count} vertices, found {len(rows)}")
        try:
            table = np.array([[float(t) for t in r.split()[: len(names)]] for r in rows],
                             dtype=np.float64).reshape(count, -1)
        except ValueError as exc:
            raise ParseError(f"{path}: bad ascii vertex data: {exc}") from None
        if table.shape[1] != len(names):
            raise ParseError(f"{path}: vertex rows have too few fields")
        cols = {n: table[:, i] for i, n in enumerate(names)}
    else:
        offset = body
        for e in elements[:vertex_at]:
            if any(t == "list" for t, _ in e["props"]):
                raise ParseError(f"{path}: list-valued element {e['name']!r} precedes vertices")
            offset += e["count"] * np.dtype([(n, "<" + t) for t, n in e["props"]]).itemsize
        dtype = np.dtype([(n, "<" + t) for t, n in vertex["props"]])
        need = count * dtype.itemsize
        if offset + need > len(raw):
            raise ParseError(f"{path}: truncated payload at byte offset {len(raw)}: "
                             f"vertex data needs bytes {offset}..{offset + need}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        cols = {n: arr[n].astype(np.float64) for n in names}
    out = {"points": np.stack([cols["x"], cols["y"], cols["z"]], axis=1)}
    out.update({n: c for n, c in cols.items() if n not in ("x", "y", "z")})
    return out


def write_ply(path, points, labels=None, binary=True, dtype="float") -> None:
    """Write vertices with optional unsigned-byte ``label`` property."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "<" + _PLY_TYPES[dtype]), ("y", "<" + _PLY_TYPES[dtype]), ("z", "<" + _PLY_TYPES[dtype])]
    if labels is not None:
        fields.append(("label", "u1"))
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(points)}",
        *(f"property {dtype} {a}" for a in "xyz"),
    ]
    if labels is not None:
        header.append("property uchar label")
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        arr = np.empty(len(points), dtype=fields)
        arr["x"], arr["y"], arr["z"] = points.T
        if labels is not None:
            arr["label"] = np.asarray(labels, dtype=np.uint8)
        Path(path).write_bytes(head + arr.tobytes())
    else:
        rows = []
        for i, p in enumerate(points):
            row = " ".join(repr(float(c)) for c in p)
            if labels is not None:
                row += f" {int(labels[i])}"
            rows.append(row)
        Path(path).write_bytes(head + ("\n".join(rows) + "\n").encode("ascii"))


def _fmt(v: float) -> str:
    return np.format_float_positional(float(v) + 0.0, trim="-")


def format_tum_line(timestamp: float, pose) -> str:
    q = rotation_to_quaternion(pose[:3, :3])
    vals = [*pose[:3, 3], *q]
    return f"{timestamp:.9f} " + " ".join(_fmt(v) for v in vals)


def write_trajectory_tum(traj: Trajectory, path) -> None:
    lines = [format_tum_line(t, p) for t, p in traj]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))


def write_trajectory_kitti(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for _, p in traj:
            fh.write(" ".join(_fmt(v) for v in p[:3, :4].reshape(-1)) + "\n")


def _floats(tokens, lineno, path):
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: bad float ({exc})") from None


def read_groundtruth(path, fmt: str = "tum", period: float = NOMINAL_PERIOD) -> Trajectory:
    stamps, poses = [], []
    with open(path, encoding="ascii", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            tokens = s.replace(",", " ").split()
            if fmt == "tum":
                if len(tokens) != 8:
                    raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(tokens)}")
                v = _floats(tokens, lineno, path)
                t = v[0]
                pose = make_pose(quaternion_to_rotation(v[4:8]), v[1:4])
            elif fmt == "kitti":
                if len(tokens) != 12:
                    raise ParseError(f"{path}:{lineno}: expected 12 fields, got {len(tokens)}")
                v = _floats(tokens, lineno, path)
                pose = np.eye(4)
                pose[:3, :4] = np.reshape(v, (3, 4))
                t = len(poses) * period
            else:
                raise ValueError(f"unknown trajectory format {fmt!r}")
            if stamps and t <= stamps[-1]:
                raise ParseError(f"{path}:{lineno}: timestamp {t} does not increase")
            stamps.append(t)
            poses.append(pose)
    return Trajectory(stamps, poses)


read_trajectory_tum = read_groundtruth
