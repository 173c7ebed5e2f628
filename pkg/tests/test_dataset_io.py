import struct

import numpy as np
import pytest

from lidarkit.dataset_io import (
    ParseError,
    Trajectory,
    format_tum_line,
    open_dataset,
    read_groundtruth,
    read_kitti_bin,
    read_ply,
    read_scan,
    scan_timestamps,
    write_kitti_bin,
    write_ply,
    write_trajectory_kitti,
    write_trajectory_tum,
)
from lidarkit.geometry import make_pose, rot_z

from conftest import random_pose


def test_kitti_bin_single_record(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(struct.pack("<4f", 1.0, 2.0, 3.0, 0.5))
    np.testing.assert_array_equal(read_kitti_bin(p), [[1.0, 2.0, 3.0]])


def test_kitti_bin_truncated_reports_offset(tmp_path):
    p = tmp_path / "a.bin"
    p.write_bytes(struct.pack("<4f", 1, 2, 3, 4) + b"\x00" * 6)
    with pytest.raises(ParseError, match="byte offset 16"):
        read_kitti_bin(p)


def test_kitti_bin_round_trip(tmp_path, rng):
    pts = rng.normal(size=(100, 3)).astype(np.float32).astype(np.float64)
    p = tmp_path / "a.bin"
    write_kitti_bin(p, pts)
    np.testing.assert_array_equal(read_kitti_bin(p), pts)


def test_ascii_ply(tmp_path):
    p = tmp_path / "a.ply"
    p.write_text("ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\n"
                 "property float z\nproperty uchar label\nend_header\n1 2 3 0\n4 5 6 2\n")
    d = read_ply(p)
    np.testing.assert_array_equal(d["points"], [[1, 2, 3], [4, 5, 6]])
    np.testing.assert_array_equal(d["label"], [0, 2])


@pytest.mark.parametrize("binary", [True, False])
@pytest.mark.parametrize("dtype", ["float", "double"])
def test_ply_round_trip(tmp_path, rng, binary, dtype):
    pts = rng.normal(size=(50, 3))
    if dtype == "float":
        pts = pts.astype(np.float32).astype(np.float64)
    labels = rng.integers(0, 5, size=50)
    p = tmp_path / "a.ply"
    write_ply(p, pts, labels, binary=binary, dtype=dtype)
    d = read_ply(p)
    np.testing.assert_array_equal(d["points"], pts)
    np.testing.assert_array_equal(d["label"], labels)
    if binary:
        assert b"property uchar label" in p.read_bytes()[:300]


def test_binary_ply_truncated(tmp_path):
    p = tmp_path / "a.ply"
    write_ply(p, np.zeros((10, 3)))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(ParseError, match="truncated payload at byte offset"):
        read_ply(p)


@pytest.mark.parametrize("text", [
    "not a ply\n",
    "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n",
    "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n",
    "ply\nformat ascii 1.0\nproperty float x\nend_header\n",
    "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n"
    "end_header\n1 2 3\n",
])
def test_malformed_ply(tmp_path, text):
    p = tmp_path / "a.ply"
    p.write_text(text)
    with pytest.raises(ParseError):
        read_ply(p)


def test_read_scan_drops_nonfinite(tmp_path):
    p = tmp_path / "a.ply"
    write_ply(p, [[1, 2, 3], [np.nan, 0, 0], [0, np.inf, 0], [4, 5, 6]], dtype="double")
    np.testing.assert_array_equal(read_scan(p), [[1, 2, 3], [4, 5, 6]])
    with pytest.raises(ParseError):
        read_scan(tmp_path / "a.xyz")


def test_tum_identity_line():
    assert format_tum_line(0.0, np.eye(4)) == "0.000000000 0 0 0 0 0 0 1"


def test_tum_half_turn_is_canonical():
    tokens = format_tum_line(1.5, make_pose(rot_z(np.pi))).split()
    assert tokens[0] == "1.500000000"
    np.testing.assert_allclose([float(t) for t in tokens[4:]], [0, 0, 1, 0], atol=1e-15)


def test_tum_round_trip(tmp_path, rng):
    traj = Trajectory([0.1 * i for i in range(50)], [random_pose(rng) for _ in range(50)])
    p = tmp_path / "t.txt"
    write_trajectory_tum(traj, p)
    back = read_groundtruth(p)
    assert len(back) == 50
    np.testing.assert_allclose(back.timestamps, traj.timestamps, atol=1e-9)
    for a, b in zip(traj.poses, back.poses):
        np.testing.assert_allclose(b, a, atol=1e-12)


def test_kitti_round_trip(tmp_path, rng):
    traj = Trajectory([0.1 * i for i in range(5)], [np.eye(4)] + [random_pose(rng) for _ in range(4)])
    p = tmp_path / "poses.txt"
    write_trajectory_kitti(traj, p)
    assert p.read_text().splitlines()[0] == "1 0 0 0 0 1 0 0 0 0 1 0"
    back = read_groundtruth(p, "kitti", period=0.1)
    np.testing.assert_allclose(back.timestamps, [0, 0.1, 0.2, 0.30000000000000004, 0.4])
    for a, b in zip(traj.poses, back.poses):
        np.testing.assert_allclose(b, a, atol=1e-12)


def test_groundtruth_errors_name_line(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("# comment\n0 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n")
    with pytest.raises(ParseError, match=":3: timestamp"):
        read_groundtruth(p)
    p.write_text("0 0 0 0 0 0 0 1\n1 0 0 zero 0 0 0 1\n")
    with pytest.raises(ParseError, match=":2: bad float"):
        read_groundtruth(p)
    p.write_text("0 0 0 0 0 0 1\n")
    with pytest.raises(ParseError, match=":1: expected 8"):
        read_groundtruth(p)
    with pytest.raises(ValueError):
        read_groundtruth(p, "euroc")


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0, 0], [np.eye(4)] * 2)
    with pytest.raises(ValueError):
        Trajectory([0], [])
    t = Trajectory()
    t.append(1.0, np.eye(4))
    with pytest.raises(ValueError):
        t.append(1.0, np.eye(4))
    assert t.positions().shape == (1, 3)


def test_open_dataset_ordering_and_groundtruth(tmp_path):
    scans = tmp_path / "scans"
    scans.mkdir()
    for name in ("000010.bin", "000002.bin", "000001.bin", "notes.txt"):
        (scans / name).write_bytes(b"")
    (tmp_path / "poses.txt").write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
    ds = open_dataset(tmp_path)
    assert [p.name for p in ds.scan_files] == ["000001.bin", "000002.bin", "000010.bin"]
    assert ds.scan_format == "kitti_bin" and ds.groundtruth_format == "kitti"
    assert len(ds) == 3
    (scans / "x.ply").write_bytes(b"")
    with pytest.raises(ParseError):
        open_dataset(tmp_path)
    with pytest.raises(FileNotFoundError):
        open_dataset(tmp_path / "missing")


def test_open_dataset_is_byte_lexicographic(tmp_path):
    for name in ("b.ply", "B.ply", "a.ply", "_.ply"):
        (tmp_path / name).write_bytes(b"")
    ds = open_dataset(tmp_path)
    assert [p.name for p in ds.scan_files] == ["B.ply", "_.ply", "a.ply", "b.ply"]
    assert ds.groundtruth is None


def test_scan_timestamps():
    assert scan_timestamps(["1.5.bin", "2.25.bin"]) == [1.5, 2.25]
    assert scan_timestamps(["000000.bin", "000001.bin"], period=0.5) == [0.0, 0.5]
    # stems that do not increase fall back to the nominal period
    assert scan_timestamps(["2.0.bin", "1.0.bin"]) == [0.0, 0.1]
