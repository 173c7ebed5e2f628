import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lidarkit.geometry import make_pose, se3_exp
from lidarkit.normals import compute_normals
from lidarkit.projection import project
from lidarkit.classification import classify
from lidarkit.synthetic import SyntheticWorld

settings.register_profile(
    "lidarkit", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "lidarkit"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return se3_exp(np.r_[axis * rng.uniform(0, max_angle), 0, 0, 0])[:3, :3]


def random_pose(rng, max_angle=np.pi * 0.95, max_trans=10.0):
    t = rng.uniform(-max_trans, max_trans, size=3)
    return make_pose(random_rotation(rng, max_angle), t)


class BoxScan:
    """Scan 0 of the default box room, run through projection, normals and classification."""

    def __init__(self, index=0):
        self.world = SyntheticWorld("box_room")
        self.scene = self.world.scene()
        self.pose = self.world.poses()[index]
        self.points, self.surface_ids = self.world.scan(self.pose)
        self.image = project(self.points, self.world.projection)
        self.normals = compute_normals(self.image)
        self.cloud = classify(self.image, self.normals)


@pytest.fixture(scope="session")
def box_scan():
    return BoxScan(0)


def square_loop(side=10, step=1.0, total_yaw_drift_deg=5.0):
    """Ground-truth square (closing on itself) and odometry with evenly spread yaw drift.

    Returns ``(truth, measurements)`` where ``measurements[k]`` is the drifted
    relative pose from node ``k`` to ``k + 1``.
    """
    from lidarkit.geometry import make_pose, rot_z

    truth = [np.eye(4)]
    n_per_side = int(round(side / step))
    for s in range(4):
        for k in range(n_per_side):
            turn = np.pi / 2 if (k == n_per_side - 1) else 0.0
            truth.append(truth[-1] @ make_pose(rot_z(turn), (step, 0.0, 0.0)))
    n = len(truth) - 1
    drift = make_pose(rot_z(np.deg2rad(total_yaw_drift_deg) / n))
    meas = [np.linalg.inv(truth[k]) @ truth[k + 1] @ drift for k in range(n)]
    return truth, meas
