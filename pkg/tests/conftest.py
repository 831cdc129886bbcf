import numpy as np
import pytest

from dimenet.geometry import Correspondences, Intrinsics, Pose, project

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def random_k(rng, f=2900.0):
    return Intrinsics(
        f * rng.uniform(0.9, 1.1), f * rng.uniform(0.9, 1.1),
        2016 + rng.uniform(-80, 80), 1512 + rng.uniform(-80, 80),
    )


def random_pose(rng, dist=(450.0, 700.0)):
    return Pose.from_rotvec(rng.normal(0, 0.4, 3), [rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(*dist)])


def random_frame(rng, n=60, k=None, pose=None, noise=0.0):
    """Non-planar world points seen by (k, pose); returns (k, pose, corrs)."""
    k = k or random_k(rng)
    pose = pose or random_pose(rng)
    # points in a box in front of the camera, mapped back into the world frame
    P = np.column_stack([rng.uniform(-150, 150, n), rng.uniform(-110, 110, n), rng.uniform(-60, 60, n)])
    P += pose.t
    X = pose.inverse().apply(P)
    px = project(k, pose, X)
    if noise:
        px = px + rng.normal(0, noise, px.shape)
    return k, pose, Correspondences(px, X)


def pose_error(a: Pose, b: Pose):
    return np.linalg.norm(a.local(b)[:3]), np.linalg.norm(a.t - b.t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
