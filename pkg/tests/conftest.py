import dataclasses
import math

import numpy as np
import pytest

from scenephys.geometry import world_vertices
from scenephys.scene import Geometry, ObjectInstance, Pose, Room, Scene
from scenephys.transforms import quat_from_axis_angle, yaw_quat

# One "PASS/FAIL name: detail" line per acceptance criterion, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def box(oid, extents, t, yaw=0.0, category="chair", parent="floor", s=(1.0, 1.0, 1.0)):
    return ObjectInstance(oid, category, Geometry(box=tuple(extents)),
                          Pose(tuple(t), tuple(yaw_quat(yaw)), tuple(s)), parent)


def on_floor(oid, extents, x, z, yaw=0.0, category="chair", lift=0.0):
    return box(oid, extents, (x, 0.5 * extents[1] + lift, z), yaw, category)


def room(width=4.0, depth=4.0):
    return Room.rectangle(width, depth, 2.6, origin=(-width / 2, -depth / 2))


def scene(*objects, width=4.0, depth=4.0):
    return Scene(room(width, depth), tuple(objects), {})


def tilted_tall_box(theta_deg, extents=(0.1, 1.0, 0.1)):
    """A box rotated about world z and lowered so its lowest vertex touches the floor."""
    q = quat_from_axis_angle((0.0, 0.0, 1.0), math.radians(theta_deg))
    o = ObjectInstance("tall", "box", Geometry(box=extents), Pose((0.0, 0.0, 0.0), tuple(q)), "floor")
    y = -world_vertices(o)[:, 1].min()
    return scene(dataclasses.replace(o, pose=Pose((0.0, y, 0.0), tuple(q))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def finite_difference_errors(problem, params, h=1e-5, floor=1e-3):
    """Componentwise relative error between the analytic gradient and central
    differences of the total energy. Components whose +-h evaluations cross a
    branch of the piecewise energy (a different active-set signature) are
    skipped. Returns ``(errors, skipped)``."""
    from scenephys.tto import PoseParams

    x0 = params.flat()
    base = problem.evaluate(params, signature=True)
    errors, skipped = [], 0
    for idx in np.ndindex(x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[idx] += h
        xm[idx] -= h
        rp = problem.evaluate(PoseParams.from_flat(xp), grad=False, signature=True)
        rm = problem.evaluate(PoseParams.from_flat(xm), grad=False, signature=True)
        if rp.signature != base.signature or rm.signature != base.signature:
            skipped += 1
            continue
        fd = (rp.total - rm.total) / (2 * h)
        g = base.grad[idx]
        errors.append(abs(fd - g) / max(abs(fd), abs(g), floor))
    return np.asarray(errors), skipped
