import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenephys import polygon
from scenephys.geometry import (
    EmptySupportError,
    VoxelBudgetError,
    box_sdf,
    com_margin,
    default_voxel_size,
    footprint,
    interpolate,
    penetration_depth,
    sdf_from_box,
    sdf_query,
    support_polygon,
    surface_samples,
)
from scenephys.scene import Geometry, ObjectInstance, Pose
from scenephys.transforms import quat_to_matrix, yaw_quat

from conftest import box, on_floor


def analytic_box_sdf(p, half):
    """Reference SDF of an origin-centered box, written out per axis."""
    q = np.abs(p) - half
    outside = np.sqrt(np.sum(np.maximum(q, 0.0) ** 2, axis=-1))
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def dense_depth_oracle(a: ObjectInstance, b: ObjectInstance, per_axis: int = 48) -> float:
    """Deepest point of either box's surface inside the other, by brute-force
    face lattices and the exact box SDF."""

    def lattice(o):
        half = 0.5 * np.asarray(o.geometry.box) * np.asarray(o.pose.s)
        u = np.linspace(-1.0, 1.0, per_axis)
        pts = []
        for k in range(3):
            o1, o2 = [j for j in range(3) if j != k]
            g1, g2 = np.meshgrid(u * half[o1], u * half[o2], indexing="ij")
            for s in (-1.0, 1.0):
                f = np.zeros((g1.size, 3))
                f[:, k] = s * half[k]
                f[:, o1] = g1.ravel()
                f[:, o2] = g2.ravel()
                pts.append(f)
        local = np.concatenate(pts)
        return local @ quat_to_matrix(o.pose.q).T + np.asarray(o.pose.t)

    def depth_in(container, pts):
        half = 0.5 * np.asarray(container.geometry.box) * np.asarray(container.pose.s)
        local = (pts - np.asarray(container.pose.t)) @ quat_to_matrix(container.pose.q)
        return float(np.max(np.maximum(0.0, -analytic_box_sdf(local, half))))

    return max(depth_in(a, lattice(b)), depth_in(b, lattice(a)))


def test_grid_sdf_matches_analytic_box_over_random_points(rng):
    extents = (0.8, 0.5, 1.2)
    grid = sdf_from_box(extents)
    half = 0.5 * np.asarray(extents)
    pts = rng.uniform(-half - grid.truncation, half + grid.truncation, (1000, 3))
    vals, _, inside = interpolate(grid, pts)
    ref = np.clip(analytic_box_sdf(pts, half), -grid.truncation, grid.truncation)
    assert inside.all()
    assert np.max(np.abs(vals - ref)) <= grid.voxel_size


def test_box_sdf_gradient_is_unit_and_points_outward(rng):
    half = np.array([0.4, 0.3, 0.2])
    pts = rng.uniform(-1.0, 1.0, (500, 3))
    _, g = box_sdf(pts, half)
    np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, atol=1e-12)
    v2, _ = box_sdf(pts + 1e-6 * g, half)
    v1, _ = box_sdf(pts, half)
    assert np.all(v2 > v1)


def test_sdf_query_respects_pose():
    grid = sdf_from_box((1.0, 1.0, 1.0))
    pose = Pose((2.0, 0.5, 0.0), tuple(yaw_quat(0.4)))
    v, _ = sdf_query(grid, (2.0, 0.5, 0.0), pose)
    assert v == pytest.approx(-grid.truncation)
    v, g = sdf_query(grid, (2.0, 1.04, 0.0), pose)
    assert v == pytest.approx(0.04, abs=grid.voxel_size)
    np.testing.assert_allclose(g, [0.0, 1.0, 0.0], atol=1e-9)
    local_x = quat_to_matrix(pose.q) @ [1.0, 0.0, 0.0]
    v, _ = sdf_query(grid, np.array([2.0, 0.5, 0.0]) + 0.45 * local_x, pose)
    assert v == pytest.approx(-0.05, abs=grid.voxel_size)


def test_voxel_budget_is_enforced():
    with pytest.raises(VoxelBudgetError):
        sdf_from_box((1.0, 1.0, 1.0), voxel_size=0.001)


def test_penetration_matches_dense_oracle_on_random_pairs(rng):
    worst = 0.0
    for _ in range(50):
        ea = rng.uniform(0.3, 1.5, 3)
        eb = rng.uniform(0.3, 1.5, 3)
        a = box("a", ea, (0.0, ea[1] / 2, 0.0), yaw=rng.uniform(-math.pi, math.pi))
        offset = rng.uniform(-0.5, 0.5, 3) * (ea + eb) / 2
        b = box("b", eb, (offset[0], eb[1] / 2 + offset[1], offset[2]), yaw=rng.uniform(-math.pi, math.pi))
        tol = 2.0 * min(default_voxel_size(ea), default_voxel_size(eb))
        err = abs(penetration_depth(a, b) - dense_depth_oracle(a, b))
        worst = max(worst, err / tol)
        assert err <= tol
    assert worst <= 1.0


def test_disjoint_objects_have_zero_depth():
    a = on_floor("a", (1, 1, 1), 0.0, 0.0)
    b = on_floor("b", (1, 1, 1), 1.5, 0.0)
    assert penetration_depth(a, b) == 0.0


def test_depth_is_measured_from_the_surface_not_the_interior():
    # b's corners lie deep inside a; sliding them off b's surface would overstate the depth
    a = box("a", (0.628, 0.453, 1.003), (0.0, 0.2265, 0.0), yaw=0.686)
    b = box("b", (1.181, 1.176, 1.198), (0.063, 0.367, 0.359), yaw=2.997)
    tol = 2.0 * default_voxel_size((0.628, 0.453, 1.003))
    assert abs(penetration_depth(a, b) - dense_depth_oracle(a, b, per_axis=160)) <= tol


def test_stacked_overlap_depth_equals_vertical_overlap():
    a = on_floor("a", (1, 1, 1), 0.0, 0.0)
    b = box("b", (0.5, 0.5, 0.5), (0.0, 1.2, 0.0))
    assert penetration_depth(a, b) == pytest.approx(0.05, abs=1e-9)


def test_surface_samples_lie_on_the_box_surface():
    s = surface_samples(Geometry((0.6, 0.4, 0.2)), 256)
    d = analytic_box_sdf(s.points, np.array([0.3, 0.2, 0.1]))
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


def test_footprint_is_ccw_rectangle():
    fp = footprint(on_floor("a", (2.0, 1.0, 1.0), 0.0, 0.0, yaw=0.3))
    assert polygon.signed_area(fp) == pytest.approx(2.0)
    assert len(fp) == 4


def test_support_polygon_and_com_margin_for_upright_box():
    o = on_floor("a", (1.0, 1.0, 0.5), 0.0, 0.0)
    sup = support_polygon(o)
    assert sup.area == pytest.approx(0.5)
    assert com_margin(o, sup) == pytest.approx(-0.25)


def test_support_polygon_raises_when_floating():
    with pytest.raises(EmptySupportError):
        support_polygon(on_floor("a", (1, 1, 1), 0, 0, lift=0.2))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=3, max_size=30))
def test_convex_hull_contains_all_points(pts):
    pts = np.asarray(pts)
    hull = polygon.convex_hull(pts)
    if len(hull) < 3:
        return
    assert polygon.signed_area(hull) > 0
    assert np.all(polygon.signed_distance_convex(pts, hull) <= 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_signed_distance_to_rectangle(px, pz, w, d):
    rect = np.array([[0, 0], [w, 0], [w, d], [0, d]], dtype=float)
    got = polygon.signed_distance_convex(np.array([[px, pz]]), rect)[0]
    ref = analytic_box_sdf(np.array([[px - w / 2, pz - d / 2]]), np.array([w / 2, d / 2]))[0]
    assert got == pytest.approx(ref, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(0.2, 2.0), st.floats(0.2, 2.0), st.floats(-math.pi, math.pi))
def test_penetration_is_symmetric(w, h, d, yaw):
    a = on_floor("a", (w, h, d), 0.0, 0.0)
    b = box("b", (d, h, w), (0.3 * w, h / 2, 0.0), yaw=yaw)
    assert penetration_depth(a, b) == pytest.approx(penetration_depth(b, a), abs=1e-12)
