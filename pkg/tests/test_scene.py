import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenephys.scene import (
    Geometry,
    ObjectInstance,
    Pose,
    SceneParseError,
    SceneValidationError,
    ViolationLabel,
    dumps_scene,
    load_scene,
    quantize,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)
from scenephys.transforms import matrix_to_quat, quat_from_axis_angle, quat_to_matrix, rotation_angle, yaw_quat

from conftest import box, on_floor, scene


def test_round_trip_preserves_scene(tmp_path):
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.1, 0.2, yaw=0.3),
              box("lamp", (0.3, 0.5, 0.3), (0.1, 1.15, 0.2), category="table_lamp", parent="a"))
    path = tmp_path / "s.json"
    save_scene(s, path)
    back = load_scene(path)
    assert dumps_scene(back) == dumps_scene(s)
    assert back.by_id()["lamp"].support_parent == "a"


def test_save_is_atomic_and_leaves_no_temp(tmp_path):
    path = tmp_path / "s.json"
    save_scene(scene(on_floor("a", (0.5, 0.9, 0.5), 0, 0)), path)
    assert [p.name for p in tmp_path.iterdir()] == ["s.json"]


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "room": {\n  "objects": ]\n}')
    with pytest.raises(SceneParseError) as info:
        load_scene(path)
    assert info.value.line == 3


def test_missing_field_is_named():
    d = scene_to_dict(scene(on_floor("a", (0.5, 0.9, 0.5), 0, 0)))
    del d["objects"][0]["box"]
    with pytest.raises(SceneParseError) as info:
        scene_from_dict(d)
    assert "objects[0]" in str(info.value.field)


@pytest.mark.parametrize("mutate, rule", [
    (lambda d: d["objects"][0]["pose"].update(q=[1.0, 1.0, 0.0, 0.0]), "unit-norm"),
    (lambda d: d["objects"][0]["pose"].update(s=[1.0, 0.0, 1.0]), "positive"),
    (lambda d: d["objects"][0].update(category="spaceship"), "prior"),
    (lambda d: d["objects"][0].update(support_parent="ghost"), "names no other object"),
    (lambda d: d["objects"].append(dict(d["objects"][0])), "unique"),
])
def test_validation_errors(mutate, rule):
    d = scene_to_dict(scene(on_floor("a", (0.5, 0.9, 0.5), 0, 0)))
    mutate(d)
    with pytest.raises(SceneValidationError, match=rule):
        scene_from_dict(d)


def test_unknown_keys_warn_but_load():
    d = scene_to_dict(scene(on_floor("a", (0.5, 0.9, 0.5), 0, 0)))
    d["objects"][0]["colour"] = "red"
    with pytest.warns(UserWarning, match="colour"):
        scene_from_dict(d)


def test_violation_label_rejects_bad_kind_and_magnitude():
    with pytest.raises(ValueError):
        ViolationLabel("a", "wobbly", 0.1)
    with pytest.raises(ValueError):
        ViolationLabel("a", "collision", -1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_quantize_is_idempotent(v):
    q = quantize(v)
    assert quantize(q) == q
    assert abs(q - v) <= 1e-8 * max(1.0, abs(v))


@settings(max_examples=60, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(0.05, 1.5), st.floats(0.05, 1.5), st.floats(-math.pi, math.pi))
def test_json_round_trip_is_stable(x, w, d, yaw):
    s = scene(on_floor("a", (w, 0.5, d), x / 2, 0.0, yaw=yaw))
    once = dumps_scene(scene_from_dict(json.loads(dumps_scene(s))))
    assert dumps_scene(scene_from_dict(json.loads(once))) == once


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3),
       st.floats(-3.0, 3.0))
def test_quaternion_matrix_round_trip(axis, angle):
    q = quat_from_axis_angle(axis, angle)
    m = quat_to_matrix(q)
    np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(m)), m, atol=1e-9)
    assert rotation_angle(m) == pytest.approx(abs(math.remainder(angle, 2 * math.pi)), abs=1e-6)


def test_yaw_rotates_about_up():
    m = quat_to_matrix(yaw_quat(0.7))
    np.testing.assert_allclose(m @ [0, 1, 0], [0, 1, 0], atol=1e-12)


def test_pose_to_world_applies_scale_rotation_translation():
    p = Pose((1.0, 2.0, 3.0), tuple(yaw_quat(math.pi / 2)), (2.0, 1.0, 1.0))
    out = p.to_world(np.array([[1.0, 0.0, 0.0]]))[0]
    np.testing.assert_allclose(out, np.array([1.0, 2.0, 3.0]) + quat_to_matrix(p.q) @ [2.0, 0.0, 0.0], atol=1e-12)


def test_hull_geometry_requires_volume():
    flat = tuple((x, 0.0, z) for x in (0, 1) for z in (0, 1))
    o = ObjectInstance("h", "chair", Geometry((1, 1, 1), flat), Pose(), "floor")
    with pytest.raises(SceneValidationError, match="coplanar"):
        scene(o).validate()
