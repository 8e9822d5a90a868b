import dataclasses
import json
import math
from collections import Counter, defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenephys.corpus import CorpusConfig, generate_corpus
from scenephys.evaluator import (
    CONSTRAINTS,
    CSV_COLUMNS,
    EvaluatorConfig,
    PhysicsReport,
    alignment,
    evaluate,
    reward,
    run_constraints,
)
from scenephys.transforms import quat_from_axis_angle, quat_mul, quat_to_matrix, yaw_quat

from conftest import box, on_floor, scene

FAST = EvaluatorConfig(enabled=tuple(c for c in CONSTRAINTS if c not in ("dynamic", "reach")))

# evaluator constraint -> injected label kind
LABEL_OF = {
    "orient": "misoriented",
    "scale": "mis-scaled",
    "collision": "collision",
    "ground": "floating",
    "support": "unsupported",
    "anchor": "unanchored",
    "static": "statically-unstable",
}


def chair(oid="c", x=0.0, z=0.0, lift=0.0, yaw=0.0):
    return on_floor(oid, (0.5, 0.9, 0.5), x, z, yaw=yaw, lift=lift)


def test_clean_scene_scores_100():
    r = evaluate(scene(chair("a", -1.0), chair("b", 1.0)))
    assert r.overall == 100.0
    assert all(v == 0.0 for v in r.rates.values())


def test_orientation_term_is_one_minus_cosine_of_tilt():
    tilted = chair().with_pose(q=tuple(quat_from_axis_angle((1, 0, 0), math.radians(20))))
    r = evaluate(scene(tilted), FAST)
    assert r.magnitude("c", "orient") == pytest.approx(1 - math.cos(math.radians(20)), abs=1e-12)
    assert r.violated("c", "orient")
    mild = chair().with_pose(q=tuple(quat_from_axis_angle((1, 0, 0), math.radians(5))))
    assert not evaluate(scene(mild), FAST).violated("c", "orient")


def test_scale_term_is_l1_log_ratio():
    big = chair().with_pose(s=(2.0, 2.0, 2.0))
    r = evaluate(scene(big), FAST)
    assert r.magnitude("c", "scale") == pytest.approx(3 * math.log(2.0), abs=1e-12)
    assert r.rates["scale_instability_rate"] == 100.0


def test_collision_depth_of_axis_aligned_overlap():
    r = evaluate(scene(chair("a", 0.0), chair("b", 0.4)), FAST)
    assert r.magnitude("a", "collision") == pytest.approx(0.1, abs=1e-9)
    assert r.violated("b", "collision")
    assert r.rates["collision_rate"] == 100.0
    assert r.rates["collision_severity"] > 0


def test_grounding_measures_lift():
    r = evaluate(scene(chair(lift=0.05)), FAST)
    assert r.magnitude("c", "ground") == pytest.approx(0.05, abs=1e-12)
    assert r.rates["floating_rate"] == 100.0


def test_support_and_static_margin_for_overhanging_lamp():
    host = on_floor("ns", (0.5, 0.55, 0.4), 0.0, 0.0, category="nightstand")
    lamp = box("lamp", (0.3, 0.5, 0.3), (0.3, 0.8, 0.0), category="table_lamp", parent="ns")
    r = evaluate(scene(host, lamp), FAST)
    assert r.magnitude("lamp", "static") == pytest.approx(0.05, abs=1e-9)
    assert r.magnitude("lamp", "support") == pytest.approx(0.05, abs=1e-9)
    assert r.violated("lamp", "static")


def test_supported_object_gap():
    host = on_floor("ns", (0.5, 0.55, 0.4), 0.0, 0.0, category="nightstand")
    lamp = box("lamp", (0.3, 0.5, 0.3), (0.0, 0.83, 0.0), category="table_lamp", parent="ns")
    r = evaluate(scene(host, lamp), dataclasses.replace(FAST, support_mode="gap"))
    assert r.magnitude("lamp", "support") == pytest.approx(0.03, abs=1e-9)


def test_anchoring_distance_to_nearest_wall():
    wardrobe = on_floor("w", (1.2, 2.0, 0.6), 0.0, -1.4, category="wardrobe")
    r = evaluate(scene(wardrobe), FAST)
    assert r.magnitude("w", "anchor") == pytest.approx(0.3, abs=1e-9)
    flush = on_floor("w", (1.2, 2.0, 0.6), 0.0, -1.7, category="wardrobe")
    assert not evaluate(scene(flush), FAST).violated("w", "anchor")


def test_blocked_room_has_unreachable_pairs():
    barrier = on_floor("shelf", (0.4, 1.8, 4.0), 0.0, 0.0, category="bookshelf")
    r = evaluate(scene(barrier))
    assert r.rates["unreachable_rate"] > 0
    assert r.overall < 100.0


def test_disabled_constraints_are_reported_not_computed():
    r = evaluate(scene(chair()), FAST)
    assert set(r.not_computed) == {"dynamic", "reach"}
    assert r.phi["dynamic"] == 0.0


def test_report_json_round_trip():
    r = evaluate(scene(chair("a", 0.0), chair("b", 0.4, lift=0.05)), FAST)
    back = PhysicsReport.from_dict(json.loads(r.to_json()))
    assert back.to_json() == r.to_json()
    assert len(back.csv_row()) == len(CSV_COLUMNS)


def test_reward_is_negative_weighted_penalty_sum():
    s = scene(chair("a", 0.0), chair("b", 0.4, lift=0.05))
    weights = {c: float(k + 1) for k, c in enumerate(CONSTRAINTS)}
    cfg = dataclasses.replace(FAST, weights=weights)
    results, _ = run_constraints(s, cfg)
    expected = -sum(weights[c] * results[c].phi for c in results)
    assert reward(s, None, cfg) == pytest.approx(expected, rel=1e-12)


def test_alignment_penalty_lowers_reward():
    s = scene(chair("a", 0.0))
    moved = scene(chair("a", 0.3))
    assert alignment(s, s) == 0.0
    assert alignment(moved, s) == pytest.approx(0.3)
    assert reward(moved, s, FAST) == pytest.approx(reward(moved, None, FAST) - FAST.lambda_align * 0.3)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-math.pi, math.pi))
def test_rigid_motion_of_whole_scene_is_reward_neutral_for_local_terms(dx, dz, yaw):
    a = chair("a", -0.5, 0.0, lift=0.04)
    b = chair("b", -0.1, 0.2, yaw=0.3)
    cfg = dataclasses.replace(FAST, enabled=("orient", "scale", "collision", "ground", "static"))
    base = reward(scene(a, b), None, cfg)
    rot = yaw_quat(yaw)

    def move(o):
        t = quat_to_matrix(rot) @ np.asarray(o.pose.t) + [dx, 0.0, dz]
        return o.with_pose(t=tuple(t), q=tuple(quat_mul(rot, o.pose.q)))

    assert reward(scene(move(a), move(b)), None, cfg) == pytest.approx(base, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.3))
def test_more_lift_never_lowers_the_grounding_penalty(lift):
    low = evaluate(scene(chair(lift=lift)), FAST).phi["ground"]
    high = evaluate(scene(chair(lift=lift + 0.01)), FAST).phi["ground"]
    assert high >= low


def test_overall_is_weighted_mean_of_constraint_rates():
    r = evaluate(scene(chair("a", 0.0), chair("b", 0.4), chair("c", 1.2, lift=0.05)), FAST)
    computed = [c for c in CONSTRAINTS if c not in r.not_computed]
    penalty = sum(r.constraint_rates[c] for c in computed) / len(computed)
    assert r.overall == pytest.approx(100.0 - penalty)


def test_small_corpus_detection_matches_labels():
    mix = {k: 0.08 for k in LABEL_OF.values()}
    corpus = generate_corpus(CorpusConfig(count=25, seed=5, violation_mix=mix))
    counts = Counter()
    for s, labels in corpus:
        r = evaluate(s, FAST)
        truth = defaultdict(set)
        for lab in labels:
            truth[lab.object_id].add(lab.kind)
        for o in s.objects:
            for c, kind in LABEL_OF.items():
                counts[(c, r.violated(o.id, c), kind in truth[o.id])] += 1
    for c in LABEL_OF:
        assert counts[(c, True, False)] == 0, f"{c} false positives"
        assert counts[(c, False, True)] == 0, f"{c} false negatives"
    assert sum(counts[(c, True, True)] for c in LABEL_OF) > 20


def test_config_validation():
    with pytest.raises(ValueError):
        EvaluatorConfig(tau_coll=-1.0)
    with pytest.raises(ValueError):
        EvaluatorConfig(weights={c: 0.0 for c in CONSTRAINTS})
    with pytest.raises(ValueError):
        EvaluatorConfig(enabled=("gravity",))
