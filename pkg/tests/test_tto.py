import dataclasses

import numpy as np
import pytest

from scenephys.corpus import CorpusConfig, generate_scene
from scenephys.evaluator import CONSTRAINTS, EvaluatorConfig, evaluate
from scenephys.tto import PoseParams, TtoConfig, TtoProblem, clip_per_object, energy, energy_gradient, optimize

from conftest import finite_difference_errors, on_floor, scene

TTO_MIX = {"collision": 0.3, "floating": 0.15, "unanchored": 0.15, "statically-unstable": 0.15}
FAST = EvaluatorConfig(enabled=tuple(c for c in CONSTRAINTS if c not in ("dynamic", "reach")))


def test_grounding_gradient_of_floating_box_is_2h():
    h = 0.07
    prob = TtoProblem(scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0, lift=h)))
    res = prob.evaluate(prob.initial)
    assert res.terms["grd"] == pytest.approx(h * h)
    assert res.term_grads["grd"][0, 1] == pytest.approx(2 * h, rel=1e-12)


def test_far_apart_objects_have_zero_collision_gradient():
    prob = TtoProblem(scene(on_floor("a", (0.5, 0.9, 0.5), -1.0, 0.0), on_floor("b", (0.5, 0.9, 0.5), 1.0, 0.0)))
    res = prob.evaluate(prob.initial)
    assert res.terms["col"] == 0.0
    assert np.all(res.term_grads["col"] == 0.0)


@pytest.mark.parametrize("index", [0, 1, 2])
def test_gradient_matches_finite_differences(index):
    s, _ = generate_scene(CorpusConfig(seed=3, violation_mix=TTO_MIX), index)
    prob = TtoProblem(s)
    rng = np.random.default_rng(index)
    x = prob.initial.flat() + rng.normal(0.0, 0.02, prob.initial.flat().shape)
    errors, skipped = finite_difference_errors(prob, PoseParams.from_flat(x))
    assert len(errors) > 0.8 * x.size
    assert errors.max() <= 1e-4


def test_clip_per_object_caps_row_norms():
    g = np.array([[3.0, 4.0, 0, 0, 0, 0, 0], [0.1, 0, 0, 0, 0, 0, 0]])
    out = clip_per_object(g, 1.0)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), [1.0, 0.1])


def test_energy_gradient_defaults_to_clipped():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0, lift=0.5))
    assert np.linalg.norm(energy_gradient(s)[0]) == pytest.approx(1.0)
    assert np.linalg.norm(energy_gradient(s, clip=False)[0]) > 1.0


def test_optimize_repairs_a_floating_and_colliding_pair():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0, lift=0.1), on_floor("b", (0.5, 0.9, 0.5), 0.42, 0.0))
    before = evaluate(s, FAST)
    res = optimize(s)
    after = evaluate(res.scene, FAST)
    assert before.rates["floating_rate"] > 0 and before.rates["collision_rate"] > 0
    assert after.rates["floating_rate"] == 0 and after.rates["collision_rate"] == 0
    assert res.trace[-1] < res.trace[0]
    assert len(res.trace) == TtoConfig().steps + 1


def test_optimize_is_deterministic():
    s, _ = generate_scene(CorpusConfig(seed=3, violation_mix=TTO_MIX), 4)
    a = optimize(s, TtoConfig(steps=30))
    b = optimize(s, TtoConfig(steps=30))
    assert a.trace == b.trace
    assert np.array_equal(a.params.flat(), b.params.flat())


def test_clean_scene_barely_moves():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), -1.0, 0.0), on_floor("b", (0.5, 0.9, 0.5), 1.0, 0.0))
    res = optimize(s)
    assert np.abs(res.params.flat() - PoseParams.initial(s).flat()).max() < 1e-6


def test_total_energy_is_weighted_sum_and_zero_weight_drops_the_term():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0, lift=0.1), on_floor("b", (0.5, 0.9, 0.5), 0.42, 0.0))
    total, terms = energy(s)
    assert total == pytest.approx(sum(w * terms[k] for k, w in TtoConfig().weights.items()), rel=1e-12)
    cut, _ = energy(s, config=dataclasses.replace(TtoConfig(), lambda_grd=0.0))
    assert cut == pytest.approx(total - TtoConfig().lambda_grd * terms["grd"], rel=1e-12)


def test_log_scale_stays_bounded():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0))
    cfg = TtoConfig(log_scale_bound=0.01, steps=5)
    res = optimize(s, cfg)
    assert np.all(np.abs(res.params.L) <= 0.01 + 1e-12)


@pytest.mark.parametrize("bad", [dict(lambda_col=-1.0), dict(steps=0), dict(step_size=0.0), dict(grad_clip_norm=0.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TtoConfig(**bad)
