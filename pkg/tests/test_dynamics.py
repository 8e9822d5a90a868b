import math

import numpy as np
import pytest

from scenephys.dynamics import SimConfig, contact_points, simulate_settle

from conftest import box, on_floor, scene, tilted_tall_box


def critical_tip_angle(lo=1.0, hi=20.0, iters=9):
    """Bisection on the smallest initial tilt (degrees) that tips the box over."""
    assert not simulate_settle(tilted_tall_box(lo))["tall"].unstable
    assert simulate_settle(tilted_tall_box(hi))["tall"].unstable
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if simulate_settle(tilted_tall_box(mid))["tall"].unstable:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def test_tall_box_tips_near_com_over_pivot_angle():
    analytic = math.degrees(math.atan2(0.05, 0.5))
    assert abs(critical_tip_angle() - analytic) <= 3.0


@pytest.mark.parametrize("dt", [1 / 60, 1 / 120, 1 / 240])
def test_resting_cube_is_stable(dt):
    r = simulate_settle(scene(on_floor("cube", (0.5, 0.5, 0.5), 0.0, 0.0)), SimConfig(dt=dt))["cube"]
    assert not r.unstable, r.diagnostic
    assert r.displacement < 1e-3
    assert r.final_tilt < 1e-3


def test_simulation_is_bit_exact_across_runs():
    s = scene(on_floor("a", (0.5, 0.5, 0.5), 0.0, 0.0), tilted_tall_box(8.0).objects[0],
              box("b", (0.3, 0.3, 0.3), (0.1, 0.8, 0.0)))
    a = simulate_settle(s)
    b = simulate_settle(s)
    assert a == b


def test_floating_box_falls_to_the_floor():
    r = simulate_settle(scene(on_floor("a", (0.4, 0.4, 0.4), 0.0, 0.0, lift=1.0)))["a"]
    assert r.final_state.position[1] == pytest.approx(0.2, abs=0.01)


def test_box_on_box_stays_put():
    s = scene(on_floor("base", (1.0, 0.5, 1.0), 0.0, 0.0), box("top", (0.3, 0.3, 0.3), (0.0, 0.65, 0.0)))
    out = simulate_settle(s)
    assert not out["base"].unstable and not out["top"].unstable


def test_overhanging_box_falls_off_its_support():
    s = scene(on_floor("base", (1.0, 0.5, 1.0), 0.0, 0.0), box("top", (0.6, 0.1, 0.3), (0.75, 0.55, 0.0)))
    assert simulate_settle(s)["top"].unstable


def test_trajectory_csv(tmp_path):
    path = tmp_path / "traj.csv"
    cfg = SimConfig(horizon=0.1)
    simulate_settle(scene(on_floor("a", (0.5, 0.5, 0.5), 0, 0)), cfg, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("step,time,object")
    assert len(lines) == 1 + cfg.steps + 1


def test_contact_points_cover_edges():
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    pts = contact_points(v, True, 0.1)
    assert len(pts) > 8
    edge_gaps = np.sort(np.unique(np.round(pts[(pts[:, 1] == -0.5) & (pts[:, 2] == -0.5), 0], 9)))
    assert np.diff(edge_gaps).max() <= 0.1 + 1e-12


@pytest.mark.parametrize("bad", [dict(dt=0.0), dict(horizon=0.001, dt=0.01), dict(iterations=0), dict(friction_mu=-1)])
def test_sim_config_validation(bad):
    with pytest.raises(ValueError):
        SimConfig(**bad)
