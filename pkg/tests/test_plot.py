import xml.etree.ElementTree as ET

from scenephys.evaluator import CONSTRAINTS, EvaluatorConfig, evaluate
from scenephys.navigation import ReachConfig, reachability
from scenephys.plot import COLORS, render_svg, worst_violation

from conftest import on_floor, scene

FAST = EvaluatorConfig(enabled=tuple(c for c in CONSTRAINTS if c not in ("dynamic", "reach")))
NS = "{http://www.w3.org/2000/svg}"


def fills_by_title(svg):
    root = ET.fromstring(svg)
    out = {}
    for poly in root.iter(f"{NS}polygon"):
        title = poly.find(f"{NS}title")
        if title is not None:
            out[title.text.split(":")[0]] = poly.get("fill")
    return out


def test_rendering_is_deterministic_and_well_formed():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0), on_floor("b", (0.5, 0.9, 0.5), 0.4, 0.0))
    r = evaluate(s, FAST)
    a, b = render_svg(s, r), render_svg(s, r)
    assert a == b
    ET.fromstring(a)


def test_objects_take_the_color_of_their_worst_violation():
    s = scene(on_floor("a", (0.5, 0.9, 0.5), 0.0, 0.0), on_floor("b", (0.5, 0.9, 0.5), 0.4, 0.0, lift=0.05),
              on_floor("c", (0.5, 0.9, 0.5), -1.2, 1.0))
    r = evaluate(s, FAST)
    assert worst_violation(r, "b") == "collision"
    fills = fills_by_title(render_svg(s, r))
    assert fills["a"] == fills["b"] == COLORS["collision"]
    assert fills["c"] == COLORS[None]


def test_failed_reach_pairs_are_drawn_dashed():
    s = scene(on_floor("shelf", (0.4, 1.0, 4.0), 0.0, 0.0, category="bookshelf"))
    reach = reachability(s, ReachConfig(num_pairs=40))
    failed = sum(not p.reachable for p in reach.pairs)
    assert failed > 0
    svg = render_svg(s, None, reach, show_occupancy=True)
    assert svg.count("stroke-dasharray") == failed
    assert render_svg(s).count("stroke-dasharray") == 0
