"""Physics evaluator: nine constraint penalties, per-object violation flags,
aggregate rates and severities, the overall score, and the scalar reward."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import polygon
from .dynamics import SimConfig, simulate_settle
from .geometry import (
    CONTACT_TOLERANCE,
    EmptySupportError,
    SupportPolygon,
    aabbs_overlap,
    bounding_radius,
    canonical_vertices,
    com_margin,
    footprint,
    penetration_depth,
    support_polygon,
    world_vertices,
)
from .navigation import ReachConfig, reachability
from .priors import PriorRegistry, default_priors
from .scene import ObjectInstance, Scene
from .transforms import UP, rotation_angle

CONSTRAINTS = ("orient", "scale", "collision", "ground", "support", "anchor", "static", "dynamic", "reach")

# column order of the report table
RATE_COLUMNS = (
    "misorientation_rate",
    "scale_instability_rate",
    "collision_rate",
    "collision_severity",
    "floating_rate",
    "floating_severity",
    "unanchored_rate",
    "static_instability_rate",
    "dynamic_instability_rate",
    "unreachable_rate",
)
CSV_COLUMNS = RATE_COLUMNS + ("overall",)


@dataclass(frozen=True)
class EvaluatorConfig:
    tau_orient: float = 0.174
    tau_scale: float = 0.405
    tau_coll: float = 0.005
    tau_ground: float = 0.01
    tau_support: float = 0.01
    tau_anchor: float = 0.10
    tau_static: float = 0.0
    tau_reach: float = 0.0
    weights: Mapping[str, float] = field(default_factory=lambda: {c: 1.0 for c in CONSTRAINTS})
    enabled: tuple[str, ...] = CONSTRAINTS
    sim: SimConfig = SimConfig()
    reach: ReachConfig = ReachConfig()
    support_mode: str = "gap+overhang"  # or "gap"
    overlap_mode: str = "max"  # or "sum"
    contact_tolerance: float = CONTACT_TOLERANCE
    surface_samples: int = 512
    lambda_align: float = 0.1

    def __post_init__(self):
        taus = (self.tau_orient, self.tau_scale, self.tau_coll, self.tau_ground, self.tau_support,
                self.tau_anchor, self.tau_static, self.tau_reach)
        if any(not (t >= 0) for t in taus):
            raise ValueError("thresholds must be non-negative")
        unknown = (set(self.weights) | set(self.enabled)) - set(CONSTRAINTS)
        if unknown:
            raise ValueError(f"unknown constraints {sorted(unknown)}")
        w = [self.weights.get(c, 0.0) for c in CONSTRAINTS]
        if any(not (v >= 0) for v in w) or sum(w) <= 0:
            raise ValueError("weights must be non-negative and not all zero")
        if self.support_mode not in ("gap+overhang", "gap"):
            raise ValueError("support_mode must be 'gap+overhang' or 'gap'")
        if self.overlap_mode not in ("max", "sum"):
            raise ValueError("overlap_mode must be 'max' or 'sum'")
        if self.lambda_align < 0:
            raise ValueError("lambda_align must be non-negative")


@dataclass(frozen=True)
class ObjectTerm:
    constraint: str
    magnitude: float
    violated: bool


@dataclass
class ConstraintResult:
    phi: float
    terms: dict[str, ObjectTerm] = field(default_factory=dict)
    severity: float | None = None
    info: dict = field(default_factory=dict)


@dataclass
class PhysicsReport:
    phi: dict[str, float]
    per_object: dict[str, list[ObjectTerm]]
    constraint_rates: dict[str, float]
    rates: dict[str, float]
    overall: float
    not_computed: dict[str, str] = field(default_factory=dict)

    def violated(self, object_id: str, constraint: str) -> bool:
        return any(t.violated for t in self.per_object.get(object_id, []) if t.constraint == constraint)

    def magnitude(self, object_id: str, constraint: str) -> float | None:
        for t in self.per_object.get(object_id, []):
            if t.constraint == constraint:
                return t.magnitude
        return None

    def to_dict(self) -> dict:
        return {
            "phi": {k: self.phi[k] for k in CONSTRAINTS},
            "constraint_rates": {k: self.constraint_rates[k] for k in CONSTRAINTS},
            "rates": {k: self.rates[k] for k in RATE_COLUMNS},
            "overall": self.overall,
            "not_computed": dict(sorted(self.not_computed.items())),
            "per_object": {
                oid: [asdict(t) for t in terms] for oid, terms in sorted(self.per_object.items())
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @staticmethod
    def from_dict(d: Mapping) -> "PhysicsReport":
        return PhysicsReport(
            phi=dict(d["phi"]),
            per_object={k: [ObjectTerm(**t) for t in v] for k, v in d["per_object"].items()},
            constraint_rates=dict(d["constraint_rates"]),
            rates=dict(d["rates"]),
            overall=float(d["overall"]),
            not_computed=dict(d.get("not_computed", {})),
        )

    def csv_row(self) -> list[float]:
        return [self.rates[k] for k in RATE_COLUMNS] + [self.overall]


# --- helpers -------------------------------------------------------------------

def _priors(priors: PriorRegistry | None) -> PriorRegistry:
    return default_priors() if priors is None else priors


def _parent(scene_ids: Mapping[str, ObjectInstance], obj: ObjectInstance) -> ObjectInstance | None:
    if obj.support_parent is None or obj.support_parent in ("floor", "wall"):
        return None
    return scene_ids.get(obj.support_parent)


def _top_height(obj: ObjectInstance) -> float:
    return float(world_vertices(obj)[:, 1].max())


def _bottom_height(obj: ObjectInstance) -> float:
    return float(world_vertices(obj)[:, 1].min())


def _in_ground_set(obj: ObjectInstance, prior, ids) -> bool:
    return (prior.is_floor_class or obj.support_parent == "floor") and _parent(ids, obj) is None


def back_face_center(obj: ObjectInstance) -> np.ndarray:
    """World (x, z) of the back-face center; the canonical back faces -z."""
    v = canonical_vertices(obj.geometry)
    local = np.array([[0.5 * (v[:, 0].min() + v[:, 0].max()), 0.5 * (v[:, 1].min() + v[:, 1].max()), v[:, 2].min()]])
    return obj.pose.to_world(local)[0, [0, 2]]


# --- sub-evaluators ------------------------------------------------------------

def eval_orientation(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    pri = _priors(priors)
    res = ConstraintResult(0.0)
    for o in scene.objects:
        n = o.pose.rotation @ np.asarray(pri[o.category].canonical_up)
        c = min(1.0, abs(float(n @ UP)))
        term = 1.0 - c
        res.terms[o.id] = ObjectTerm("orient", term, math.acos(c) > config.tau_orient)
        res.phi += term
    return res


def eval_scale(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    pri = _priors(priors)
    res = ConstraintResult(0.0)
    for o in scene.objects:
        world = np.asarray(o.geometry.box) * np.asarray(o.pose.s)
        term = float(np.abs(np.log(world) - np.log(np.asarray(pri[o.category].ref_scale))).sum())
        res.terms[o.id] = ObjectTerm("scale", term, term > config.tau_scale)
        res.phi += term
    return res


def eval_collision(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    res = ConstraintResult(0.0)
    worst = {o.id: 0.0 for o in scene.objects}
    ratios = []
    objs = scene.objects
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            a, b = objs[i], objs[j]
            if not aabbs_overlap(a, b):
                continue
            d = penetration_depth(a, b, config.surface_samples, config.overlap_mode)
            if d <= 0.0:
                continue
            res.phi += d
            worst[a.id] = max(worst[a.id], d)
            worst[b.id] = max(worst[b.id], d)
            if d > config.tau_coll:
                ratios.append(d / min(bounding_radius(a), bounding_radius(b)))
    for o in objs:
        res.terms[o.id] = ObjectTerm("collision", worst[o.id], worst[o.id] > config.tau_coll)
    res.severity = min(100.0, 100.0 * float(np.mean(ratios))) if ratios else 0.0
    return res


def eval_grounding(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    pri = _priors(priors)
    ids = scene.by_id()
    res = ConstraintResult(0.0)
    for o in scene.objects:
        if not _in_ground_set(o, pri[o.category], ids):
            continue
        h = abs(_bottom_height(o))
        res.terms[o.id] = ObjectTerm("ground", h, h > config.tau_ground)
        res.phi += h
    return res


def support_distance(child: ObjectInstance, parent: ObjectInstance, mode: str = "gap+overhang") -> float:
    """Vertical gap between the child's bottom and the parent's top, plus the
    distance from the child's footprint centroid to the parent footprint."""
    gap = abs(_bottom_height(child) - _top_height(parent))
    if mode == "gap":
        return gap
    c = polygon.centroid(footprint(child))
    over = float(polygon.signed_distance_convex(c[None, :], footprint(parent))[0])
    return gap + max(0.0, over)


def eval_support(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    ids = scene.by_id()
    res = ConstraintResult(0.0)
    for o in scene.objects:
        parent = _parent(ids, o)
        if parent is None:
            continue
        d = support_distance(o, parent, config.support_mode)
        res.terms[o.id] = ObjectTerm("support", d, d > config.tau_support)
        res.phi += d
    return res


def eval_anchoring(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    pri = _priors(priors)
    res = ConstraintResult(0.0)
    walls = scene.room.walls
    members = [o for o in scene.objects if pri[o.category].is_wall_class]
    if members and not walls:
        warnings.warn("scene has wall-class objects but no walls; anchoring terms are 0", stacklevel=2)
    for o in members:
        if not walls:
            res.terms[o.id] = ObjectTerm("anchor", 0.0, False)
            continue
        p = back_face_center(o)
        d = min(polygon.point_segment_distance(p, w.a, w.b) for w in walls)
        res.terms[o.id] = ObjectTerm("anchor", d, d > config.tau_anchor)
        res.phi += d
    return res


def static_support(obj: ObjectInstance, parent: ObjectInstance | None, tol: float = CONTACT_TOLERANCE) -> tuple[SupportPolygon, bool]:
    """Support polygon against the floor or the parent's top face. Returns the
    polygon and whether the fallback (own lowest points) was used."""
    surface = 0.0 if parent is None else _top_height(parent)
    clip = None if parent is None else footprint(parent)
    try:
        return support_polygon(obj, surface, clip, tol), False
    except EmptySupportError:
        v = world_vertices(obj)
        low = v[v[:, 1] <= v[:, 1].min() + tol]
        return SupportPolygon(polygon.convex_hull(low[:, [0, 2]])), True


def eval_static(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    ids = scene.by_id()
    res = ConstraintResult(0.0, info={"floating_unstable": []})
    for o in scene.objects:
        sup, fell_back = static_support(o, _parent(ids, o), config.contact_tolerance)
        if fell_back:
            res.info["floating_unstable"].append(o.id)
        term = max(0.0, com_margin(o, sup))
        res.terms[o.id] = ObjectTerm("static", term, term > config.tau_static)
        res.phi += term
    return res


def eval_dynamic(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    out = simulate_settle(scene, config.sim)
    res = ConstraintResult(0.0, info={"sim": out})
    for o in scene.objects:
        r = out[o.id]
        res.terms[o.id] = ObjectTerm("dynamic", 1.0 if r.unstable else 0.0, r.unstable)
        res.phi += 1.0 if r.unstable else 0.0
    return res


def eval_reach(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> ConstraintResult:
    r = reachability(scene, config.reach)
    return ConstraintResult(r.phi, info={"reach": r})


SUB_EVALUATORS: dict[str, Callable[..., ConstraintResult]] = {
    "orient": eval_orientation,
    "scale": eval_scale,
    "collision": eval_collision,
    "ground": eval_grounding,
    "support": eval_support,
    "anchor": eval_anchoring,
    "static": eval_static,
    "dynamic": eval_dynamic,
    "reach": eval_reach,
}


def run_constraints(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> tuple[dict[str, ConstraintResult], dict[str, str]]:
    results: dict[str, ConstraintResult] = {}
    not_computed: dict[str, str] = {}
    for name in CONSTRAINTS:
        if name not in config.enabled:
            not_computed[name] = "disabled"
            continue
        try:
            results[name] = SUB_EVALUATORS[name](scene, config, priors)
        except Exception as exc:  # reported per constraint, never aborts the report
            not_computed[name] = f"{type(exc).__name__}: {exc}"
    return results, not_computed


def _pct(count: int, n: int) -> float:
    return 100.0 * count / n if n else 0.0


def evaluate(scene: Scene, config: EvaluatorConfig = EvaluatorConfig(), priors: PriorRegistry | None = None) -> PhysicsReport:
    results, not_computed = run_constraints(scene, config, priors)
    n = len(scene.objects)
    per_object: dict[str, list[ObjectTerm]] = {o.id: [] for o in scene.objects}
    phi = {c: 0.0 for c in CONSTRAINTS}
    crates = {c: 0.0 for c in CONSTRAINTS}
    for name, r in results.items():
        phi[name] = float(r.phi)
        for oid, t in r.terms.items():
            per_object[oid].append(t)
        if name == "reach":
            crates[name] = 100.0 * float(r.phi > config.tau_reach) * r.phi
        else:
            crates[name] = _pct(sum(t.violated for t in r.terms.values()), n)

    def flagged(name: str) -> set[str]:
        r = results.get(name)
        return {oid for oid, t in r.terms.items() if t.violated} if r else set()

    floating = flagged("ground") | flagged("support")
    sev = []
    for oid in sorted(floating):
        obj = scene.by_id()[oid]
        mag = max(
            (t.magnitude for t in per_object[oid] if t.constraint in ("ground", "support") and t.violated),
            default=0.0,
        )
        sev.append(mag / bounding_radius(obj))
    rates = {
        "misorientation_rate": crates["orient"],
        "scale_instability_rate": crates["scale"],
        "collision_rate": crates["collision"],
        "collision_severity": results["collision"].severity if "collision" in results else 0.0,
        "floating_rate": _pct(len(floating), n),
        "floating_severity": min(100.0, 100.0 * float(np.mean(sev))) if sev else 0.0,
        "unanchored_rate": crates["anchor"],
        "static_instability_rate": crates["static"],
        "dynamic_instability_rate": crates["dynamic"],
        "unreachable_rate": crates["reach"],
    }
    computed = [c for c in CONSTRAINTS if c in results]
    wsum = sum(config.weights.get(c, 0.0) for c in computed)
    if wsum > 0:
        penalty = sum(config.weights.get(c, 0.0) * crates[c] / 100.0 for c in computed) / wsum
        overall = min(100.0, max(0.0, 100.0 * (1.0 - penalty)))
    else:
        overall = 100.0
    return PhysicsReport(phi, per_object, crates, rates, overall, not_computed)


def alignment(scene: Scene, reference: Scene) -> float:
    """Sum over objects shared by id of translation distance, geodesic rotation
    angle, and L1 log-scale difference."""
    ref = reference.by_id()
    total = 0.0
    for o in scene.objects:
        r = ref.get(o.id)
        if r is None:
            continue
        total += float(np.linalg.norm(np.subtract(o.pose.t, r.pose.t)))
        total += rotation_angle(o.pose.rotation.T @ r.pose.rotation)
        total += float(np.abs(np.log(o.pose.s) - np.log(r.pose.s)).sum())
    return total


def reward(
    scene: Scene,
    reference: Scene | None = None,
    config: EvaluatorConfig = EvaluatorConfig(),
    priors: PriorRegistry | None = None,
) -> float:
    """Negative weighted penalty sum minus the alignment term against
    ``reference``; disabled or failed constraints contribute nothing."""
    results, _ = run_constraints(scene, config, priors)
    r = -sum(config.weights.get(name, 0.0) * res.phi for name, res in results.items())
    if reference is not None and config.lambda_align > 0:
        r -= config.lambda_align * alignment(scene, reference)
    return float(r)
