"""Synthetic scene corpus with injected, labeled physical violations.

Each scene starts from a violation-free arrangement in a rectangular room:
axis-aligned upright objects at their reference size, grounded, separated by a
clearance band, wall-class objects flush against a wall, and supported-class
objects resting on a host. Requested violations are then injected with
recorded magnitudes. Object shapes that change the footprint (tilt, scale,
anchoring offset) are decided before placement so the clearance check sees
the final geometry.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .geometry import box_corners
from .navigation import rasterize
from .priors import SUPPORT_HOSTS, PriorRegistry, default_priors
from .scene import (
    VIOLATION_KINDS,
    Geometry,
    ObjectInstance,
    Pose,
    Room,
    Scene,
    ViolationLabel,
    quantize,
    save_scene,
)
from .transforms import quat_from_axis_angle, quat_mul, quat_to_matrix, yaw_quat

SCENE_LABEL_ID = "<scene>"
OBJECT_KINDS = tuple(k for k in VIOLATION_KINDS if k != "blocking")

DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "collision": (0.02, 0.2),  # penetration depth, m
    "floating": (0.03, 0.3),  # lift, m
    "unsupported": (0.03, 0.3),  # lift above the host, m
    "unanchored": (0.15, 0.6),  # offset from the wall, m
    "misoriented": (math.radians(15.0), math.radians(60.0)),  # tilt, rad
    "mis-scaled": (0.6, 1.5),  # total |log scale| over three axes
    "statically-unstable": (0.02, 0.3),  # COM distance beyond the host edge, m
}
MAX_AXIS_LOG_SCALE = 0.6
MAX_SLIDE_FRACTION = 0.6  # slide distance cap as a fraction of the child's half width


class CorpusError(Exception):
    pass


class _Retry(Exception):
    pass


@dataclass(frozen=True)
class CorpusConfig:
    count: int = 10
    seed: int = 0
    objects_per_scene: tuple[int, int] = (4, 10)
    # per-object probability of each object kind; "blocking" is a per-scene probability
    violation_mix: Mapping[str, float] = field(default_factory=dict)
    ranges: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RANGES))
    room_size: tuple[float, float] = (4.5, 7.0)
    clearance: float = 0.7
    max_attempts: int = 200

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be at least 1")
        lo, hi = self.objects_per_scene
        if not 1 <= lo <= hi:
            raise ValueError("objects_per_scene must satisfy 1 <= low <= high")
        unknown = set(self.violation_mix) - set(VIOLATION_KINDS)
        if unknown:
            raise ValueError(f"unknown violation kinds {sorted(unknown)}")
        if any(not 0.0 <= v <= 1.0 for v in self.violation_mix.values()):
            raise ValueError("violation mix fractions must lie in [0, 1]")
        if sum(v for k, v in self.violation_mix.items() if k != "blocking") > 1.0 + 1e-12:
            raise ValueError("per-object violation fractions must sum to at most 1")
        for k, (a, b) in self.ranges.items():
            if not 0 < a <= b:
                raise ValueError(f"range for {k} must satisfy 0 < low <= high")


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if hi <= lo:
        return lo
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


@dataclass
class _Plan:
    idx: int
    category: str
    role: str  # "free", "wall", "host", "child", "barrier"
    kind: str | None = None
    magnitude: float = 0.0
    yaw: float = 0.0
    tilt_axis: int | None = None  # 0 = local x, 2 = local z
    tilt: float = 0.0
    log_scale: np.ndarray = field(default_factory=lambda: np.zeros(3))
    host: int | None = None
    child: int | None = None
    partner: int | None = None
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wall_normal: np.ndarray | None = None
    slide_dir: np.ndarray | None = None
    derived: list = field(default_factory=list)

    @property
    def id(self) -> str:
        return f"o{self.idx:02d}_{self.category}"


class _Builder:
    def __init__(self, cfg: CorpusConfig, priors: PriorRegistry, rng: np.random.Generator):
        self.cfg = cfg
        self.pri = priors
        self.rng = rng
        self.floor_cats = sorted(c for c, p in priors.items() if p.is_floor_class)
        self.free_cats = sorted(c for c in self.floor_cats if not priors[c].is_wall_class)
        self.hosts = sorted(c for c in SUPPORT_HOSTS if c in priors)
        self.child_cats = sorted(c for c, p in priors.items() if p.is_supported_class)
        self.ranges = {**DEFAULT_RANGES, **dict(cfg.ranges)}

    # --- shapes ---------------------------------------------------------------

    def quat(self, p: _Plan):
        q = yaw_quat(p.yaw)
        if p.tilt_axis is not None:
            axis = [0.0, 0.0, 0.0]
            axis[p.tilt_axis] = 1.0
            q = quat_mul(q, quat_from_axis_angle(axis, p.tilt))
        return q

    def local_vertices(self, p: _Plan) -> np.ndarray:
        """World-oriented vertices relative to the object origin."""
        ext = np.asarray(self.pri[p.category].ref_scale)
        v = box_corners(ext) * np.exp(p.log_scale)
        return v @ quat_to_matrix(self.quat(p)).T

    def half_xz(self, p: _Plan) -> np.ndarray:
        v = self.local_vertices(p)
        return np.array([np.abs(v[:, 0]).max(), np.abs(v[:, 2]).max()])

    def bottom(self, p: _Plan) -> float:
        return float(self.local_vertices(p)[:, 1].min())

    def top(self, p: _Plan) -> float:
        return float(self.local_vertices(p)[:, 1].max())

    # --- placement ---------------------------------------------------------------

    def aabb(self, p: _Plan, x: float, z: float) -> tuple[float, float, float, float]:
        h = self.half_xz(p)
        return (x - h[0], x + h[0], z - h[1], z + h[1])

    @staticmethod
    def gap(a, b) -> float:
        dx = max(0.0, a[0] - b[1], b[0] - a[1])
        dz = max(0.0, a[2] - b[3], b[2] - a[3])
        return math.hypot(dx, dz)

    def clear(self, box, placed) -> bool:
        return all(self.gap(box, q) >= self.cfg.clearance for q in placed)

    def build(self) -> tuple[Scene, list[ViolationLabel]]:
        cfg, rng = self.cfg, self.rng
        W = round(float(rng.uniform(*cfg.room_size)), 2)
        D = round(float(rng.uniform(*cfg.room_size)), 2)
        room = Room.rectangle(W, D, 2.6)
        n = int(rng.integers(cfg.objects_per_scene[0], cfg.objects_per_scene[1] + 1))
        blocking = bool(rng.random() < cfg.violation_mix.get("blocking", 0.0))
        plans: list[_Plan] = []
        placed: list[tuple] = []

        if blocking:
            self.place_barrier(plans, placed, W, D)
        rest = max(0, n - len(plans))
        n_child = int(rng.integers(1, max(1, rest // 3) + 1)) if rest >= 2 else 0
        n_floor = rest - n_child
        for k in range(n_floor):
            cat = self.hosts[int(rng.integers(len(self.hosts)))] if k < n_child else self.floor_cats[int(rng.integers(len(self.floor_cats)))]
            role = "wall" if self.pri[cat].is_wall_class else "free"
            plans.append(_Plan(len(plans), cat, role))
        floor_plans = [p for p in plans if p.role != "barrier"]
        for k in range(n_child):
            host = floor_plans[k]
            cat = self.child_cats[int(rng.integers(len(self.child_cats)))]
            c = _Plan(len(plans), cat, "child", host=host.idx)
            host.child = c.idx
            plans.append(c)

        self.assign_violations(plans)
        self.shape(plans)
        # larger footprints first
        order = sorted(
            (p for p in plans if p.role in ("wall", "free") and (p.partner is None or p.partner > p.idx)),
            key=lambda p: (p.role != "wall", -float(np.prod(self.half_xz(p)))),
        )
        for p in order:
            if p.role == "wall":
                self.place_wall(p, placed, W, D)
            elif p.partner is not None:
                self.place_pair(p, plans[p.partner], placed, W, D)
            else:
                self.place_free(p, placed, W, D)
        for p in plans:
            if p.role == "child":
                self.place_child(p, plans[p.host])  # type: ignore[index]
        self.apply_lifts(plans)

        objects = []
        for p in plans:
            ext = self.pri[p.category].ref_scale
            pose = Pose(quantize(tuple(p.t)), quantize(tuple(self.quat(p))), quantize(tuple(np.exp(p.log_scale))))
            parent = plans[p.host].id if p.role == "child" else "floor"
            objects.append(ObjectInstance(p.id, p.category, Geometry(quantize(tuple(ext))), pose, parent))
        scene = Scene(room, tuple(objects), {"source": "corpus"})

        labels = []
        for p in plans:
            if p.kind is not None:
                labels.append(ViolationLabel(p.id, p.kind, float(quantize(p.magnitude))))
            for kind, mag in p.derived:
                labels.append(ViolationLabel(p.id, kind, float(quantize(mag)), derived=True))

        omap = rasterize(scene)
        comps, ncomp = ndimage.label(~omap.cells)
        if ncomp == 0:
            raise _Retry()
        if blocking:
            if ncomp < 2:
                raise _Retry()
            sizes = np.bincount(comps.ravel())[1:].astype(float)
            f = sizes / sizes.sum()
            labels.append(ViolationLabel(SCENE_LABEL_ID, "blocking", float(quantize(1.0 - float((f**2).sum())))))
        elif ncomp != 1:
            raise _Retry()
        return scene, labels

    # --- violation planning ----------------------------------------------------------

    def eligible(self, p: _Plan, kind: str) -> bool:
        if p.role == "barrier":
            return False
        floor = p.role in ("free", "wall")
        return {
            "collision": p.role == "free" and p.child is None,
            "floating": floor,
            "unsupported": p.role == "child",
            "unanchored": p.role == "wall",
            "misoriented": p.role == "free" and p.child is None,
            "mis-scaled": True,
            "statically-unstable": p.role == "child",
        }[kind]

    def assign_violations(self, plans: list[_Plan]) -> None:
        mix = self.cfg.violation_mix
        kinds = [k for k in OBJECT_KINDS if mix.get(k, 0.0) > 0]
        cum = np.cumsum([mix[k] for k in kinds]) if kinds else np.zeros(0)
        waiting: _Plan | None = None
        for p in plans:
            u = self.rng.random()
            if not kinds:
                continue
            pick = int(np.searchsorted(cum, u, side="right"))
            if pick >= len(kinds) or not self.eligible(p, kinds[pick]):
                continue
            kind = kinds[pick]
            if kind == "collision":
                if waiting is None:
                    waiting = p
                    continue
                p.kind = waiting.kind = "collision"
                p.partner, waiting.partner = waiting.idx, p.idx
                waiting = None
            else:
                p.kind = kind

    def shape(self, plans: list[_Plan]) -> None:
        rng, rg = self.rng, self.ranges
        for p in plans:
            if p.role == "free":
                p.yaw = 0.5 * math.pi * int(rng.integers(4))
            if p.kind == "misoriented":
                p.tilt_axis = 0 if rng.random() < 0.5 else 2
                ext = np.asarray(self.pri[p.category].ref_scale) / 2.0
                a = ext[2] if p.tilt_axis == 0 else ext[0]
                b = ext[1]
                for _ in range(100):
                    theta = _log_uniform(rng, *rg["misoriented"])
                    derived = abs(a * math.cos(theta) - b * math.sin(theta))
                    if derived > 0.01:
                        break
                else:
                    raise _Retry()
                p.tilt = theta if rng.random() < 0.5 else -theta
                p.magnitude = 1.0 - math.cos(theta)
                p.derived.append(("statically-unstable", derived))
            elif p.kind == "mis-scaled":
                ref = np.asarray(self.pri[p.category].ref_scale)
                for _ in range(100):
                    total = _log_uniform(rng, *rg["mis-scaled"])
                    w = rng.dirichlet(np.ones(3))
                    if (total * w).max() <= MAX_AXIS_LOG_SCALE:
                        break
                else:
                    raise _Retry()
                signs = np.where(rng.random(3) < 0.5, -1.0, 1.0)
                # keep grown objects placeable
                signs = np.where(ref * np.exp(total * w) > 2.2, -1.0, signs)
                p.log_scale = signs * total * w
                p.magnitude = float(np.abs(p.log_scale).sum())
            elif p.kind in ("floating", "unsupported", "unanchored"):
                p.magnitude = _log_uniform(rng, *rg[p.kind])

    # --- placement routines -------------------------------------------------------------

    def _free_xz(self, h: np.ndarray, W: float, D: float) -> tuple[float, float]:
        c = self.cfg.clearance
        lo = np.array([c, c]) + h
        hi = np.array([W, D]) - c - h
        if np.any(hi < lo):
            raise _Retry()
        return float(self.rng.uniform(lo[0], hi[0])), float(self.rng.uniform(lo[1], hi[1]))

    def place_free(self, p: _Plan, placed, W, D) -> None:
        h = self.half_xz(p)
        for _ in range(80):
            x, z = self._free_xz(h, W, D)
            box = self.aabb(p, x, z)
            if self.clear(box, placed):
                p.t = np.array([x, -self.bottom(p), z])
                placed.append(box)
                return
        raise _Retry()

    def place_pair(self, a: _Plan, b: _Plan, placed, W, D) -> None:
        ha, hb = self.half_xz(a), self.half_xz(b)
        va, vb = self.local_vertices(a), self.local_vertices(b)
        heights = (va[:, 1].max() - va[:, 1].min(), vb[:, 1].max() - vb[:, 1].min())
        cap = min(0.5 * min(heights) - 0.01, min(ha[1], hb[1]) - 0.01, 0.8 * min(ha[0], hb[0]))
        lo, hi = self.ranges["collision"]
        if cap < lo:
            a.kind = b.kind = None
            a.partner = b.partner = None
            self.place_free(a, placed, W, D)
            self.place_free(b, placed, W, D)
            return
        d = _log_uniform(self.rng, lo, min(hi, cap))
        a.magnitude = b.magnitude = d
        offset = ha[0] + hb[0] - d
        comp = np.array([(ha[0] + offset + hb[0]) / 2.0, max(ha[1], hb[1])])
        for _ in range(80):
            cx, cz = self._free_xz(comp, W, D)
            box = (cx - comp[0], cx + comp[0], cz - comp[1], cz + comp[1])
            if self.clear(box, placed):
                xa = cx - comp[0] + ha[0]
                a.t = np.array([xa, -self.bottom(a), cz])
                b.t = np.array([xa + offset, -self.bottom(b), cz])
                placed.append(box)
                return
        raise _Retry()

    def place_wall(self, p: _Plan, placed, W, D) -> None:
        rng = self.rng
        ext = np.asarray(self.pri[p.category].ref_scale) * np.exp(p.log_scale)
        half_w, depth = 0.5 * ext[0], ext[2]
        offset = p.magnitude if p.kind == "unanchored" else 0.0
        c = self.cfg.clearance
        # (wall id, yaw, inward normal)
        walls = [
            (0, 0.0, np.array([0.0, 1.0])),
            (1, math.pi, np.array([0.0, -1.0])),
            (2, 0.5 * math.pi, np.array([1.0, 0.0])),
            (3, -0.5 * math.pi, np.array([-1.0, 0.0])),
        ]
        for _ in range(80):
            wid, yaw, normal = walls[int(rng.integers(4))]
            length = W if wid < 2 else D
            if length - 2 * (c + half_w) < 0:
                continue
            u = float(rng.uniform(c + half_w, length - c - half_w))
            back = offset + 0.5 * depth  # center distance from the wall
            if wid == 0:
                x, z = u, back
            elif wid == 1:
                x, z = u, D - back
            elif wid == 2:
                x, z = back, u
            else:
                x, z = W - back, u
            p.yaw = yaw
            box = self.aabb(p, x, z)
            if self.clear(box, placed):
                p.t = np.array([x, -self.bottom(p), z])
                p.wall_normal = normal
                placed.append(box)
                return
        raise _Retry()

    def place_barrier(self, plans: list[_Plan], placed, W, D) -> None:
        rng = self.rng
        zb = float(rng.uniform(1.8, D - 1.8)) if D > 3.6 else D / 2
        pool = self.free_cats
        chosen: list[str] = []
        width = 0.0
        while True:
            fits = [c for c in pool if width + self.pri[c].ref_scale[0] + 0.1 * (len(chosen) + 2) <= W]
            if not fits:
                break
            c = fits[int(rng.integers(len(fits)))]
            chosen.append(c)
            width += self.pri[c].ref_scale[0]
        k = len(chosen)
        slack = W - width
        if k < 2:
            raise _Retry()
        # end gaps <= 0.2 (walls are not inflated), inner gaps <= 0.3
        caps = np.array([0.2] + [0.3] * (k - 1) + [0.2])
        floor_gap = 0.05
        spare = slack - floor_gap * (k + 1)
        if spare < 0 or spare > (caps - floor_gap).sum():
            raise _Retry()
        gaps = floor_gap + (caps - floor_gap) * spare / (caps - floor_gap).sum()
        x = float(gaps[0])
        for i, c in enumerate(chosen):
            p = _Plan(len(plans), c, "barrier")
            wx = self.pri[c].ref_scale[0]
            p.t = np.array([x + wx / 2, -self.bottom(p), zb])
            placed.append(self.aabb(p, p.t[0], zb))
            plans.append(p)
            x += wx + float(gaps[i + 1])

    def place_child(self, c: _Plan, host: _Plan) -> None:
        rng = self.rng
        c.yaw = host.yaw + 0.5 * math.pi * int(rng.integers(4))
        hh = self.half_xz(host)
        hc = self.half_xz(c)
        margin = 0.03
        room_for = hh - hc - margin
        if np.any(room_for < 0):
            raise _Retry()
        center = host.t[[0, 2]]
        xz = center + rng.uniform(-room_for, room_for)
        if c.kind == "statically-unstable":
            if host.role == "wall":
                axis = 0 if abs(host.wall_normal[1]) > 0.5 else 1  # type: ignore[index]
            else:
                axis = int(rng.integers(2))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            hi = min(self.ranges["statically-unstable"][1], MAX_SLIDE_FRACTION * hc[axis])
            lo = self.ranges["statically-unstable"][0]
            if hi < lo:
                c.kind = None
            else:
                d = _log_uniform(rng, lo, hi)
                xz[axis] = center[axis] + sign * (hh[axis] + d)
                c.magnitude = d
                c.derived.append(("unsupported", d))
        c.t = np.array([xz[0], self.top(host) + host.t[1] - self.bottom(c), xz[1]])

    def apply_lifts(self, plans: list[_Plan]) -> None:
        for p in plans:
            if p.kind == "floating":
                p.t = p.t + np.array([0.0, p.magnitude, 0.0])
                if p.child is not None:
                    plans[p.child].t = plans[p.child].t + np.array([0.0, p.magnitude, 0.0])
        for p in plans:
            if p.kind == "unsupported":
                p.t = p.t + np.array([0.0, p.magnitude, 0.0])


def generate_scene(config: CorpusConfig, index: int, priors: PriorRegistry | None = None) -> tuple[Scene, list[ViolationLabel]]:
    priors = default_priors() if priors is None else priors
    seq = np.random.SeedSequence([config.seed, index])
    rng = np.random.default_rng(seq)
    for _ in range(config.max_attempts):
        try:
            scene, labels = _Builder(config, priors, rng).build()
        except _Retry:
            continue
        meta = {"source": "corpus", "seed": str(config.seed), "index": str(index)}
        return Scene(scene.room, scene.objects, meta).validate(priors), labels
    raise CorpusError(f"scene {index}: no feasible arrangement after {config.max_attempts} attempts")


def generate_corpus(config: CorpusConfig, priors: PriorRegistry | None = None) -> list[tuple[Scene, list[ViolationLabel]]]:
    """Deterministic in ``config.seed``; scene ``i`` depends only on (seed, i)."""
    return [generate_scene(config, i, priors) for i in range(config.count)]


def labels_to_json(labels: list[ViolationLabel]) -> str:
    return json.dumps(
        [{"object_id": l.object_id, "kind": l.kind, "magnitude": l.magnitude, "derived": l.derived} for l in labels],
        indent=2,
    ) + "\n"


def labels_from_json(text: str) -> list[ViolationLabel]:
    return [ViolationLabel(**d) for d in json.loads(text)]


def write_corpus(corpus, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (scene, labels) in enumerate(corpus):
        p = out / f"scene_{i:04d}.json"
        save_scene(scene, p)
        lp = out / f"scene_{i:04d}.labels.json"
        tmp = lp.with_name(lp.name + ".tmp")
        tmp.write_text(labels_to_json(labels), encoding="utf-8")
        tmp.replace(lp)
        paths.append(p)
    return paths
