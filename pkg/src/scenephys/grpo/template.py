"""Fixed scene templates and the flat layout-vector encoding.

Each object contributes 7 features: ``(t_x, t_y, t_z, sin yaw, cos yaw,
log s, reserved)`` where ``s`` is a uniform scale multiplier on the template
geometry and ``t`` is the object center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scene import Geometry, ObjectInstance, Pose, Room, Scene
from ..transforms import yaw_quat

FEATURES = 7
LOG_SCALE_BOUND = 0.7


@dataclass(frozen=True)
class TemplateObject:
    id: str
    category: str
    extents: tuple[float, float, float]
    rest: tuple[float, float, float, float, float]  # x, z, yaw, log s, lift of a plausible layout


@dataclass(frozen=True)
class SceneTemplate:
    """A room and an ordered object list; layouts vary only the poses."""

    name: str
    room: Room
    height: float
    objects: tuple[TemplateObject, ...]

    @property
    def dim(self) -> int:
        return FEATURES * len(self.objects)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(self.room.bounds, dtype=float)
        return b.min(axis=0), b.max(axis=0)

    def decode(self, vec: np.ndarray) -> Scene:
        """Layout vector to a valid scene: centers clamped into the room's
        bounding box and ``[0, height]``, (sin, cos) normalized, log-scale
        clamped to +-0.7."""
        v = np.asarray(vec, dtype=float).reshape(len(self.objects), FEATURES)
        lo, hi = self.bounds()
        objs = []
        for o, row in zip(self.objects, v):
            tx = float(np.clip(row[0], lo[0], hi[0]))
            tz = float(np.clip(row[2], lo[1], hi[1]))
            ty = float(np.clip(row[1], 0.0, self.height))
            yaw = math.atan2(row[3], row[4]) if math.hypot(row[3], row[4]) > 1e-12 else 0.0
            s = math.exp(float(np.clip(row[5], -LOG_SCALE_BOUND, LOG_SCALE_BOUND)))
            pose = Pose((tx, ty, tz), tuple(float(c) for c in yaw_quat(yaw)), (s, s, s))  # type: ignore[arg-type]
            objs.append(ObjectInstance(o.id, o.category, Geometry(box=o.extents), pose, "floor"))
        return Scene(self.room, tuple(objs), {"template": self.name})

    def encode(self, scene: Scene) -> np.ndarray:
        """Inverse of :meth:`decode` for upright scenes on this template."""
        ids = scene.by_id()
        out = np.zeros(self.dim)
        for k, o in enumerate(self.objects):
            p = ids[o.id].pose
            r = p.rotation
            yaw = math.atan2(r[0, 2], r[0, 0])
            out[FEATURES * k:FEATURES * k + 6] = (
                p.t[0], p.t[1], p.t[2], math.sin(yaw), math.cos(yaw), float(np.mean(np.log(p.s))),
            )
        return out

    def rest_vector(self) -> np.ndarray:
        """The plausible reference layout: every object on the floor at its rest pose."""
        out = np.zeros(self.dim)
        for k, o in enumerate(self.objects):
            x, z, yaw, logs, lift = o.rest
            h = o.extents[1] * math.exp(logs)
            out[FEATURES * k:FEATURES * k + 6] = (x, 0.5 * h + lift, z, math.sin(yaw), math.cos(yaw), logs)
        return out

    def dataset(self, n: int, seed: int, translation_sigma: float = 0.12, yaw_sigma: float = math.radians(8.0),
                log_scale_sigma: float = 0.06, lift_probability: float = 0.3, max_lift: float = 0.15) -> np.ndarray:
        """Jittered copies of the rest layout. Jitter produces the usual defects
        of an imperfect generator: overlaps, objects off the wall, and (with
        probability ``lift_probability`` per object) floating objects."""
        rng = np.random.default_rng(seed)
        base = self.rest_vector().reshape(len(self.objects), FEATURES)
        out = np.empty((n, len(self.objects), FEATURES))
        for i in range(n):
            v = base.copy()
            for k, o in enumerate(self.objects):
                _, _, yaw, logs, _ = o.rest
                dl = rng.normal(0.0, log_scale_sigma)
                dyaw = rng.normal(0.0, yaw_sigma)
                lift = rng.uniform(0.0, max_lift) if rng.random() < lift_probability else 0.0
                v[k, 0] += rng.normal(0.0, translation_sigma)
                v[k, 2] += rng.normal(0.0, translation_sigma)
                v[k, 5] = logs + dl
                v[k, 1] = 0.5 * o.extents[1] * math.exp(logs + dl) + lift
                v[k, 3] = math.sin(yaw + dyaw)
                v[k, 4] = math.cos(yaw + dyaw)
            out[i] = v
        return out.reshape(n, self.dim)


def toy_template() -> SceneTemplate:
    """Bed, nightstand and wardrobe in a 4 m x 4 m room centered at the origin.
    The bed's head and the wardrobe's back rest against walls."""
    room = Room.rectangle(4.0, 4.0, 2.6, origin=(-2.0, -2.0))
    objects = (
        TemplateObject("bed", "bed", (1.6, 0.5, 2.0), (0.0, -1.0, 0.0, 0.0, 0.0)),
        TemplateObject("nightstand", "nightstand", (0.5, 0.55, 0.4), (1.1, -1.8, 0.0, 0.0, 0.0)),
        TemplateObject("wardrobe", "wardrobe", (1.2, 2.0, 0.6), (-1.7, 0.5, math.pi / 2, 0.0, 0.0)),
    )
    return SceneTemplate("toy-bedroom", room, 2.6, objects)


TEMPLATES = {"toy-bedroom": toy_template}


def get_template(name: str) -> SceneTemplate:
    try:
        return TEMPLATES[name]()
    except KeyError:
        raise ValueError(f"unknown template {name!r}; known: {sorted(TEMPLATES)}") from None

