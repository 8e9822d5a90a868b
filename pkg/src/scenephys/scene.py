"""Scene domain model and the scene JSON format.

World frame: +Y is up, the floor is the plane y = 0, and floor-plan coordinates
are (x, z). Every type here is an immutable value object.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping, Sequence

import numpy as np

from . import polygon
from .priors import PriorRegistry, default_priors
from .transforms import quat_to_matrix

if TYPE_CHECKING:
    from .geometry import SdfGrid

RESERVED_PARENTS = ("floor", "wall")
VIOLATION_KINDS = (
    "collision",
    "floating",
    "unsupported",
    "unanchored",
    "misoriented",
    "mis-scaled",
    "statically-unstable",
    "blocking",
)


class SceneError(Exception):
    pass


class SceneParseError(SceneError):
    """The file is not valid scene JSON. ``line`` is set for syntax errors,
    ``field`` for missing or mistyped entries."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if field is not None:
            loc.append(f"field {field}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.field = field


class SceneValidationError(SceneError):
    def __init__(self, object_id: str | None, rule: str):
        where = f"object {object_id!r}: " if object_id is not None else ""
        super().__init__(where + rule)
        self.object_id = object_id
        self.rule = rule


def _vec(values, n: int) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) != n:
        raise ValueError(f"expected {n} components, got {len(out)}")
    return out


@dataclass(frozen=True)
class Pose:
    t: tuple[float, float, float] = (0.0, 0.0, 0.0)
    q: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    s: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self, object_id: str | None = None) -> None:
        if not all(math.isfinite(v) for v in (*self.t, *self.q, *self.s)):
            raise SceneValidationError(object_id, "pose must be finite")
        if abs(math.sqrt(sum(c * c for c in self.q)) - 1.0) > 1e-6:
            raise SceneValidationError(object_id, "quaternion must be unit-norm")
        if any(not (v > 0) for v in self.s):
            raise SceneValidationError(object_id, "scale must be positive")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def to_world(self, local: np.ndarray) -> np.ndarray:
        """Map object-frame points (canonical, unscaled) to world."""
        local = np.asarray(local, dtype=float)
        return (local * np.asarray(self.s)) @ self.rotation.T + np.asarray(self.t)


@dataclass(frozen=True)
class Geometry:
    """Canonical shape. ``box`` holds the nominal extents used for scale and
    inertia; ``hull``, when present, is the actual convex shape."""

    box: tuple[float, float, float]
    hull: tuple[tuple[float, float, float], ...] | None = None
    sdf: "SdfGrid | None" = field(default=None, compare=False)

    def validate(self, object_id: str | None = None) -> None:
        if len(self.box) != 3 or any(not (v > 0) for v in self.box):
            raise SceneValidationError(object_id, "box extents must be positive")
        if self.hull is not None:
            pts = np.asarray(self.hull, dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
                raise SceneValidationError(object_id, "hull needs at least 4 vertices")
            centered = pts - pts.mean(axis=0)
            if np.linalg.matrix_rank(centered, tol=1e-9) < 3:
                raise SceneValidationError(object_id, "hull vertices are coplanar")


@dataclass(frozen=True)
class ObjectInstance:
    id: str
    category: str
    geometry: Geometry
    pose: Pose = Pose()
    support_parent: str | None = None

    def with_pose(self, **changes) -> "ObjectInstance":
        return replace(self, pose=replace(self.pose, **changes))


@dataclass(frozen=True)
class Wall:
    a: tuple[float, float]
    b: tuple[float, float]
    height: float = 2.5


@dataclass(frozen=True)
class Room:
    bounds: tuple[tuple[float, float], ...]
    walls: tuple[Wall, ...] = ()

    def validate(self) -> None:
        if not polygon.is_simple(self.bounds):
            raise SceneValidationError(None, "room bounds must be a simple polygon")
        poly = np.asarray(self.bounds, dtype=float)
        for k, w in enumerate(self.walls):
            if not w.height > 0:
                raise SceneValidationError(None, f"wall {k}: height must be positive")
            for end in (w.a, w.b):
                inside = polygon.point_in_polygon([end], poly)[0]
                on_edge = min(
                    polygon.point_segment_distance(end, poly[i], poly[(i + 1) % len(poly)])
                    for i in range(len(poly))
                ) < 1e-6
                if not (inside or on_edge):
                    raise SceneValidationError(None, f"wall {k}: endpoint outside room bounds")

    @staticmethod
    def rectangle(width: float, depth: float, height: float = 2.5, origin=(0.0, 0.0)) -> "Room":
        x0, z0 = origin
        pts = ((x0, z0), (x0 + width, z0), (x0 + width, z0 + depth), (x0, z0 + depth))
        walls = tuple(Wall(pts[i], pts[(i + 1) % 4], height) for i in range(4))
        return Room(pts, walls)


@dataclass(frozen=True)
class Scene:
    room: Room
    objects: tuple[ObjectInstance, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)

    def validate(self, priors: PriorRegistry | None = None) -> "Scene":
        priors = default_priors() if priors is None else priors
        self.room.validate()
        ids = [o.id for o in self.objects]
        seen: set[str] = set()
        for oid in ids:
            if oid in seen:
                raise SceneValidationError(oid, "object ids must be unique")
            if oid in RESERVED_PARENTS:
                raise SceneValidationError(oid, "object id collides with a reserved keyword")
            seen.add(oid)
        for o in self.objects:
            o.geometry.validate(o.id)
            o.pose.validate(o.id)
            if o.category not in priors:
                raise SceneValidationError(o.id, f"category {o.category!r} has no registered prior")
            if o.support_parent is not None and o.support_parent not in RESERVED_PARENTS:
                if o.support_parent not in seen or o.support_parent == o.id:
                    raise SceneValidationError(
                        o.id, f"support_parent {o.support_parent!r} names no other object"
                    )
        return self

    def by_id(self) -> dict[str, ObjectInstance]:
        return {o.id: o for o in self.objects}

    def replace_objects(self, objects: Sequence[ObjectInstance]) -> "Scene":
        return replace(self, objects=tuple(objects))


@dataclass(frozen=True)
class ViolationLabel:
    object_id: str
    kind: str
    magnitude: float
    derived: bool = False  # consequence of another injection rather than a target

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")
        if not self.magnitude >= 0:
            raise ValueError("violation magnitude must be non-negative")


# --- JSON -------------------------------------------------------------------

_OBJECT_KEYS = {"id", "category", "box", "pose", "support_parent", "hull"}
_TOP_KEYS = {"room", "objects", "metadata"}


def _num(v: float) -> float:
    """Round to 9 significant digits; values already at that precision are
    returned bit-exactly."""
    return float(f"{float(v):.9g}")


def quantize(v):
    if isinstance(v, (tuple, list)):
        return tuple(quantize(x) for x in v)
    return _num(v)


def scene_to_dict(scene: Scene) -> dict[str, Any]:
    objects = []
    for o in scene.objects:
        d: dict[str, Any] = {
            "id": o.id,
            "category": o.category,
            "box": [_num(v) for v in o.geometry.box],
            "pose": {
                "t": [_num(v) for v in o.pose.t],
                "q": [_num(v) for v in o.pose.q],
                "s": [_num(v) for v in o.pose.s],
            },
        }
        if o.geometry.hull is not None:
            d["hull"] = [[_num(v) for v in p] for p in o.geometry.hull]
        if o.support_parent is not None:
            d["support_parent"] = o.support_parent
        objects.append(d)
    return {
        "room": {
            "bounds": [[_num(x), _num(z)] for x, z in scene.room.bounds],
            "walls": [
                {"a": [_num(v) for v in w.a], "b": [_num(v) for v in w.b], "height": _num(w.height)}
                for w in scene.room.walls
            ],
        },
        "objects": objects,
        "metadata": {str(k): str(v) for k, v in sorted(scene.metadata.items())},
    }


def _warn_unknown(d: Mapping, allowed: set[str], where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        warnings.warn(f"ignoring unknown keys {extra} in {where}", stacklevel=3)


def scene_from_dict(data: Any, priors: PriorRegistry | None = None) -> Scene:
    if not isinstance(data, dict):
        raise SceneParseError("top level must be an object", field="<root>")
    _warn_unknown(data, _TOP_KEYS, "<root>")
    fld = "room"
    try:
        room_d = data["room"]
        _warn_unknown(room_d, {"bounds", "walls"}, "room")
        fld = "room.bounds"
        bounds = tuple(_vec(p, 2) for p in room_d["bounds"])
        walls = []
        for k, w in enumerate(room_d.get("walls", [])):
            fld = f"room.walls[{k}]"
            _warn_unknown(w, {"a", "b", "height"}, fld)
            walls.append(Wall(_vec(w["a"], 2), _vec(w["b"], 2), float(w.get("height", 2.5))))  # type: ignore[arg-type]
        room = Room(bounds, tuple(walls))  # type: ignore[arg-type]
        objects = []
        for k, od in enumerate(data["objects"]):
            fld = f"objects[{k}]"
            _warn_unknown(od, _OBJECT_KEYS, fld)
            pose_d = od.get("pose", {})
            fld = f"objects[{k}].pose"
            _warn_unknown(pose_d, {"t", "q", "s"}, fld)
            pose = Pose(
                _vec(pose_d.get("t", (0, 0, 0)), 3),  # type: ignore[arg-type]
                _vec(pose_d.get("q", (1, 0, 0, 0)), 4),  # type: ignore[arg-type]
                _vec(pose_d.get("s", (1, 1, 1)), 3),  # type: ignore[arg-type]
            )
            fld = f"objects[{k}].box"
            box = _vec(od["box"], 3)
            hull = None
            if "hull" in od:
                fld = f"objects[{k}].hull"
                hull = tuple(_vec(p, 3) for p in od["hull"])
            fld = f"objects[{k}]"
            objects.append(
                ObjectInstance(
                    str(od["id"]),
                    str(od["category"]),
                    Geometry(box, hull),  # type: ignore[arg-type]
                    pose,
                    None if od.get("support_parent") is None else str(od["support_parent"]),
                )
            )
        fld = "metadata"
        meta = {str(k): str(v) for k, v in dict(data.get("metadata", {})).items()}
    except SceneError:
        raise
    except KeyError as exc:
        raise SceneParseError(f"missing key {exc.args[0]!r}", field=fld) from exc
    except (TypeError, ValueError) as exc:
        raise SceneParseError(str(exc), field=fld) from exc
    return Scene(room, tuple(objects), meta).validate(priors)


def load_scene(path: str | Path, priors: PriorRegistry | None = None) -> Scene:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(exc.msg, line=exc.lineno) from exc
    return scene_from_dict(data, priors)


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def save_scene(scene: Scene, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_scene(scene), encoding="utf-8")
    tmp.replace(path)
