"""Geometric kernel: signed distance fields, penetration depth, support
polygons and center-of-mass margins.

Sign convention throughout: signed distances are negative inside geometry.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from . import polygon
from .scene import Geometry, ObjectInstance, Pose

DEFAULT_VOXEL_DIVISIONS = 32
DEFAULT_TRUNCATION_VOXELS = 3.0
DEFAULT_VOXEL_BUDGET = 128**3
DEFAULT_SURFACE_SAMPLES = 512
CONTACT_TOLERANCE = 0.005


class GeometryError(Exception):
    pass


class VoxelBudgetError(GeometryError):
    pass


class EmptySupportError(GeometryError):
    pass


# --- canonical shape helpers --------------------------------------------------

_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
)


def box_corners(extents) -> np.ndarray:
    return 0.5 * _CORNER_SIGNS * np.asarray(extents, dtype=float)


def canonical_vertices(geom: Geometry) -> np.ndarray:
    if geom.hull is not None:
        return np.asarray(geom.hull, dtype=float)
    return box_corners(geom.box)


@functools.lru_cache(maxsize=4096)
def _hull_centroid(hull: tuple) -> tuple[float, float, float]:
    pts = np.asarray(hull, dtype=float)
    ch = ConvexHull(pts)
    ref = pts[ch.vertices].mean(axis=0)
    tri = pts[ch.simplices]
    vol = np.abs(np.einsum("ij,ij->i", tri[:, 0] - ref, np.cross(tri[:, 1] - ref, tri[:, 2] - ref))) / 6.0
    cen = (ref + tri.sum(axis=1)) / 4.0
    return tuple(float(v) for v in (vol[:, None] * cen).sum(axis=0) / vol.sum())  # type: ignore[return-value]


def canonical_centroid(geom: Geometry) -> np.ndarray:
    """Uniform-density centroid in the canonical (unscaled) object frame."""
    if geom.hull is None:
        return np.zeros(3)
    return np.asarray(_hull_centroid(tuple(map(tuple, geom.hull))))


def world_vertices(obj: ObjectInstance) -> np.ndarray:
    return obj.pose.to_world(canonical_vertices(obj.geometry))


def center_of_mass(obj: ObjectInstance) -> np.ndarray:
    # an affine map sends the centroid of a uniform body to the centroid of its image
    return obj.pose.to_world(canonical_centroid(obj.geometry)[None, :])[0]


def footprint(obj: ObjectInstance) -> np.ndarray:
    """Floor-plane projection (x, z) of the object's convex shape, CCW."""
    return polygon.convex_hull(world_vertices(obj)[:, [0, 2]])


def bounding_radius(obj: ObjectInstance) -> float:
    return float(np.linalg.norm(world_vertices(obj) - center_of_mass(obj), axis=1).max())


def world_aabb(obj: ObjectInstance) -> tuple[np.ndarray, np.ndarray]:
    v = world_vertices(obj)
    return v.min(axis=0), v.max(axis=0)


def default_voxel_size(extents) -> float:
    return float(max(extents)) / DEFAULT_VOXEL_DIVISIONS


# --- analytic SDFs --------------------------------------------------------------

def box_sdf(points: np.ndarray, half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact SDF of an origin-centered box and its gradient."""
    p = np.atleast_2d(points)
    q = np.abs(p) - half
    qpos = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(qpos, axis=1)
    inside_term = np.minimum(q.max(axis=1), 0.0)
    value = out_norm + inside_term
    grad = np.zeros_like(p)
    outside = out_norm > 0.0
    if np.any(outside):
        grad[outside] = qpos[outside] / out_norm[outside, None]
    ins = ~outside
    if np.any(ins):
        k = q[ins].argmax(axis=1)
        grad[np.flatnonzero(ins), k] = 1.0
    grad *= np.where(p < 0.0, -1.0, 1.0)
    return value, grad


@functools.lru_cache(maxsize=4096)
def _hull_planes(hull: tuple) -> tuple[np.ndarray, np.ndarray]:
    ch = ConvexHull(np.asarray(hull, dtype=float))
    eq = np.unique(np.round(ch.equations, 12), axis=0)
    return eq[:, :3].copy(), eq[:, 3].copy()


def convex_sdf(points: np.ndarray, normals: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max-of-planes distance: exact inside a convex polytope, a lower bound
    outside."""
    d = points @ normals.T + offsets
    k = d.argmax(axis=1)
    return d[np.arange(len(points)), k], normals[k]


def object_sdf(obj: ObjectInstance, points_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """SDF of the posed object at world points, with world-frame gradients.

    Uses the attached grid when the geometry carries one, otherwise the exact
    analytic field of the scaled box or hull.
    """
    pts = np.atleast_2d(np.asarray(points_world, dtype=float))
    geom = obj.geometry
    if geom.sdf is not None:
        return sdf_query_many(geom.sdf, pts, obj.pose)
    rot = obj.pose.rotation
    local = (pts - np.asarray(obj.pose.t)) @ rot
    s = np.asarray(obj.pose.s)
    if geom.hull is None:
        val, g = box_sdf(local, 0.5 * np.asarray(geom.box) * s)
    else:
        scaled = tuple(map(tuple, np.asarray(geom.hull) * s))
        n, off = _hull_planes(scaled)
        val, g = convex_sdf(local, n, off)
    return val, g @ rot.T


# --- SDF grids ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Truncated SDF sampled on grid nodes ``origin + index * voxel_size`` in the
    canonical object frame; ``values`` is C-ordered with shape ``dims``."""

    origin: tuple[float, float, float]
    voxel_size: float
    dims: tuple[int, int, int]
    values: np.ndarray
    truncation: float

    def __post_init__(self):
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if self.values.size != int(np.prod(self.dims)):
            raise ValueError("values length must equal the product of dims")
        if np.abs(self.values).max() > self.truncation + 1e-12:
            raise ValueError("values exceed the truncation band")

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.dims)


def _grid_for(fn, lo: np.ndarray, hi: np.ndarray, voxel_size: float, truncation: float, budget: int) -> SdfGrid:
    lo = lo - truncation
    hi = hi + truncation
    dims = tuple(int(math.ceil((hi[k] - lo[k]) / voxel_size - 1e-9)) + 1 for k in range(3))
    if int(np.prod(dims)) > budget:
        raise VoxelBudgetError(f"SDF grid {dims} exceeds the voxel budget of {budget}")
    axes = [lo[k] + voxel_size * np.arange(dims[k]) for k in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = np.clip(fn(nodes), -truncation, truncation)
    return SdfGrid(tuple(float(v) for v in lo), float(voxel_size), dims, vals, float(truncation))  # type: ignore[arg-type]


def sdf_from_box(
    extents,
    voxel_size: float | None = None,
    truncation: float | None = None,
    budget: int = DEFAULT_VOXEL_BUDGET,
) -> SdfGrid:
    """Voxelize an origin-centered box, padded by the truncation band."""
    ext = np.asarray(extents, dtype=float)
    if np.any(ext <= 0):
        raise ValueError("extents must be positive")
    voxel_size = default_voxel_size(ext) if voxel_size is None else float(voxel_size)
    truncation = DEFAULT_TRUNCATION_VOXELS * voxel_size if truncation is None else float(truncation)
    if voxel_size <= 0 or truncation <= 0:
        raise ValueError("voxel_size and truncation must be positive")
    half = 0.5 * ext
    return _grid_for(lambda p: box_sdf(p, half)[0], -half, half, voxel_size, truncation, budget)


def sdf_from_geometry(
    geom: Geometry,
    voxel_size: float | None = None,
    truncation: float | None = None,
    budget: int = DEFAULT_VOXEL_BUDGET,
) -> SdfGrid:
    if geom.hull is None:
        return sdf_from_box(geom.box, voxel_size, truncation, budget)
    pts = np.asarray(geom.hull, dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    voxel_size = default_voxel_size(hi - lo) if voxel_size is None else float(voxel_size)
    truncation = DEFAULT_TRUNCATION_VOXELS * voxel_size if truncation is None else float(truncation)
    n, off = _hull_planes(tuple(map(tuple, pts)))
    return _grid_for(lambda p: convex_sdf(p, n, off)[0], lo, hi, voxel_size, truncation, budget)


def interpolate(grid: SdfGrid, local: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Trilinear value and gradient at canonical-frame points.

    Returns ``(values, gradients, inside)``; points outside the grid get the
    truncation value and a zero gradient.
    """
    local = np.atleast_2d(local)
    g = grid.grid
    dims = np.asarray(grid.dims)
    u = (local - np.asarray(grid.origin)) / grid.voxel_size
    inside = np.all((u >= 0.0) & (u <= dims - 1), axis=1)
    values = np.full(len(local), grid.truncation)
    grads = np.zeros_like(local)
    if not np.any(inside):
        return values, grads, inside
    ui = u[inside]
    i0 = np.minimum(np.floor(ui).astype(np.int64), dims - 2)
    f = ui - i0
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    c = np.empty((len(ui), 2, 2, 2))
    for a in (0, 1):
        for b in (0, 1):
            for d in (0, 1):
                c[:, a, b, d] = g[x0 + a, y0 + b, z0 + d]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    # interpolate along z, then y, then x
    cz = c[:, :, :, 0] * (1 - fz)[:, None, None] + c[:, :, :, 1] * fz[:, None, None]
    cy = cz[:, :, 0] * (1 - fy)[:, None] + cz[:, :, 1] * fy[:, None]
    values[inside] = cy[:, 0] * (1 - fx) + cy[:, 1] * fx
    dz = c[:, :, :, 1] - c[:, :, :, 0]
    dzy = dz[:, :, 0] * (1 - fy)[:, None] + dz[:, :, 1] * fy[:, None]
    gz = dzy[:, 0] * (1 - fx) + dzy[:, 1] * fx
    dy = cz[:, :, 1] - cz[:, :, 0]
    gy = dy[:, 0] * (1 - fx) + dy[:, 1] * fx
    gx = cy[:, 1] - cy[:, 0]
    grads[inside] = np.stack([gx, gy, gz], axis=1) / grid.voxel_size
    return values, grads, inside


def sdf_query_many(grid: SdfGrid, points_world: np.ndarray, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`sdf_query`."""
    pts = np.atleast_2d(np.asarray(points_world, dtype=float))
    rot = pose.rotation
    s = np.asarray(pose.s)
    m = float(np.prod(s)) ** (1.0 / 3.0)
    local = (pts - np.asarray(pose.t)) @ rot / s
    val, g, _ = interpolate(grid, local)
    return m * val, (m * g / s) @ rot.T


def sdf_query(grid: SdfGrid, point_world, pose: Pose) -> tuple[float, np.ndarray]:
    """Signed distance of a posed grid at one world point, with world gradient.

    The point is mapped into the canonical frame by the inverse pose; the
    interpolated value is rescaled by the geometric mean of the pose scale, which
    is exact for uniform scale.
    """
    v, g = sdf_query_many(grid, np.asarray(point_world, dtype=float)[None, :], pose)
    return float(v[0]), g[0]


# --- surface sampling ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurfaceSamples:
    """Canonical surface points. For boxes, ``face_axis`` and ``face_sign``
    name a face containing each sample so points can be slid along it; hull
    samples carry axis -1."""

    points: np.ndarray
    face_axis: np.ndarray
    face_sign: np.ndarray


def _grid_counts(n: int, a: float, b: float) -> tuple[int, int]:
    nu = max(1, int(round(math.sqrt(n * a / b))))
    nv = max(1, int(round(n / nu)))
    return nu, nv


@functools.lru_cache(maxsize=4096)
def _box_samples(extents: tuple, n: int) -> SurfaceSamples:
    half = 0.5 * np.asarray(extents)
    # corners and edges are assigned to one face they lie on, so refinement
    # that slides a sample within its face keeps it on the surface
    corners = box_corners(extents)
    pts = [corners]
    axes = [np.zeros(8, dtype=int)]
    signs = [np.sign(corners[:, 0])]
    # edge samples: 12 edges
    per_edge = max(1, n // 32)
    t = (np.arange(per_edge) + 0.5) / per_edge * 2.0 - 1.0
    for k in range(3):
        o1, o2 = [j for j in range(3) if j != k]
        for s1 in (-1, 1):
            for s2 in (-1, 1):
                e = np.zeros((per_edge, 3))
                e[:, k] = t * half[k]
                e[:, o1] = s1 * half[o1]
                e[:, o2] = s2 * half[o2]
                pts.append(e)
                axes.append(np.full(per_edge, o1))
                signs.append(np.full(per_edge, float(s1)))
    budget = max(6, n - 8 - 12 * per_edge)
    areas = np.array([4 * half[(k + 1) % 3] * half[(k + 2) % 3] for k in range(3)])
    total = 2 * areas.sum()
    for k in range(3):
        o1, o2 = [j for j in range(3) if j != k]
        cnt = max(1, int(round(budget * areas[k] / total)))
        nu, nv = _grid_counts(cnt, half[o1], half[o2])
        uu = ((np.arange(nu) + 0.5) / nu * 2.0 - 1.0) * half[o1]
        vv = ((np.arange(nv) + 0.5) / nv * 2.0 - 1.0) * half[o2]
        gu, gv = np.meshgrid(uu, vv, indexing="ij")
        for s in (-1, 1):
            f = np.zeros((gu.size, 3))
            f[:, k] = s * half[k]
            f[:, o1] = gu.ravel()
            f[:, o2] = gv.ravel()
            pts.append(f)
            axes.append(np.full(gu.size, k))
            signs.append(np.full(gu.size, float(s)))
    return SurfaceSamples(np.concatenate(pts), np.concatenate(axes), np.concatenate(signs))


@functools.lru_cache(maxsize=4096)
def _hull_samples(hull: tuple, n: int) -> SurfaceSamples:
    pts = np.asarray(hull, dtype=float)
    ch = ConvexHull(pts)
    tri = pts[ch.simplices]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    out = [pts[ch.vertices]]
    budget = max(len(tri), n - len(ch.vertices))
    for t, a in zip(tri, area):
        cnt = max(1, int(round(budget * a / area.sum())))
        m = max(1, int(math.ceil((math.sqrt(8 * cnt + 1) - 1) / 2)))
        bary = [
            ((i + 1.0 / 3.0) / m, (j + 1.0 / 3.0) / m)
            for i in range(m)
            for j in range(m - i)
        ]
        b = np.array(bary)
        out.append(t[0] + b[:, :1] * (t[1] - t[0]) + b[:, 1:] * (t[2] - t[0]))
    p = np.concatenate(out)
    return SurfaceSamples(p, np.full(len(p), -1), np.zeros(len(p)))


def surface_samples(geom: Geometry, n: int = DEFAULT_SURFACE_SAMPLES) -> SurfaceSamples:
    """Deterministic stratified surface samples in the canonical frame: corners
    and edges plus area-proportional face lattices."""
    if geom.hull is None:
        return _box_samples(tuple(float(v) for v in geom.box), n)
    return _hull_samples(tuple(map(tuple, geom.hull)), n)


# --- penetration ------------------------------------------------------------------

def _directed_depth(a: ObjectInstance, b: ObjectInstance, n: int, refine: bool, mode: str) -> float:
    samples = surface_samples(b.geometry, n)
    s = np.asarray(b.pose.s)
    rot = b.pose.rotation
    t = np.asarray(b.pose.t)
    local = samples.points * s  # scaled canonical frame of b
    vals, _ = object_sdf(a, local @ rot.T + t)
    depth = np.maximum(0.0, -vals)
    if mode == "sum":
        return float(depth.sum())
    best = float(depth.max())
    if not refine or b.geometry.hull is not None:
        return best
    # slide the deepest face samples along their face (projected ascent on a
    # concave piecewise-linear function)
    half = 0.5 * np.asarray(b.geometry.box) * s
    order = np.argsort(-depth)[:8]
    order = order[depth[order] > 0.0]
    if len(order) == 0:
        return best
    p = local[order].copy()
    fixed_axis = samples.face_axis[order]
    cur = depth[order].copy()
    step = np.full(len(p), 0.25 * float(half.max()))
    for _ in range(40):
        v, g = object_sdf(a, p @ rot.T + t)
        g_local = -(g @ rot)  # ascent direction of depth, b frame
        for i, k in enumerate(fixed_axis):
            if k >= 0:
                g_local[i, k] = 0.0
        norm = np.linalg.norm(g_local, axis=1)
        norm[norm == 0] = 1.0
        cand = np.clip(p + step[:, None] * g_local / norm[:, None], -half, half)
        for i, k in enumerate(fixed_axis):
            if k >= 0:
                cand[i, k] = p[i, k]
        cv, _ = object_sdf(a, cand @ rot.T + t)
        cd = np.maximum(0.0, -cv)
        better = cd > cur
        p[better] = cand[better]
        cur[better] = cd[better]
        step[~better] *= 0.5
    return max(best, float(cur.max()))


def aabbs_overlap(a: ObjectInstance, b: ObjectInstance, margin: float = 0.0) -> bool:
    alo, ahi = world_aabb(a)
    blo, bhi = world_aabb(b)
    return bool(np.all(alo - margin <= bhi) and np.all(blo - margin <= ahi))


def penetration_depth(
    a: ObjectInstance,
    b: ObjectInstance,
    n_samples: int = DEFAULT_SURFACE_SAMPLES,
    mode: str = "max",
    refine: bool = True,
) -> float:
    """Symmetrized cross-SDF penetration depth in meters.

    ``d_ab`` is the deepest point of ``b``'s surface inside ``a``; the result is
    ``max(d_ab, d_ba)``. ``mode="sum"`` totals sample depths instead.
    """
    if not aabbs_overlap(a, b):
        return 0.0
    dab = _directed_depth(a, b, n_samples, refine, mode)
    dba = _directed_depth(b, a, n_samples, refine, mode)
    return dab + dba if mode == "sum" else max(dab, dba)


# --- support and static margin --------------------------------------------------

@dataclass(frozen=True, eq=False)
class SupportPolygon:
    vertices: np.ndarray  # (k, 2) in (x, z), CCW

    @property
    def degenerate(self) -> bool:
        return len(self.vertices) < 3

    @property
    def area(self) -> float:
        return 0.0 if self.degenerate else polygon.signed_area(self.vertices)


def support_polygon(
    obj: ObjectInstance,
    surface_height: float = 0.0,
    parent_footprint: np.ndarray | None = None,
    tol: float = CONTACT_TOLERANCE,
) -> SupportPolygon:
    """Convex hull of the vertices at or within ``tol`` above the support
    surface, projected to the floor plane and clipped to the parent footprint."""
    v = world_vertices(obj)
    contact = v[v[:, 1] <= surface_height + tol]
    if len(contact) == 0:
        raise EmptySupportError(f"{obj.id}: no contact with the support surface")
    hull = polygon.convex_hull(contact[:, [0, 2]])
    if parent_footprint is not None:
        parent = np.asarray(parent_footprint, dtype=float)
        if len(hull) >= 3:
            hull = polygon.clip_convex(hull, parent)
            if len(hull) >= 3:
                hull = polygon.convex_hull(hull)
        else:
            keep = polygon.signed_distance_convex(hull, parent) <= 1e-9
            hull = hull[keep]
        if len(hull) == 0:
            raise EmptySupportError(f"{obj.id}: contact lies outside the parent footprint")
    return SupportPolygon(hull)


def com_margin(obj: ObjectInstance, support: SupportPolygon) -> float:
    """Signed distance from the projected center of mass to the support
    polygon boundary; negative inside. Degenerate supports return the unsigned
    distance to the point or segment."""
    c = center_of_mass(obj)[[0, 2]]
    return float(polygon.signed_distance_convex(c[None, :], support.vertices)[0])
