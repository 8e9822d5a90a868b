"""Test-time pose optimization: gradient descent on smooth physical energies.

Optimized variables per object: translation ``T``, a yaw delta about world up
applied on top of the initial rotation (``R = R_y(yaw) R0``), and the log of
the per-axis pose scale ``L``. All gradients are analytic.

Energies (unweighted):

* collision: sum over object pairs and surface samples of
  ``softplus(-sdf_other(p))**2`` using each object's SDF grid;
* grounding: squared bottom height for floor objects, squared gap between the
  child's bottom and the parent's top for supported objects;
* anchoring: squared positive part of a log-sum-exp smooth minimum of the
  back-face-center distances to the walls;
* stability: ``softplus(com_margin + offset)**2`` against the support polygon
  (own lowest face for floor objects, the parent footprint for supported ones);
* regularization: squared deviation from the initial parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    CONTACT_TOLERANCE,
    DEFAULT_SURFACE_SAMPLES,
    SdfGrid,
    canonical_centroid,
    canonical_vertices,
    interpolate,
    sdf_from_geometry,
    surface_samples,
)
from .priors import PriorRegistry, default_priors
from .scene import Pose, Scene
from .transforms import matrix_to_quat, quat_to_matrix, yaw_matrix

TERMS = ("col", "grd", "anc", "stb", "reg")


@dataclass(frozen=True)
class TtoConfig:
    lambda_col: float = 10.0
    lambda_grd: float = 5.0
    lambda_anc: float = 1.0
    lambda_stb: float = 2.0
    lambda_reg: float = 0.1
    steps: int = 200
    step_size: float = 0.01
    grad_clip_norm: float = 1.0
    softplus_width: float = 0.01
    anchor_temperature: float = 0.05
    stability_offset: float = 0.02
    log_scale_bound: float = 0.7
    surface_samples: int = DEFAULT_SURFACE_SAMPLES
    contact_tolerance: float = CONTACT_TOLERANCE
    voxel_size: float | None = None  # default: per-object max extent / 32
    truncation: float | None = None  # default: 3 voxels

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("energy weights must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if not (self.step_size > 0 and self.grad_clip_norm > 0 and self.softplus_width > 0
                and self.anchor_temperature > 0 and self.log_scale_bound > 0):
            raise ValueError("step size, clip norm, widths and bounds must be positive")

    @property
    def weights(self) -> dict[str, float]:
        return {"col": self.lambda_col, "grd": self.lambda_grd, "anc": self.lambda_anc,
                "stb": self.lambda_stb, "reg": self.lambda_reg}


@dataclass
class PoseParams:
    """Per-object optimization variables, rows in scene object order."""

    T: np.ndarray  # (N, 3)
    yaw: np.ndarray  # (N,)
    L: np.ndarray  # (N, 3)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.T, self.yaw[:, None], self.L], axis=1)

    @staticmethod
    def from_flat(x: np.ndarray) -> "PoseParams":
        x = np.asarray(x, dtype=float).reshape(-1, 7)
        return PoseParams(x[:, :3].copy(), x[:, 3].copy(), x[:, 4:].copy())

    def copy(self) -> "PoseParams":
        return PoseParams(self.T.copy(), self.yaw.copy(), self.L.copy())

    @staticmethod
    def initial(scene: Scene) -> "PoseParams":
        n = len(scene.objects)
        return PoseParams(
            np.array([o.pose.t for o in scene.objects], dtype=float).reshape(n, 3),
            np.zeros(n),
            np.log(np.array([o.pose.s for o in scene.objects], dtype=float)).reshape(n, 3),
        )


def _softplus(x, w):
    return w * np.logaddexp(0.0, x / w)


def _sigmoid(x, w):
    z = x / w
    return np.exp(-np.logaddexp(0.0, -z))


def _log1pexp(z: float) -> float:
    return z + math.log1p(math.exp(-z)) if z > 0 else math.log1p(math.exp(z))


def _expit(z: float) -> float:
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def _hull_indices(pts: np.ndarray, tol: float = 1e-12) -> list[int]:
    """Indices of the CCW convex hull of a few 2D points (monotone chain);
    duplicates and collinear points are dropped."""
    order = sorted(range(len(pts)), key=lambda k: (pts[k, 0], pts[k, 1]))
    uniq: list[int] = []
    for k in order:
        if not uniq or abs(pts[k, 0] - pts[uniq[-1], 0]) > tol or abs(pts[k, 1] - pts[uniq[-1], 1]) > tol:
            uniq.append(k)
    if len(uniq) <= 2:
        return uniq

    def cross(o, a, b):
        return (pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1]) - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0])

    lower: list[int] = []
    for k in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], k) <= tol:
            lower.pop()
        lower.append(k)
    upper: list[int] = []
    for k in reversed(uniq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], k) <= tol:
            upper.pop()
        upper.append(k)
    hull = lower[:-1] + upper[:-1]
    return hull if len(hull) >= 3 else [uniq[0], uniq[-1]]


def _edge_features(c, a, b):
    """Signed distance ``n.(c - a)`` to the line through a CCW edge and its
    gradients with respect to c, a, b (2D)."""
    e = b - a
    le = math.hypot(e[0], e[1])
    n = np.array([e[1], -e[0]]) / le
    eh = e / le
    ca = c - a
    f = float(n @ ca)
    jt_ca = np.array([-ca[1], ca[0]])  # J^T (c - a) with J e = (e_z, -e_x)
    dn = (jt_ca - eh * f) / le
    return f, n, -n - dn, dn


def polygon_signed_distance(c: np.ndarray, poly: np.ndarray):
    """Signed distance of a 2D point to a CCW convex polygon (negative inside;
    unsigned for 1-2 vertex polygons) with gradients w.r.t. the point and each
    polygon vertex. Returns ``(d, grad_c, grad_poly, feature)``."""
    k = len(poly)
    gp = np.zeros_like(poly)
    if k == 1:
        diff = c - poly[0]
        d = float(np.hypot(*diff))
        g = diff / d if d > 0 else np.zeros(2)
        gp[0] = -g
        return d, g, gp, ("v", 0)
    edges = [(i, (i + 1) % k) for i in range(k)] if k >= 3 else [(0, 1)]
    if k >= 3:
        fs = [_edge_features(c, poly[i], poly[j])[0] for i, j in edges]
        best = int(np.argmax(fs))
        if fs[best] <= 0.0:
            f, gc, ga, gb = _edge_features(c, poly[edges[best][0]], poly[edges[best][1]])
            gp[edges[best][0]] += ga
            gp[edges[best][1]] += gb
            return f, gc, gp, ("in", best)
    # outside (or degenerate): nearest edge or vertex
    best_d, best_feat = math.inf, None
    for idx, (i, j) in enumerate(edges):
        a, b = poly[i], poly[j]
        e = b - a
        t = float((c - a) @ e / (e @ e))
        if t <= 0.0:
            d, feat = float(np.hypot(*(c - a))), ("v", i)
        elif t >= 1.0:
            d, feat = float(np.hypot(*(c - b))), ("v", j)
        else:
            q = a + t * e
            d, feat = float(np.hypot(*(c - q))), ("e", idx)
        if d < best_d - 1e-15:
            best_d, best_feat = d, feat
    kind, idx = best_feat  # type: ignore[misc]
    if kind == "v":
        diff = c - poly[idx]
        g = diff / best_d if best_d > 0 else np.zeros(2)
        gp[idx] = -g
        return best_d, g, gp, ("v", idx)
    i, j = edges[idx]
    f, gc, ga, gb = _edge_features(c, poly[i], poly[j])
    s = 1.0 if f >= 0 else -1.0
    gp[i] += s * ga
    gp[j] += s * gb
    return abs(f), s * gc, gp, ("e", idx)


@dataclass
class _Body:
    verts: np.ndarray
    samples: np.ndarray
    com: np.ndarray
    back: np.ndarray
    grid: SdfGrid
    R0: np.ndarray
    floor: bool
    wall: bool
    parent: int | None


@dataclass
class EnergyResult:
    total: float
    terms: dict[str, float]
    grad: np.ndarray | None = None  # (N, 7)
    signature: tuple | None = None
    term_grads: dict | None = None


class TtoProblem:
    """Precomputed geometry for repeated energy/gradient evaluations."""

    def __init__(self, scene: Scene, config: TtoConfig = TtoConfig(), priors: PriorRegistry | None = None):
        pri = default_priors() if priors is None else priors
        self.scene = scene
        self.config = config
        self.initial = PoseParams.initial(scene)
        ids = {o.id: k for k, o in enumerate(scene.objects)}
        self.bodies: list[_Body] = []
        for o in scene.objects:
            g = o.geometry
            v = canonical_vertices(g)
            grid = g.sdf if g.sdf is not None else sdf_from_geometry(g, config.voxel_size, config.truncation)
            back = np.array([0.5 * (v[:, 0].min() + v[:, 0].max()), 0.5 * (v[:, 1].min() + v[:, 1].max()), v[:, 2].min()])
            parent = ids.get(o.support_parent) if o.support_parent not in (None, "floor", "wall") else None
            prior = pri[o.category]
            self.bodies.append(_Body(
                v, surface_samples(g, config.surface_samples).points, canonical_centroid(g), back, grid,
                quat_to_matrix(o.pose.q), (prior.is_floor_class or o.support_parent == "floor") and parent is None,
                prior.is_wall_class, parent,
            ))
        self.walls = [(np.asarray(w.a, float), np.asarray(w.b, float)) for w in scene.room.walls]
        self.excluded = {(k, b.parent) for k, b in enumerate(self.bodies) if b.parent is not None}
        self.excluded |= {(j, i) for i, j in self.excluded}

    # --- kinematics ---------------------------------------------------------------

    @staticmethod
    def rotations(params: PoseParams, bodies) -> list[np.ndarray]:
        return [yaw_matrix(params.yaw[k]) @ b.R0 for k, b in enumerate(bodies)]

    @staticmethod
    def _world(T, R, S, P):
        return T + (P * S) @ R.T

    @staticmethod
    def _pullback(T, R, S, P, p, g):
        """Sum over rows of ``g . d p / d (T, yaw, L)`` for world points ``p``
        of canonical points ``P``; ``g`` holds world-space gradients per row."""
        P = np.atleast_2d(P)
        p = np.atleast_2d(p)
        g = np.atleast_2d(g)
        r = p - T
        out = np.empty(7)
        out[:3] = g.sum(axis=0)
        out[3] = float((g[:, 0] * r[:, 2] - g[:, 2] * r[:, 0]).sum())
        out[4:] = ((g @ R) * (S * P)).sum(axis=0)
        return out

    # --- energy ----------------------------------------------------------------------

    def evaluate(self, params: PoseParams, grad: bool = True, signature: bool = False) -> EnergyResult:
        cfg = self.config
        bodies = self.bodies
        n = len(bodies)
        Rs = self.rotations(params, bodies)
        Ss = np.exp(params.L)
        Gt = {t: np.zeros((n, 7)) for t in TERMS}
        sig: list = []
        terms = {k: 0.0 for k in TERMS}
        w = cfg.softplus_width

        verts_w = [self._world(params.T[k], Rs[k], Ss[k], b.verts) for k, b in enumerate(bodies)]

        # collision
        if cfg.lambda_col > 0:
            samples_w = [self._world(params.T[k], Rs[k], Ss[k], b.samples) for k, b in enumerate(bodies)]
            lo = np.array([v.min(axis=0) for v in verts_w])
            hi = np.array([v.max(axis=0) for v in verts_w])
            ms = np.exp(params.L.mean(axis=1))
            pad = ms * np.array([b.grid.truncation for b in bodies])
            # near[i, j]: j's box reaches into the padded grid extent of i
            near = np.all((lo[:, None, :] - pad[:, None, None] <= hi[None, :, :])
                          & (lo[None, :, :] <= hi[:, None, :] + pad[:, None, None]), axis=2)
            for i in range(n):  # SDF owner
                mi = float(ms[i])
                for j in range(n):  # sample owner
                    if i == j or (j, i) in self.excluded:
                        continue
                    active = bool(near[i, j])
                    if signature:
                        sig.append(("pair", i, j, active))
                    if not active:
                        continue
                    p = samples_w[j]
                    u = (p - params.T[i]) @ Rs[i]
                    c = u / Ss[i]
                    gval, ggrad, inside = interpolate(bodies[i].grid, c)
                    v = mi * gval
                    spv = _softplus(-v, w)
                    terms["col"] += float((spv**2).sum())
                    if signature:
                        cell = np.floor((c - np.asarray(bodies[i].grid.origin)) / bodies[i].grid.voxel_size).astype(np.int64)
                        cell[~inside] = -1
                        sig.append(("cells", i, j, cell.tobytes()))
                    if not grad:
                        continue
                    de_dv = -2.0 * spv * _sigmoid(-v, w)  # (m,)
                    gw = (mi * ggrad / Ss[i]) @ Rs[i].T  # world gradient of v
                    # sample owner j
                    gp = de_dv[:, None] * gw
                    Gt["col"][j] += self._pullback(params.T[j], Rs[j], Ss[j], bodies[j].samples, p, gp)
                    # sdf owner i: moving i by dT shifts every query point by -dT
                    ri = p - params.T[i]
                    Gt["col"][i, :3] -= gp.sum(axis=0)
                    Gt["col"][i, 3] -= float((gp[:, 0] * ri[:, 2] - gp[:, 2] * ri[:, 0]).sum())
                    dv_dL = mi / 3.0 * gval[:, None] - mi * ggrad * c
                    Gt["col"][i, 4:] += de_dv @ dv_dL

        # grounding and support gap
        if cfg.lambda_grd > 0:
            for k, b in enumerate(bodies):
                if b.floor:
                    kk = int(np.argmin(verts_w[k][:, 1]))
                    h = verts_w[k][kk, 1]
                    if signature:
                        sig.append(("ground", k, kk))
                    terms["grd"] += h * h
                    if grad:
                        Gt["grd"][k] += self._pullback(params.T[k], Rs[k], Ss[k], b.verts[kk], verts_w[k][kk], [0.0, 2.0 * h, 0.0])
                elif b.parent is not None:
                    pj = b.parent
                    kb = int(np.argmin(verts_w[k][:, 1]))
                    kt = int(np.argmax(verts_w[pj][:, 1]))
                    if signature:
                        sig.append(("support", k, kb, kt))
                    gap = verts_w[k][kb, 1] - verts_w[pj][kt, 1]
                    terms["grd"] += gap * gap
                    if grad:
                        gy = [0.0, 2.0 * gap, 0.0]
                        Gt["grd"][k] += self._pullback(params.T[k], Rs[k], Ss[k], b.verts[kb], verts_w[k][kb], gy)
                        Gt["grd"][pj] -= self._pullback(params.T[pj], Rs[pj], Ss[pj], bodies[pj].verts[kt], verts_w[pj][kt], gy)

        # anchoring
        if cfg.lambda_anc > 0 and self.walls:
            tau = cfg.anchor_temperature
            for k, b in enumerate(bodies):
                if not b.wall:
                    continue
                pb = self._world(params.T[k], Rs[k], Ss[k], b.back[None, :])
                q2 = pb[0, [0, 2]]
                ds, dgrads, regions = [], [], []
                for a, bb in self.walls:
                    e = bb - a
                    t = float((q2 - a) @ e / (e @ e))
                    region = 0 if t <= 0 else (2 if t >= 1 else 1)
                    closest = a + min(1.0, max(0.0, t)) * e
                    diff = q2 - closest
                    if region == 1:
                        nrm = np.array([-e[1], e[0]]) / math.hypot(*e)
                        diff = (diff @ nrm) * nrm  # exact perpendicular component
                    dist = math.sqrt(float(diff @ diff) + 1e-18)
                    ds.append(dist)
                    dgrads.append(diff / dist)
                    regions.append(region)
                ds = np.array(ds)
                if signature:
                    sig.append(("anchor", k, tuple(regions)))
                z = -ds / tau
                zmax = z.max()
                lse = zmax + math.log(np.exp(z - zmax).sum())
                smin = -tau * lse
                if smin > 0:
                    terms["anc"] += smin * smin
                    if grad:
                        wts = np.exp(z - lse)
                        g2 = 2.0 * smin * (wts[:, None] * np.array(dgrads)).sum(axis=0)
                        Gt["anc"][k] += self._pullback(params.T[k], Rs[k], Ss[k], b.back, pb, [g2[0], 0.0, g2[1]])

        # stability
        if cfg.lambda_stb > 0:
            for k, b in enumerate(bodies):
                if b.floor:
                    vw = verts_w[k]
                    sel = np.flatnonzero(vw[:, 1] <= vw[:, 1].min() + cfg.contact_tolerance)
                    owner, src = k, sel
                elif b.parent is not None:
                    owner, src = b.parent, np.arange(len(bodies[b.parent].verts))
                else:
                    continue
                hidx = [int(src[h]) for h in _hull_indices(verts_w[owner][src][:, [0, 2]])]
                com = self._world(params.T[k], Rs[k], Ss[k], b.com[None, :])
                d, gc, gpoly, feat = polygon_signed_distance(com[0, [0, 2]], verts_w[owner][hidx][:, [0, 2]])
                if signature:
                    sig.append(("stb", k, tuple(hidx), feat))
                x = d + cfg.stability_offset
                spx = w * _log1pexp(x / w)
                terms["stb"] += spx * spx
                if grad and spx > 0.0:
                    de = 2.0 * spx * _expit(x / w)
                    Gt["stb"][k] += self._pullback(params.T[k], Rs[k], Ss[k], b.com, com, de * np.array([gc[0], 0.0, gc[1]]))
                    gv3 = np.zeros((len(hidx), 3))
                    gv3[:, 0] = de * gpoly[:, 0]
                    gv3[:, 2] = de * gpoly[:, 1]
                    Gt["stb"][owner] += self._pullback(params.T[owner], Rs[owner], Ss[owner], bodies[owner].verts[hidx],
                                                       verts_w[owner][hidx], gv3)

        # regularization
        dT = params.T - self.initial.T
        dL = params.L - self.initial.L
        terms["reg"] = float((dT**2).sum() + (params.yaw**2).sum() + (dL**2).sum())

        wts = cfg.weights
        total = sum(wts[t] * terms[t] for t in TERMS)
        result = EnergyResult(float(total), terms, None, tuple(sig) if signature else None)
        if grad:
            Gt["reg"][:, :3] = 2.0 * dT
            Gt["reg"][:, 3] = 2.0 * params.yaw
            Gt["reg"][:, 4:] = 2.0 * dL
            result.grad = sum(wts[t] * Gt[t] for t in TERMS)
            result.term_grads = Gt
        return result

    def to_scene(self, params: PoseParams) -> Scene:
        """Scene with poses replaced by the given parameters."""
        objs = []
        for k, o in enumerate(self.scene.objects):
            R = yaw_matrix(params.yaw[k]) @ self.bodies[k].R0
            pose = Pose(tuple(float(x) for x in params.T[k]), tuple(float(x) for x in matrix_to_quat(R)),
                        tuple(float(x) for x in np.exp(params.L[k])))
            objs.append(replace(o, pose=pose))
        return self.scene.replace_objects(objs)


@dataclass(frozen=True)
class TtoResult:
    scene: Scene
    params: PoseParams
    trace: tuple[float, ...]
    terms: dict[str, float]
    steps_run: int
    stopped_nonfinite: bool = False


def energy(scene: Scene, params: PoseParams | None = None, config: TtoConfig = TtoConfig(),
           priors: PriorRegistry | None = None) -> tuple[float, dict[str, float]]:
    """Weighted total energy and unweighted per-term values at ``params``
    (initial poses by default)."""
    prob = TtoProblem(scene, config, priors)
    res = prob.evaluate(prob.initial if params is None else params, grad=False)
    return res.total, res.terms


def energy_gradient(scene: Scene, params: PoseParams | None = None, config: TtoConfig = TtoConfig(),
                    priors: PriorRegistry | None = None, clip: bool = True) -> np.ndarray:
    """Analytic gradient of the total energy as an ``(N, 7)`` array with columns
    ``(tx, ty, tz, yaw, log_sx, log_sy, log_sz)``, clipped per object to
    ``grad_clip_norm`` unless ``clip`` is False."""
    prob = TtoProblem(scene, config, priors)
    g = prob.evaluate(prob.initial if params is None else params).grad
    return clip_per_object(g, config.grad_clip_norm) if clip else g


def clip_per_object(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norms = np.linalg.norm(grad, axis=1, keepdims=True)
    factor = np.minimum(1.0, max_norm / np.maximum(norms, 1e-300))
    return grad * factor


def optimize(scene: Scene, config: TtoConfig = TtoConfig(), priors: PriorRegistry | None = None) -> TtoResult:
    """Gradient descent with cosine step decay and per-object gradient clipping.

    The energy trace has ``steps + 1`` entries (the last one at the returned
    parameters). If the energy or gradient becomes non-finite the last finite
    iterate is returned.
    """
    prob = TtoProblem(scene, config, priors)
    params = prob.initial.copy()
    bound = config.log_scale_bound
    trace: list[float] = []
    last = None
    stopped = False
    for k in range(config.steps):
        res = prob.evaluate(params)
        if not (np.isfinite(res.total) and np.all(np.isfinite(res.grad))):
            stopped = True
            break
        trace.append(res.total)
        last = (params.copy(), res)
        lr = config.step_size * 0.5 * (1.0 + math.cos(math.pi * k / config.steps))
        g = clip_per_object(res.grad, config.grad_clip_norm)
        x = params.flat() - lr * g
        params = PoseParams.from_flat(x)
        params.L = np.clip(params.L, -bound, bound)
    else:
        res = prob.evaluate(params, grad=False)
        if np.isfinite(res.total):
            trace.append(res.total)
            last = (params, res)
        else:
            stopped = True
    if last is None:
        params, res = prob.initial, prob.evaluate(prob.initial, grad=False)
    else:
        params, res = last
    return TtoResult(prob.to_scene(params), params, tuple(trace), dict(res.terms), len(trace), stopped)
