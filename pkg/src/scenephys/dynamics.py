"""Short-horizon rigid-body settle simulation for the dynamic-stability test.

Bodies are boxes (or convex hulls) with uniform-box inertia at their world
extents. Contacts are generated from each body's corner points, plus points
spaced along its edges so that edge-on-edge support is represented, against the
floor plane, the wall segments, and the other bodies' signed distance fields,
then resolved with a sequential-impulse solver (Coulomb friction, zero
restitution, warm starting, speculative contacts).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.spatial import ConvexHull

from .geometry import _hull_planes, canonical_centroid, canonical_vertices
from .scene import Scene
from .transforms import quat_to_matrix

BLOWUP_SPEED = 100.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 120.0
    horizon: float = 2.0
    gravity: float = 9.81
    restitution: float = 0.0
    friction_mu: float = 0.5
    tip_threshold: float = 0.26
    slide_threshold: float = 0.05
    settle_speed: float = 0.01
    iterations: int = 8
    seed: int = 0
    nudge_speed: float = 0.0  # optional initial horizontal push, random direction from seed
    angular_damping: float = 8.0  # 1/s; dissipation the point-contact model lacks
    contact_spacing: float = 0.02  # max gap between contact points along an edge (m)

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon >= self.dt:
            raise ValueError("dt must be positive and horizon at least dt")
        if not (self.tip_threshold > 0 and self.slide_threshold > 0 and self.settle_speed > 0):
            raise ValueError("stability thresholds must be positive")
        if not self.contact_spacing > 0:
            raise ValueError("contact_spacing must be positive")
        if self.iterations < 1 or self.friction_mu < 0 or self.restitution < 0 or self.angular_damping < 0:
            raise ValueError("invalid solver parameters")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class BodyState:
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]
    linear_velocity: tuple[float, float, float]
    angular_velocity: tuple[float, float, float]


@dataclass(frozen=True)
class SettleResult:
    unstable: bool
    final_tilt: float
    displacement: float
    final_speed: float
    blew_up: bool
    final_state: BodyState
    diagnostic: str = ""


# --- numba kernel -------------------------------------------------------------

@numba.njit(cache=True)
def _q2m(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1 - 2 * (y * y + z * z)
    m[0, 1] = 2 * (x * y - w * z)
    m[0, 2] = 2 * (x * z + w * y)
    m[1, 0] = 2 * (x * y + w * z)
    m[1, 1] = 1 - 2 * (x * x + z * z)
    m[1, 2] = 2 * (y * z - w * x)
    m[2, 0] = 2 * (x * z - w * y)
    m[2, 1] = 2 * (y * z + w * x)
    m[2, 2] = 1 - 2 * (x * x + y * y)
    return m


@numba.njit(cache=True)
def _body_sdf(lx, ly, lz, is_box, half, planes, nplanes):
    """SDF value and gradient (d, gx, gy, gz) in the body's origin frame."""
    if is_box:
        qx = abs(lx) - half[0]
        qy = abs(ly) - half[1]
        qz = abs(lz) - half[2]
        ox = max(qx, 0.0)
        oy = max(qy, 0.0)
        oz = max(qz, 0.0)
        outside = math.sqrt(ox * ox + oy * oy + oz * oz)
        sx = 1.0 if lx >= 0 else -1.0
        sy = 1.0 if ly >= 0 else -1.0
        sz = 1.0 if lz >= 0 else -1.0
        if outside > 0:
            return outside, ox / outside * sx, oy / outside * sy, oz / outside * sz
        if qx >= qy and qx >= qz:
            return qx, sx, 0.0, 0.0
        if qy >= qz:
            return qy, 0.0, sy, 0.0
        return qz, 0.0, 0.0, sz
    best = -1e300
    bi = 0
    for p in range(nplanes):
        d = planes[p, 0] * lx + planes[p, 1] * ly + planes[p, 2] * lz + planes[p, 3]
        if d > best:
            best = d
            bi = p
    return best, planes[bi, 0], planes[bi, 1], planes[bi, 2]


@numba.njit(cache=True, inline="always")
def _rel_vel(c, axis, c_i, c_j, c_dir, c_ai, c_aj, vel, omega):
    i = c_i[c]
    j = c_j[c]
    v = 0.0
    for m in range(3):
        v += vel[i, m] * c_dir[c, axis, m] + omega[i, m] * c_ai[c, axis, m]
    if j >= 0:
        for m in range(3):
            v -= vel[j, m] * c_dir[c, axis, m] + omega[j, m] * c_aj[c, axis, m]
    return v


@numba.njit(cache=True, inline="always")
def _apply(c, axis, lam, c_i, c_j, c_dir, c_wi, c_wj, inv_mass, vel, omega):
    i = c_i[c]
    j = c_j[c]
    for m in range(3):
        vel[i, m] += inv_mass[i] * lam * c_dir[c, axis, m]
        omega[i, m] += lam * c_wi[c, axis, m]
    if j >= 0:
        for m in range(3):
            vel[j, m] -= inv_mass[j] * lam * c_dir[c, axis, m]
            omega[j, m] -= lam * c_wj[c, axis, m]


@numba.njit(cache=True)
def _simulate(pos, quat, vel, omega, mass, inertia_body, com_local, verts, nverts, is_box, half,
              planes, nplanes, walls, dt, steps, gravity, mu, iterations, damping, record, traj):
    n = pos.shape[0]
    vmax = verts.shape[1]
    nw = walls.shape[0]
    ntarget = 1 + nw + n
    cap = 16
    for i in range(n):
        cap += nverts[i] * ntarget
    prev_key = np.empty(0, dtype=np.int64)
    prev_lam = np.empty((0, 3))
    c_i = np.empty(cap, dtype=np.int64)
    c_j = np.empty(cap, dtype=np.int64)
    c_key = np.empty(cap, dtype=np.int64)
    c_n = np.empty((cap, 3))
    c_r = np.zeros((cap, 2, 3))  # lever arms from the centers of body i and body j
    c_d = np.empty(cap)
    c_dir = np.empty((cap, 3, 3))  # normal, tangent 1, tangent 2
    c_ai = np.empty((cap, 3, 3))  # r_i x dir
    c_aj = np.zeros((cap, 3, 3))
    c_wi = np.empty((cap, 3, 3))  # world inverse inertia @ (r_i x dir)
    c_wj = np.zeros((cap, 3, 3))
    c_lam = np.empty((cap, 3))
    c_k = np.empty((cap, 3))
    inv_mass = 1.0 / mass
    radius = np.zeros(n)
    for i in range(n):
        for k in range(nverts[i]):
            r = math.sqrt(verts[i, k, 0] ** 2 + verts[i, k, 1] ** 2 + verts[i, k, 2] ** 2)
            if r > radius[i]:
                radius[i] = r
    blew = np.zeros(n, dtype=np.bool_)
    energy = np.zeros(steps + 1)
    rot = np.empty((n, 3, 3))
    inv_iw = np.empty((n, 3, 3))
    near = np.empty(n, dtype=np.int64)
    wp = np.empty((n, vmax, 3))  # contact point offsets from the body center, world axes

    for step in range(steps + 1):
        for i in range(n):
            rot[i] = _q2m(quat[i])
            ib = np.diag(1.0 / inertia_body[i])
            inv_iw[i] = rot[i] @ ib @ rot[i].T
        # mechanical energy bookkeeping
        e = 0.0
        for i in range(n):
            iw = rot[i] @ np.diag(inertia_body[i]) @ rot[i].T
            e += 0.5 * mass[i] * (vel[i] @ vel[i]) + 0.5 * (omega[i] @ (iw @ omega[i])) + mass[i] * gravity * pos[i, 1]
        energy[step] = e
        if record:
            for i in range(n):
                traj[step, i, 0:3] = pos[i]
                traj[step, i, 3:7] = quat[i]
                traj[step, i, 7:10] = vel[i]
                traj[step, i, 10:13] = omega[i]
        if step == steps:
            break

        # gravity
        for i in range(n):
            vel[i, 1] -= gravity * dt

        for i in range(n):
            R = rot[i]
            for k in range(nverts[i]):
                vx = verts[i, k, 0]
                vy = verts[i, k, 1]
                vz = verts[i, k, 2]
                wp[i, k, 0] = R[0, 0] * vx + R[0, 1] * vy + R[0, 2] * vz
                wp[i, k, 1] = R[1, 0] * vx + R[1, 1] * vy + R[1, 2] * vz
                wp[i, k, 2] = R[2, 0] * vx + R[2, 1] * vy + R[2, 2] * vz

        # contact generation; keys increase monotonically in generation order
        nc = 0
        for i in range(n):
            speed_i = math.sqrt(vel[i] @ vel[i]) + math.sqrt(omega[i] @ omega[i]) * radius[i]
            margin = max(0.02, 2.0 * speed_i * dt)
            nnear = 0
            for j in range(n):
                if j != i:
                    dx = pos[i, 0] - pos[j, 0]
                    dy = pos[i, 1] - pos[j, 1]
                    dz = pos[i, 2] - pos[j, 2]
                    if math.sqrt(dx * dx + dy * dy + dz * dz) <= radius[i] + radius[j] + margin:
                        near[nnear] = j
                        nnear += 1
            for k in range(nverts[i]):
                rx = wp[i, k, 0]
                ry = wp[i, k, 1]
                rz = wp[i, k, 2]
                px = pos[i, 0] + rx
                py = pos[i, 1] + ry
                pz = pos[i, 2] + rz
                base = (i * vmax + k) * ntarget
                # floor
                if py < margin:
                    c_i[nc] = i
                    c_j[nc] = -1
                    c_key[nc] = base
                    c_n[nc, 0] = 0.0
                    c_n[nc, 1] = 1.0
                    c_n[nc, 2] = 0.0
                    c_r[nc, 0, 0] = rx
                    c_r[nc, 0, 1] = ry
                    c_r[nc, 0, 2] = rz
                    c_d[nc] = py
                    nc += 1
                # walls: vertical half-planes restricted to the segment span
                for w in range(nw):
                    if py > walls[w, 4]:
                        continue
                    ax = walls[w, 0]
                    az = walls[w, 1]
                    ex = walls[w, 2] - ax
                    ez = walls[w, 3] - az
                    ll = math.sqrt(ex * ex + ez * ez)
                    if ll == 0.0:
                        continue
                    u = ((px - ax) * ex + (pz - az) * ez) / (ll * ll)
                    if u < 0.0 or u > 1.0:
                        continue
                    nx_ = -ez / ll
                    nz_ = ex / ll
                    side = (pos[i, 0] - ax) * nx_ + (pos[i, 2] - az) * nz_
                    if side < 0:
                        nx_ = -nx_
                        nz_ = -nz_
                    d = (px - ax) * nx_ + (pz - az) * nz_
                    if d < margin:
                        c_i[nc] = i
                        c_j[nc] = -1
                        c_key[nc] = base + 1 + w
                        c_n[nc, 0] = nx_
                        c_n[nc, 1] = 0.0
                        c_n[nc, 2] = nz_
                        c_r[nc, 0, 0] = rx
                        c_r[nc, 0, 1] = ry
                        c_r[nc, 0, 2] = rz
                        c_d[nc] = d
                        nc += 1
                # other bodies
                for jj in range(nnear):
                    j = near[jj]
                    dx = px - pos[j, 0]
                    dy = py - pos[j, 1]
                    dz = pz - pos[j, 2]
                    if math.sqrt(dx * dx + dy * dy + dz * dz) > radius[j] + margin:
                        continue
                    Rj = rot[j]
                    lx = Rj[0, 0] * dx + Rj[1, 0] * dy + Rj[2, 0] * dz + com_local[j, 0]
                    ly = Rj[0, 1] * dx + Rj[1, 1] * dy + Rj[2, 1] * dz + com_local[j, 1]
                    lz = Rj[0, 2] * dx + Rj[1, 2] * dy + Rj[2, 2] * dz + com_local[j, 2]
                    d, gx, gy, gz = _body_sdf(lx, ly, lz, is_box[j], half[j], planes[j], nplanes[j])
                    if d < margin:
                        c_i[nc] = i
                        c_j[nc] = j
                        c_key[nc] = base + 1 + nw + j
                        c_n[nc, 0] = Rj[0, 0] * gx + Rj[0, 1] * gy + Rj[0, 2] * gz
                        c_n[nc, 1] = Rj[1, 0] * gx + Rj[1, 1] * gy + Rj[1, 2] * gz
                        c_n[nc, 2] = Rj[2, 0] * gx + Rj[2, 1] * gy + Rj[2, 2] * gz
                        c_r[nc, 0, 0] = rx
                        c_r[nc, 0, 1] = ry
                        c_r[nc, 0, 2] = rz
                        c_r[nc, 1, 0] = dx
                        c_r[nc, 1, 1] = dy
                        c_r[nc, 1, 2] = dz
                        c_d[nc] = d
                        nc += 1

        # tangent frames, Jacobians, effective masses, warm start
        for c in range(nc):
            nx_ = c_n[c, 0]
            ny_ = c_n[c, 1]
            nz_ = c_n[c, 2]
            if abs(nx_) < 0.9:  # t1 = n x (1, 0, 0)
                t1x, t1y, t1z = 0.0, nz_, -ny_
            else:  # t1 = n x (0, 1, 0)
                t1x, t1y, t1z = -nz_, 0.0, nx_
            tl = math.sqrt(t1x * t1x + t1y * t1y + t1z * t1z)
            t1x /= tl
            t1y /= tl
            t1z /= tl
            c_dir[c, 0, 0] = nx_
            c_dir[c, 0, 1] = ny_
            c_dir[c, 0, 2] = nz_
            c_dir[c, 1, 0] = t1x
            c_dir[c, 1, 1] = t1y
            c_dir[c, 1, 2] = t1z
            c_dir[c, 2, 0] = ny_ * t1z - nz_ * t1y
            c_dir[c, 2, 1] = nz_ * t1x - nx_ * t1z
            c_dir[c, 2, 2] = nx_ * t1y - ny_ * t1x
            i = c_i[c]
            j = c_j[c]
            for axis in range(3):
                kk = inv_mass[i]
                if j >= 0:
                    kk += inv_mass[j]
                for side in range(2 if j >= 0 else 1):
                    b = i if side == 0 else j
                    rx = c_r[c, side, 0]
                    ry = c_r[c, side, 1]
                    rz = c_r[c, side, 2]
                    ux = c_dir[c, axis, 0]
                    uy = c_dir[c, axis, 1]
                    uz = c_dir[c, axis, 2]
                    ax = ry * uz - rz * uy
                    ay = rz * ux - rx * uz
                    az = rx * uy - ry * ux
                    M = inv_iw[b]
                    wx = M[0, 0] * ax + M[0, 1] * ay + M[0, 2] * az
                    wy = M[1, 0] * ax + M[1, 1] * ay + M[1, 2] * az
                    wz = M[2, 0] * ax + M[2, 1] * ay + M[2, 2] * az
                    if side == 0:
                        c_ai[c, axis, 0] = ax
                        c_ai[c, axis, 1] = ay
                        c_ai[c, axis, 2] = az
                        c_wi[c, axis, 0] = wx
                        c_wi[c, axis, 1] = wy
                        c_wi[c, axis, 2] = wz
                    else:
                        c_aj[c, axis, 0] = ax
                        c_aj[c, axis, 1] = ay
                        c_aj[c, axis, 2] = az
                        c_wj[c, axis, 0] = wx
                        c_wj[c, axis, 1] = wy
                        c_wj[c, axis, 2] = wz
                    kk += ax * wx + ay * wy + az * wz
                c_k[c, axis] = 1.0 / kk
            c_lam[c, 0] = 0.0
            c_lam[c, 1] = 0.0
            c_lam[c, 2] = 0.0
            if len(prev_key) > 0:
                pk = np.searchsorted(prev_key, c_key[c])
                if pk < len(prev_key) and prev_key[pk] == c_key[c]:
                    for axis in range(3):
                        c_lam[c, axis] = prev_lam[pk, axis]
            for axis in range(3):
                _apply(c, axis, c_lam[c, axis], c_i, c_j, c_dir, c_wi, c_wj, inv_mass, vel, omega)

        # sequential impulses: the normal first, then friction on both tangents
        # (each recomputing the relative velocity), clamped to the Coulomb box
        for _ in range(iterations):
            for c in range(nc):
                d = c_d[c]
                if d > 0.0:
                    target = -d / dt
                else:
                    target = min(0.2 * max(0.0, -d - 0.002) / dt, 0.5)
                vn = _rel_vel(c, 0, c_i, c_j, c_dir, c_ai, c_aj, vel, omega)
                old = c_lam[c, 0]
                c_lam[c, 0] = max(0.0, old + (target - vn) * c_k[c, 0])
                _apply(c, 0, c_lam[c, 0] - old, c_i, c_j, c_dir, c_wi, c_wj, inv_mass, vel, omega)
                lim = mu * c_lam[c, 0]
                for axis in range(1, 3):
                    vt = _rel_vel(c, axis, c_i, c_j, c_dir, c_ai, c_aj, vel, omega)
                    old = c_lam[c, axis]
                    c_lam[c, axis] = min(lim, max(-lim, old - vt * c_k[c, axis]))
                    _apply(c, axis, c_lam[c, axis] - old, c_i, c_j, c_dir, c_wi, c_wj, inv_mass, vel, omega)

        prev_key = c_key[:nc].copy()
        prev_lam = c_lam[:nc].copy()

        # integrate
        decay = 1.0 / (1.0 + damping * dt)
        h = 0.5 * dt
        for i in range(n):
            omega[i] *= decay
            pos[i] += vel[i] * dt
            w0 = omega[i, 0]
            w1 = omega[i, 1]
            w2 = omega[i, 2]
            q0 = quat[i, 0]
            q1 = quat[i, 1]
            q2 = quat[i, 2]
            q3 = quat[i, 3]
            n0 = q0 + h * (-w0 * q1 - w1 * q2 - w2 * q3)
            n1 = q1 + h * (w0 * q0 + w1 * q3 - w2 * q2)
            n2 = q2 + h * (-w0 * q3 + w1 * q0 + w2 * q1)
            n3 = q3 + h * (w0 * q2 - w1 * q1 + w2 * q0)
            nq = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2 + n3 * n3)
            quat[i, 0] = n0 / nq
            quat[i, 1] = n1 / nq
            quat[i, 2] = n2 / nq
            quat[i, 3] = n3 / nq
            sp = math.sqrt(vel[i] @ vel[i]) + math.sqrt(w0 * w0 + w1 * w1 + w2 * w2) * radius[i]
            if not (sp < BLOWUP_SPEED):
                blew[i] = True
                vel[i] = 0.0
                omega[i] = 0.0
    return blew, energy


# --- Python wrapper -------------------------------------------------------------

def _edges(v: np.ndarray, is_box: bool) -> list[tuple[int, int]]:
    if is_box:  # corners are ordered by sign pattern; edges differ in one bit
        return [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]
    hull = ConvexHull(v)
    return sorted({tuple(sorted((int(s[a]), int(s[b])))) for s in hull.simplices for a, b in ((0, 1), (1, 2), (0, 2))})


def contact_points(v: np.ndarray, is_box: bool, spacing: float) -> np.ndarray:
    """Corner points followed by interior points on every edge, no two
    consecutive points along an edge farther apart than ``spacing``."""
    pts = [v]
    for a, b in _edges(v, is_box):
        k = int(math.ceil(np.linalg.norm(v[b] - v[a]) / spacing))
        if k > 1:
            t = np.arange(1, k)[:, None] / k
            pts.append(v[a] + t * (v[b] - v[a]))
    return np.concatenate(pts, axis=0)


def _pack(scene: Scene, spacing: float = SimConfig.contact_spacing):
    objs = sorted(scene.objects, key=lambda o: o.id)
    n = len(objs)
    vlists, plist = [], []
    for o in objs:
        s = np.asarray(o.pose.s)
        v = canonical_vertices(o.geometry) * s
        vlists.append(contact_points(v, o.geometry.hull is None, spacing))
        if o.geometry.hull is not None:
            nrm, off = _hull_planes(tuple(map(tuple, v)))
            plist.append(np.concatenate([nrm, off[:, None]], axis=1))
        else:
            plist.append(np.zeros((0, 4)))
    vmax = max(len(v) for v in vlists)
    pmax = max(1, max(len(p) for p in plist))
    verts = np.zeros((n, vmax, 3))
    nverts = np.zeros(n, dtype=np.int64)
    planes = np.zeros((n, pmax, 4))
    nplanes = np.zeros(n, dtype=np.int64)
    pos = np.zeros((n, 3))
    quat = np.zeros((n, 4))
    mass = np.zeros(n)
    inertia = np.zeros((n, 3))
    com_local = np.zeros((n, 3))
    half = np.zeros((n, 3))
    is_box = np.zeros(n, dtype=np.bool_)
    for i, o in enumerate(objs):
        s = np.asarray(o.pose.s)
        ext = np.asarray(o.geometry.box) * s
        c = canonical_centroid(o.geometry) * s
        com_local[i] = c
        verts[i, : len(vlists[i])] = vlists[i] - c
        nverts[i] = len(vlists[i])
        planes[i, : len(plist[i])] = plist[i]
        nplanes[i] = len(plist[i])
        half[i] = 0.5 * ext
        is_box[i] = o.geometry.hull is None
        q = np.asarray(o.pose.q, dtype=float)
        quat[i] = q / np.linalg.norm(q)
        pos[i] = np.asarray(o.pose.t) + quat_to_matrix(quat[i]) @ c
        mass[i] = float(np.prod(ext))
        w2, h2, d2 = ext**2
        inertia[i] = mass[i] / 12.0 * np.array([h2 + d2, w2 + d2, w2 + h2])
    walls = np.array([[w.a[0], w.a[1], w.b[0], w.b[1], w.height] for w in scene.room.walls], dtype=float).reshape(-1, 5)
    return objs, pos, quat, mass, inertia, com_local, verts, nverts, is_box, half, planes, nplanes, walls


def run(scene: Scene, config: SimConfig = SimConfig(), record: bool = False):
    """Low-level entry point; returns ``(objects, initial, final, blew, energy,
    trajectory)`` where states are (pos, quat, vel, omega) arrays."""
    objs, pos, quat, mass, inertia, com_local, verts, nverts, is_box, half, planes, nplanes, walls = _pack(scene, config.contact_spacing)
    n = len(objs)
    vel = np.zeros((n, 3))
    omega = np.zeros((n, 3))
    if config.nudge_speed > 0:
        rng = np.random.default_rng(config.seed)
        ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
        vel[:, 0] = config.nudge_speed * np.cos(ang)
        vel[:, 2] = config.nudge_speed * np.sin(ang)
    initial = (pos.copy(), quat.copy())
    steps = config.steps
    traj = np.zeros((steps + 1 if record else 1, n, 13))
    blew, energy = _simulate(
        pos, quat, vel, omega, mass, inertia, com_local, verts, nverts, is_box, half, planes, nplanes, walls,
        float(config.dt), steps, float(config.gravity), float(config.friction_mu), int(config.iterations),
        float(config.angular_damping),
        record, traj,
    )
    return objs, initial, (pos, quat, vel, omega), blew, energy, (traj if record else None), verts, nverts


def simulate_settle(scene: Scene, config: SimConfig = SimConfig(), trajectory_csv: str | Path | None = None) -> dict[str, SettleResult]:
    """Simulate from rest and classify each object as stable or unstable.

    Unstable iff the body's initially-vertical axis tilts beyond the tip
    threshold, its center of mass slides horizontally beyond the slide
    threshold, any point still moves faster than ``settle_speed`` at the end,
    or the integration blows up.
    """
    if not scene.objects:
        return {}
    objs, (p0, q0), (p1, q1, v1, w1), blew, _, traj, verts, nverts = run(scene, config, trajectory_csv is not None)
    out = {}
    for i, o in enumerate(objs):
        r0 = quat_to_matrix(q0[i])
        r1 = quat_to_matrix(q1[i])
        up_now = r1 @ (r0.T @ np.array([0.0, 1.0, 0.0]))
        tilt = math.acos(min(1.0, max(-1.0, float(up_now[1]))))
        disp = float(np.hypot(p1[i, 0] - p0[i, 0], p1[i, 2] - p0[i, 2]))
        rel = (r1 @ verts[i, : nverts[i]].T).T
        speed = float(np.linalg.norm(v1[i] + np.cross(w1[i], rel), axis=1).max())
        reasons = []
        if blew[i]:
            reasons.append("integration blow-up")
        if tilt > config.tip_threshold:
            reasons.append(f"tilt {tilt:.3f} rad")
        if disp > config.slide_threshold:
            reasons.append(f"slide {disp:.3f} m")
        if speed > config.settle_speed:
            reasons.append(f"moving {speed:.3f} m/s")
        state = BodyState(tuple(p1[i]), tuple(q1[i]), tuple(v1[i]), tuple(w1[i]))  # type: ignore[arg-type]
        out[o.id] = SettleResult(bool(reasons), tilt, disp, speed, bool(blew[i]), state, "; ".join(reasons))
    if trajectory_csv is not None:
        write_trajectory(traj, [o.id for o in objs], config.dt, trajectory_csv)
    return out


def write_trajectory(traj: np.ndarray, ids: list[str], dt: float, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "object", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz"])
        for s in range(traj.shape[0]):
            for i, oid in enumerate(ids):
                w.writerow([s, f"{s * dt:.9g}", oid] + [f"{v:.9g}" for v in traj[s, i]])
    tmp.replace(path)
