"""Floor-plane occupancy rasterization and A* reachability."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from . import polygon
from .geometry import world_vertices
from .scene import Scene

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class OccupancyMap:
    """Boolean grid over the floor plane; ``cells[i, j]`` covers the square with
    center ``origin + ((i + 0.5), (j + 0.5)) * cell_size`` in (x, z)."""

    cell_size: float
    dims: tuple[int, int]
    cells: np.ndarray  # True = blocked
    origin: tuple[float, float]

    def centers(self) -> np.ndarray:
        ix, iz = np.meshgrid(np.arange(self.dims[0]), np.arange(self.dims[1]), indexing="ij")
        return np.stack(
            [self.origin[0] + (ix + 0.5) * self.cell_size, self.origin[1] + (iz + 0.5) * self.cell_size],
            axis=-1,
        )

    def cell_center(self, ij) -> tuple[float, float]:
        return (
            self.origin[0] + (ij[0] + 0.5) * self.cell_size,
            self.origin[1] + (ij[1] + 0.5) * self.cell_size,
        )

    @property
    def free_count(self) -> int:
        return int((~self.cells).sum())


@dataclass(frozen=True)
class ReachConfig:
    num_pairs: int = 100
    seed: int = 0
    cell_size: float = 0.05
    inflation_radius: float = 0.3
    agent_height: float = 1.5

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be at least 1")
        if not self.cell_size > 0 or self.inflation_radius < 0 or not self.agent_height > 0:
            raise ValueError("cell_size and agent_height must be positive, inflation non-negative")


@dataclass(frozen=True)
class ReachPair:
    start: tuple[int, int]
    goal: tuple[int, int]
    reachable: bool


@dataclass(frozen=True, eq=False)
class ReachResult:
    phi: float
    pairs: tuple[ReachPair, ...]
    occupancy: OccupancyMap


def rasterize(
    scene: Scene,
    cell_size: float = 0.05,
    inflation_radius: float = 0.3,
    agent_height: float = 1.5,
) -> OccupancyMap:
    """Blocked cells: outside the room bounds, crossed by a wall, or whose center
    lies within ``inflation_radius`` of the footprint of an object reaching into
    the height band ``[0, agent_height]``."""
    bounds = np.asarray(scene.room.bounds, dtype=float)
    lo = bounds.min(axis=0) - cell_size
    hi = bounds.max(axis=0) + cell_size
    dims = tuple(int(math.ceil((hi[k] - lo[k]) / cell_size - 1e-9)) for k in range(2))
    omap = OccupancyMap(cell_size, dims, np.zeros(dims, dtype=bool), (float(lo[0]), float(lo[1])))  # type: ignore[arg-type]
    centers = omap.centers()
    flat = centers.reshape(-1, 2)
    cells = ~polygon.point_in_polygon(flat, bounds).reshape(dims)
    half = 0.5 * cell_size * (1.0 + 1e-9)
    for w in scene.room.walls:
        cells |= (polygon.points_segment_distance(flat, w.a, w.b) <= half).reshape(dims)
    for obj in scene.objects:
        v = world_vertices(obj)
        if v[:, 1].min() > agent_height or v[:, 1].max() < 0.0:
            continue
        fp = polygon.convex_hull(v[:, [0, 2]])
        fmin = fp.min(axis=0) - inflation_radius - cell_size
        fmax = fp.max(axis=0) + inflation_radius + cell_size
        i0 = max(0, int(math.floor((fmin[0] - lo[0]) / cell_size)))
        i1 = min(dims[0], int(math.ceil((fmax[0] - lo[0]) / cell_size)) + 1)
        j0 = max(0, int(math.floor((fmin[1] - lo[1]) / cell_size)))
        j1 = min(dims[1], int(math.ceil((fmax[1] - lo[1]) / cell_size)) + 1)
        if i0 >= i1 or j0 >= j1:
            continue
        sub = centers[i0:i1, j0:j1].reshape(-1, 2)
        d = polygon.signed_distance_convex(sub, fp)
        cells[i0:i1, j0:j1] |= (d <= inflation_radius + 1e-12).reshape(i1 - i0, j1 - j0)
    return OccupancyMap(cell_size, dims, cells, omap.origin)  # type: ignore[arg-type]


@numba.njit(cache=True)
def _astar_kernel(blocked, si, sj, gi, gj, closed_out):
    """Returns the path cost in cell units, or -1 when no path exists. On
    failure ``closed_out`` marks every cell expanded (the start's component)."""
    nx, nz = blocked.shape
    n = nx * nz
    g = np.full(n, np.inf)
    closed = np.zeros(n, dtype=np.bool_)
    cap = 16 * n + 16
    heap_f = np.empty(cap)
    heap_c = np.empty(cap, dtype=np.int64)
    heap_i = np.empty(cap, dtype=np.int64)
    size = 0
    counter = 0
    s = si * nz + sj
    goal = gi * nz + gj
    g[s] = 0.0
    r2 = math.sqrt(2.0)
    dx0 = abs(si - gi)
    dz0 = abs(sj - gj)
    heap_f[0] = (dx0 + dz0) + (r2 - 2.0) * min(dx0, dz0)
    heap_c[0] = 0
    heap_i[0] = s
    size = 1
    counter = 1
    di = np.array([1, -1, 0, 0, 1, 1, -1, -1])
    dj = np.array([0, 0, 1, -1, 1, -1, 1, -1])
    while size > 0:
        # pop min (f, insertion counter)
        cur = heap_i[0]
        size -= 1
        if size > 0:
            lf = heap_f[size]
            lc = heap_c[size]
            li = heap_i[size]
            k = 0
            while True:
                c = 2 * k + 1
                if c >= size:
                    break
                if c + 1 < size and (heap_f[c + 1] < heap_f[c] or (heap_f[c + 1] == heap_f[c] and heap_c[c + 1] < heap_c[c])):
                    c += 1
                if heap_f[c] < lf or (heap_f[c] == lf and heap_c[c] < lc):
                    heap_f[k] = heap_f[c]
                    heap_c[k] = heap_c[c]
                    heap_i[k] = heap_i[c]
                    k = c
                else:
                    break
            heap_f[k] = lf
            heap_c[k] = lc
            heap_i[k] = li
        if closed[cur]:
            continue
        closed[cur] = True
        if cur == goal:
            return g[cur]
        ci = cur // nz
        cj = cur - ci * nz
        for d in range(8):
            ni = ci + di[d]
            nj = cj + dj[d]
            if ni < 0 or nj < 0 or ni >= nx or nj >= nz or blocked[ni, nj]:
                continue
            if d >= 4:
                if blocked[ci + di[d], cj] or blocked[ci, cj + dj[d]]:
                    continue
                step = r2
            else:
                step = 1.0
            nb = ni * nz + nj
            if closed[nb]:
                continue
            ng = g[cur] + step
            if ng < g[nb]:
                g[nb] = ng
                ddx = abs(ni - gi)
                ddz = abs(nj - gj)
                f = ng + (ddx + ddz) + (r2 - 2.0) * min(ddx, ddz)
                if size >= cap:
                    return -2.0
                k = size
                size += 1
                while k > 0:
                    p = (k - 1) // 2
                    if heap_f[p] > f or (heap_f[p] == f and heap_c[p] > counter):
                        heap_f[k] = heap_f[p]
                        heap_c[k] = heap_c[p]
                        heap_i[k] = heap_i[p]
                        k = p
                    else:
                        break
                heap_f[k] = f
                heap_c[k] = counter
                heap_i[k] = nb
                counter += 1
    for idx in range(n):
        if closed[idx]:
            closed_out[idx // nz, idx - (idx // nz) * nz] = True
    return -1.0


def astar(blocked: np.ndarray, start, goal) -> float | None:
    """Shortest 8-connected path cost in cell units (diagonals cost sqrt 2, no
    corner cutting past blocked orthogonal neighbors); None when unreachable."""
    blocked = np.ascontiguousarray(blocked, dtype=np.bool_)
    if blocked[tuple(start)] or blocked[tuple(goal)]:
        return None
    scratch = np.zeros(blocked.shape, dtype=np.bool_)
    cost = _astar_kernel(blocked, int(start[0]), int(start[1]), int(goal[0]), int(goal[1]), scratch)
    if cost == -2.0:
        raise RuntimeError("A* open list overflow")
    return None if cost < 0 else float(cost)


def reachability(scene: Scene, config: ReachConfig = ReachConfig(), occupancy: OccupancyMap | None = None) -> ReachResult:
    """Fraction of sampled free-cell pairs with no A* path."""
    omap = occupancy or rasterize(scene, config.cell_size, config.inflation_radius, config.agent_height)
    blocked = np.ascontiguousarray(omap.cells)
    free = np.flatnonzero(~blocked.ravel())
    if len(free) < 2:
        warnings.warn("fewer than two free cells; every pair counts as unreachable", stacklevel=2)
        return ReachResult(1.0, (), omap)
    rng = np.random.default_rng(config.seed)
    nz = blocked.shape[1]
    # regions fully explored by a failed search, labeled by search index
    region = np.full(blocked.shape, -1, dtype=np.int64)
    pairs = []
    failures = 0
    for _ in range(config.num_pairs):
        a, b = rng.choice(len(free), size=2, replace=False)
        s = (int(free[a] // nz), int(free[a] % nz))
        t = (int(free[b] // nz), int(free[b] % nz))
        rs, rt = region[s], region[t]
        if rs >= 0 or rt >= 0:
            ok = bool(rs == rt)
        else:
            scratch = np.zeros(blocked.shape, dtype=np.bool_)
            cost = _astar_kernel(blocked, s[0], s[1], t[0], t[1], scratch)
            if cost == -2.0:
                raise RuntimeError("A* open list overflow")
            ok = cost >= 0
            if not ok:
                region[scratch] = int(region.max()) + 1
        failures += not ok
        pairs.append(ReachPair(s, t, ok))
    return ReachResult(failures / config.num_pairs, tuple(pairs), omap)


def write_pgm(omap: OccupancyMap, path: str | Path) -> None:
    """Binary PGM (P5): one row per z cell, free = 255, blocked = 0."""
    img = np.where(omap.cells.T, 0, 255).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + img.tobytes())
    tmp.replace(path)
