from collections import deque

import numpy as np
import pytest

from scenephys.navigation import ReachConfig, astar, rasterize, reachability, write_pgm
from scenephys.scene import Scene, Wall

from conftest import on_floor, room, scene


def bfs_reachable(blocked, start, goal):
    """8-connected flood fill with the same no-corner-cutting rule."""
    if blocked[start] or blocked[goal]:
        return False
    n, m = blocked.shape
    seen = np.zeros_like(blocked)
    seen[start] = True
    queue = deque([start])
    while queue:
        i, j = queue.popleft()
        if (i, j) == goal:
            return True
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if (di or dj) and 0 <= a < n and 0 <= b < m and not blocked[a, b] and not seen[a, b]:
                    if di and dj and (blocked[i + di, j] or blocked[i, j + dj]):
                        continue
                    seen[a, b] = True
                    queue.append((a, b))
    return False


def test_astar_agrees_with_bfs_on_random_maps():
    rng = np.random.default_rng(7)
    disagreements = 0
    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers(10, 40, 2))
        blocked = rng.random(shape) < rng.uniform(0.2, 0.5)
        for _ in range(10):
            s = tuple(int(v) for v in rng.integers(0, shape))
            g = tuple(int(v) for v in rng.integers(0, shape))
            disagreements += (astar(blocked, s, g) is not None) != bfs_reachable(blocked, s, g)
    assert disagreements == 0


def test_astar_cost_on_open_grid_is_octile_distance():
    blocked = np.zeros((20, 20), dtype=bool)
    assert astar(blocked, (0, 0), (5, 3)) == pytest.approx(2 + 3 * np.sqrt(2))


def test_astar_does_not_cut_corners():
    blocked = np.zeros((3, 3), dtype=bool)
    blocked[0, 1] = blocked[1, 0] = True
    assert astar(blocked, (0, 0), (1, 1)) is None


def test_empty_room_is_fully_reachable():
    r = reachability(scene(width=3.0, depth=3.0), ReachConfig(num_pairs=50))
    assert r.phi == 0.0
    assert all(p.reachable for p in r.pairs)


def test_dividing_wall_of_furniture_makes_pairs_unreachable():
    barrier = on_floor("shelf", (0.4, 1.0, 4.0), 0.0, 0.0, category="bookshelf")
    r = reachability(scene(barrier), ReachConfig(num_pairs=200))
    assert 0.3 < r.phi < 0.7
    s = r.occupancy.cell_center(next(p for p in r.pairs if not p.reachable).start)
    g = r.occupancy.cell_center(next(p for p in r.pairs if not p.reachable).goal)
    assert np.sign(s[0]) != np.sign(g[0])


def test_objects_above_agent_height_do_not_block():
    high = on_floor("lamp", (3.0, 0.2, 3.0), 0.0, 0.0, lift=1.8)
    base = rasterize(scene())
    assert np.array_equal(rasterize(scene(high)).cells, base.cells)


def test_inflation_radius_grows_blocked_area():
    s = scene(on_floor("a", (0.5, 0.5, 0.5), 0.0, 0.0))
    small = rasterize(s, inflation_radius=0.1).cells.sum()
    large = rasterize(s, inflation_radius=0.4).cells.sum()
    assert large > small


def test_interior_wall_blocks_cells():
    r = room()
    walled = Scene(type(r)(r.bounds, r.walls + (Wall((0.0, -2.0), (0.0, 2.0)),)), ())
    phi = reachability(walled, ReachConfig(num_pairs=100)).phi
    assert phi > 0.3


def test_reachability_is_deterministic_in_seed():
    s = scene(on_floor("a", (1.0, 1.0, 3.0), 0.5, 0.0))
    a = reachability(s, ReachConfig(seed=3))
    b = reachability(s, ReachConfig(seed=3))
    assert a.pairs == b.pairs and a.phi == b.phi


def test_pgm_dump(tmp_path):
    omap = rasterize(scene(on_floor("a", (1, 1, 1), 0, 0)))
    path = tmp_path / "map.pgm"
    write_pgm(omap, path)
    data = path.read_bytes()
    header = f"P5\n{omap.dims[0]} {omap.dims[1]}\n255\n".encode()
    assert data.startswith(header)
    assert len(data) == len(header) + omap.dims[0] * omap.dims[1]
