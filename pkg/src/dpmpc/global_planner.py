"""Collision-free waypoint path on the occupancy grid (A* + line-of-sight pruning)."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from dpmpc.occupancy import OccupancyGrid
from dpmpc.trajectory import as_vec3

_OFFSETS = np.array([o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)])
_STEP_LEN = np.linalg.norm(_OFFSETS, axis=1)


@dataclass(frozen=True)
class GridPath:
    """A* result. ``cost`` is in meters; ``points`` are voxel centers."""

    points: list[NDArray[np.float64]]
    cost: float
    reachable: bool
    expanded: int = 0


@dataclass(frozen=True)
class WaypointPath:
    waypoints: tuple[NDArray[np.float64], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        wps = tuple(as_vec3(w, "waypoint") for w in self.waypoints)
        if len(wps) < 2:
            raise ValueError("a waypoint path needs at least 2 waypoints")
        for a, b in zip(wps[:-1], wps[1:]):
            if np.array_equal(a, b):
                raise ValueError(f"consecutive waypoints coincide at {a}")
        object.__setattr__(self, "waypoints", wps)

    def __len__(self) -> int:
        return len(self.waypoints)

    def as_array(self) -> NDArray[np.float64]:
        return np.array(self.waypoints)

    def check_free(self, grid: OccupancyGrid, radius: float) -> None:
        free = grid.spheres_free(self.as_array(), radius)
        if not free.all():
            bad = int(np.flatnonzero(~free)[0])
            raise ValueError(f"waypoint {bad} at {self.waypoints[bad]} is not collision-free at radius {radius}")


def plan_grid_path(grid: OccupancyGrid, start: ArrayLike, goal: ArrayLike, radius: float) -> GridPath:
    """A* over 26-connected voxel centers of the ``radius``-inflated free space.

    Edge costs are Euclidean center distances, the heuristic is the straight
    line to the goal center. Raises ``ValueError`` if the start or goal cell is blocked.
    """
    free = grid.inflated_free(radius)
    dims = np.array(grid.dims)
    s_idx, g_idx = np.array(grid.index_of(start)), np.array(grid.index_of(goal))
    for name, idx in (("start", s_idx), ("goal", g_idx)):
        if np.any(idx < 0) or np.any(idx >= dims) or not free[tuple(idx)]:
            raise ValueError(f"{name} cell {tuple(idx)} is occupied or outside the grid at radius {radius}")

    # pad by one blocked layer so neighbor offsets never leave the array
    padded = np.zeros(dims + 2, dtype=bool)
    padded[1:-1, 1:-1, 1:-1] = free
    pdims = padded.shape
    strides = np.array([pdims[1] * pdims[2], pdims[2], 1])
    flat_free = padded.ravel()
    nb_offsets = (_OFFSETS @ strides).tolist()
    nb_costs = (_STEP_LEN * grid.resolution).tolist()

    def unravel(f: int) -> tuple[int, int, int]:
        i, rem = divmod(f, int(strides[0]))
        j, k = divmod(rem, int(strides[1]))
        return i, j, k

    start_f = int((s_idx + 1) @ strides)
    goal_f = int((g_idx + 1) @ strides)
    goal_ijk = np.array(unravel(goal_f), dtype=float)
    res = grid.resolution

    def heuristic(f: int) -> float:
        i, j, k = unravel(f)
        return res * float(np.sqrt((i - goal_ijk[0]) ** 2 + (j - goal_ijk[1]) ** 2 + (k - goal_ijk[2]) ** 2))

    g_cost = {start_f: 0.0}
    parent = {start_f: -1}
    closed = set()
    counter = itertools.count()
    heap = [(heuristic(start_f), next(counter), start_f)]
    expanded = 0
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal_f:
            break
        closed.add(cur)
        expanded += 1
        gc = g_cost[cur]
        for off, c in zip(nb_offsets, nb_costs):
            nb = cur + off
            if not flat_free[nb] or nb in closed:
                continue
            ng = gc + c
            if ng < g_cost.get(nb, np.inf):
                g_cost[nb] = ng
                parent[nb] = cur
                heapq.heappush(heap, (ng + heuristic(nb), next(counter), nb))
    else:
        return GridPath([], float("inf"), False, expanded)

    cells = []
    f = goal_f
    while f != -1:
        cells.append(np.array(unravel(f)) - 1)
        f = parent[f]
    cells.reverse()
    points = [grid.voxel_centers(c) for c in cells]
    return GridPath(points, g_cost[goal_f], True, expanded)


def segment_free(grid: OccupancyGrid, a: ArrayLike, b: ArrayLike, radius: float) -> bool:
    """Swept-sphere check sampling the segment at no more than half a voxel."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = float(np.linalg.norm(b - a))
    n = max(1, int(np.ceil(length / (0.5 * grid.resolution))))
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    return bool(grid.spheres_free(a + s * (b - a), radius).all())


def prune_waypoints(path: list[ArrayLike], grid: OccupancyGrid, radius: float) -> WaypointPath:
    """Greedy line-of-sight shortcutting; endpoints are always kept."""
    pts = [as_vec3(p, "path point") for p in path]
    if len(pts) <= 2:
        return WaypointPath(tuple(pts))
    kept = [pts[0]]
    anchor = 0
    j = anchor + 2
    while j < len(pts):
        if not segment_free(grid, pts[anchor], pts[j], radius):
            anchor = j - 1
            kept.append(pts[anchor])
        j += 1
    kept.append(pts[-1])
    return WaypointPath(tuple(kept))


def plan_waypoints(grid: OccupancyGrid, start: ArrayLike, goal: ArrayLike, radius: float) -> WaypointPath:
    """Grid search then pruning, with the exact start and goal as endpoints."""
    start, goal = as_vec3(start, "start"), as_vec3(goal, "goal")
    for name, p in (("start", start), ("goal", goal)):
        if not grid.spheres_free(p[None], radius)[0]:
            raise ValueError(f"{name} {p} is not collision-free at radius {radius}")
    gp = plan_grid_path(grid, start, goal, radius)
    if not gp.reachable:
        raise RuntimeError(f"goal {goal} unreachable from {start}")
    pts = [start] + gp.points[1:-1] + [goal] if len(gp.points) > 2 else [start, goal]
    return prune_waypoints(pts, grid, radius)
