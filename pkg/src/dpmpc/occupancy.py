"""Dense voxel occupancy grid with sphere collision queries.

Queries test voxel *centers*: a sphere is free when no occupied voxel center
lies within its radius and its center is inside the mapped volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.spatial import cKDTree

from dpmpc.trajectory import SampledTrajectory, as_vec3

DEFAULT_ROBOT_RADIUS = 0.3


@dataclass(frozen=True)
class StaticBox:
    center: NDArray[np.float64]
    half_extents: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", as_vec3(self.center, "box center"))
        h = as_vec3(self.half_extents, "box half_extents")
        if np.any(h <= 0):
            raise ValueError(f"box half_extents must be positive, got {h}")
        object.__setattr__(self, "half_extents", h)

    def contains(self, points: ArrayLike) -> NDArray[np.bool_]:
        p = np.asarray(points, dtype=float)
        return np.all(np.abs(p - self.center) <= self.half_extents, axis=-1)


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Axis-aligned voxel grid; voxel ``(i, j, k)`` has center ``origin + (idx + 0.5) * resolution``."""

    origin: NDArray[np.float64]
    resolution: float
    cells: NDArray[np.bool_]
    _tree: Optional[cKDTree] = field(init=False, repr=False, default=None)
    _masks: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", as_vec3(self.origin, "origin"))
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 3 or min(cells.shape) < 1:
            raise ValueError(f"cells must be a non-empty 3-D array, got shape {cells.shape}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        occ = np.argwhere(cells)
        if len(occ):
            object.__setattr__(self, "_tree", cKDTree(self.origin + (occ + 0.5) * self.resolution))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.cells.shape)  # type: ignore[return-value]

    @property
    def upper(self) -> NDArray[np.float64]:
        return self.origin + np.array(self.dims) * self.resolution

    @property
    def occupied_count(self) -> int:
        return int(self.cells.sum())

    def voxel_centers(self, indices: ArrayLike) -> NDArray[np.float64]:
        return self.origin + (np.asarray(indices, dtype=float) + 0.5) * self.resolution

    def index_of(self, p: ArrayLike) -> tuple[int, int, int]:
        """Voxel index containing ``p`` (may be out of range)."""
        idx = np.floor((as_vec3(p) - self.origin) / self.resolution).astype(int)
        return tuple(int(i) for i in idx)  # type: ignore[return-value]

    def in_bounds(self, points: ArrayLike) -> NDArray[np.bool_]:
        p = np.asarray(points, dtype=float)
        return np.all((p >= self.origin) & (p <= self.upper), axis=-1)

    def clearance(self, points: ArrayLike) -> NDArray[np.float64]:
        """Distance from each point to the nearest occupied voxel center (``inf`` if none)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self._tree is None:
            return np.full(len(p), np.inf)
        d, _ = self._tree.query(p)
        return np.asarray(d, dtype=float)

    def nearest_occupied(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Distance to and center of the nearest occupied voxel (``inf`` and NaN when the grid is empty)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self._tree is None:
            return np.full(len(p), np.inf), np.full(p.shape, np.nan)
        d, idx = self._tree.query(p)
        return np.asarray(d, dtype=float), self._tree.data[idx]

    def spheres_free(self, points: ArrayLike, radius: float) -> NDArray[np.bool_]:
        """Vectorized :func:`is_sphere_free` over an (M, 3) array."""
        if radius < 0:
            raise ValueError("radius must be non-negative")
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self.in_bounds(p) & (self.clearance(p) > radius)

    @cached_property
    def _center_clearance(self) -> NDArray[np.float64]:
        if not self.cells.any():
            return np.full(self.dims, np.inf)
        return ndimage.distance_transform_edt(~self.cells, sampling=self.resolution)

    def inflated_free(self, radius: float) -> NDArray[np.bool_]:
        """Boolean mask of voxels whose centers pass the sphere test at ``radius`` (cached, read-only)."""
        key = float(radius)
        if key not in self._masks:
            edt = self._center_clearance
            mask = edt > radius
            # EDT and the KD tree round differently on exact ties; defer to the tree there
            ties = np.argwhere(np.abs(edt - radius) <= 1e-9 * max(1.0, radius))
            if len(ties):
                mask[tuple(ties.T)] = self.clearance(self.voxel_centers(ties)) > radius
            mask.setflags(write=False)
            self._masks[key] = mask
        return self._masks[key]

    def axis_free_extent(self, points: ArrayLike, radius: float, max_cells: int) -> NDArray[np.float64]:
        """Free run along each axis direction from the voxel holding each point.

        Returns (P, 3, 2): for axis ``a``, ``[..., a, 0]`` is the distance from
        the voxel center to the last free center towards ``-a`` and
        ``[..., a, 1]`` towards ``+a``, using the ``radius``-inflated mask.
        Runs longer than ``max_cells`` are reported as ``inf``; points whose own
        voxel is blocked get NaN.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        mask = self.inflated_free(radius)
        dims = np.array(self.dims)
        idx = np.floor((p - self.origin) / self.resolution).astype(int)
        out = np.full((len(p), 3, 2), np.inf)
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        own = np.zeros(len(p), dtype=bool)
        own[inside] = mask[tuple(idx[inside].T)]
        out[~own] = np.nan
        steps = np.arange(1, max_cells + 1)
        for a in range(3):
            for side, sign in enumerate((-1, 1)):
                cells = np.repeat(idx[:, None, :], max_cells, axis=1)
                cells[:, :, a] += sign * steps[None, :]
                ok = np.all((cells >= 0) & (cells < dims), axis=2)
                free = np.zeros(ok.shape, dtype=bool)
                free[ok] = mask[tuple(cells[ok].T)]
                blocked = ~free
                hit = blocked.any(axis=1) & own
                first = np.argmax(blocked, axis=1)  # index of the first blocked cell (m - 1)
                out[hit, a, side] = first[hit] * self.resolution
        return out


def build_grid(
    boxes: Iterable[StaticBox],
    bounds: tuple[ArrayLike, ArrayLike],
    resolution: float,
) -> OccupancyGrid:
    """Rasterize ``boxes`` into a grid covering ``bounds``; a voxel is occupied when its center is in a box."""
    lo, hi = as_vec3(bounds[0], "bounds min"), as_vec3(bounds[1], "bounds max")
    if np.any(hi <= lo):
        raise ValueError(f"empty bounds: min {lo} must be < max {hi} componentwise")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    dims = np.maximum(1, np.ceil((hi - lo) / resolution - 1e-9).astype(int))
    cells = np.zeros(dims, dtype=bool)
    axes = [lo[k] + (np.arange(dims[k]) + 0.5) * resolution for k in range(3)]
    for box in boxes:
        sel = []
        for k in range(3):
            inside = np.abs(axes[k] - box.center[k]) <= box.half_extents[k]
            sel.append(inside)
        cells |= sel[0][:, None, None] & sel[1][None, :, None] & sel[2][None, None, :]
    return OccupancyGrid(lo, float(resolution), cells)


def is_sphere_free(grid: OccupancyGrid, center: ArrayLike, radius: float) -> bool:
    return bool(grid.spheres_free(as_vec3(center, "center")[None, :], radius)[0])


def first_collision(grid: OccupancyGrid, st: SampledTrajectory, radius: float) -> Optional[int]:
    """Smallest sample index whose sphere check fails, or ``None``."""
    if len(st) == 0:
        raise ValueError("empty sampled trajectory")
    bad = np.flatnonzero(~grid.spheres_free(st.positions, radius))
    return int(bad[0]) if len(bad) else None


def first_collision_points(grid: OccupancyGrid, points: ArrayLike, radius: float) -> Optional[int]:
    bad = np.flatnonzero(~grid.spheres_free(points, radius))
    return int(bad[0]) if len(bad) else None
