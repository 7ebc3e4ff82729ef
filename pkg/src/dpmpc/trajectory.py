"""Piecewise-polynomial trajectories shared by the static and dynamic layers.

Each segment stores monomial coefficients in segment-local time
``tau = t - t_start``; coefficient ``i`` multiplies ``tau**i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from math import factorial
from os import PathLike
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]

KNOT_POSITION_TOL = 1e-9


def as_vec3(p: ArrayLike, name: str = "vector") -> FloatArray:
    """Return ``p`` as a finite float array of shape (3,)."""
    v = np.asarray(p, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v}")
    return v


def derivative_coeffs(coeffs: FloatArray, order: int) -> FloatArray:
    """Differentiate monomial coefficients along the last axis ``order`` times.

    The result keeps the same length; high-order entries become zero.
    """
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[-1]
    out = np.zeros_like(c)
    if order >= n:
        return out
    if order == 0:
        return c.copy()
    i = np.arange(order, n)
    falling = np.array([factorial(k) / factorial(k - order) for k in i])
    out[..., : n - order] = c[..., order:] * falling
    return out


@dataclass(frozen=True)
class PolySegment:
    """One polynomial piece on ``[t_start, t_end]``.

    ``coeffs`` has shape (3, d+1); rows are the x, y, z axes.
    """

    coeffs: FloatArray
    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != 3:
            raise ValueError(f"coeffs must have shape (3, d+1), got {c.shape}")
        if c.shape[1] < 5:
            raise ValueError("polynomial degree must be at least 4")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        if not self.t_end > self.t_start:
            raise ValueError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @classmethod
    def from_axes(cls, cx: ArrayLike, cy: ArrayLike, cz: ArrayLike, t_start: float, t_end: float) -> PolySegment:
        """Build a segment from per-axis coefficient lists (zero-padded to a common length)."""
        rows = [np.asarray(c, dtype=float).reshape(-1) for c in (cx, cy, cz)]
        n = max(5, *(len(r) for r in rows))
        coeffs = np.zeros((3, n))
        for k, r in enumerate(rows):
            coeffs[k, : len(r)] = r
        return cls(coeffs, t_start, t_end)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def coeffs_x(self) -> FloatArray:
        return self.coeffs[0]

    @property
    def coeffs_y(self) -> FloatArray:
        return self.coeffs[1]

    @property
    def coeffs_z(self) -> FloatArray:
        return self.coeffs[2]

    def evaluate(self, t: float, order: int = 0) -> FloatArray:
        tau = t - self.t_start
        c = derivative_coeffs(self.coeffs, order)
        # Horner on each axis
        out = np.zeros(3)
        for i in range(c.shape[1] - 1, -1, -1):
            out = out * tau + c[:, i]
        return out


@dataclass(frozen=True)
class PolyTrajectory:
    """Time-contiguous sequence of :class:`PolySegment`."""

    segments: tuple[PolySegment, ...]
    _knots: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("trajectory needs at least one segment")
        for a, b in zip(segs[:-1], segs[1:]):
            if a.t_end != b.t_start:
                raise ValueError(f"segments not contiguous: {a.t_end} != {b.t_start}")
            gap = np.max(np.abs(a.evaluate(a.t_end) - b.evaluate(b.t_start)))
            if gap > KNOT_POSITION_TOL * max(1.0, np.max(np.abs(b.evaluate(b.t_start)))):
                raise ValueError(f"position discontinuity {gap:.3e} m at t={a.t_end}")
        object.__setattr__(self, "segments", segs)
        knots = np.array([s.t_start for s in segs] + [segs[-1].t_end])
        knots.setflags(write=False)
        object.__setattr__(self, "_knots", knots)

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def t_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def knots(self) -> FloatArray:
        return self._knots

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def segment_index(self, t: float) -> int:
        if not (self.t_start <= t <= self.t_end):
            raise ValueError(f"t={t} outside trajectory domain [{self.t_start}, {self.t_end}]")
        # knot ties go to the later segment
        j = int(np.searchsorted(self._knots, t, side="right")) - 1
        return min(max(j, 0), len(self.segments) - 1)

    def position(self, t: float) -> FloatArray:
        return eval_position(self, t)

    def derivative(self, t: float, order: int) -> FloatArray:
        return eval_derivative(self, t, order)


def eval_position(traj: PolyTrajectory, t: float) -> FloatArray:
    """Position at time ``t``; raises ``ValueError`` outside the domain."""
    return traj.segments[traj.segment_index(t)].evaluate(t)


def eval_derivative(traj: PolyTrajectory, t: float, order: int) -> FloatArray:
    """Analytic ``order``-th time derivative at ``t`` (zero beyond the degree)."""
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    seg = traj.segments[traj.segment_index(t)]
    if order > seg.degree:
        return np.zeros(3)
    return seg.evaluate(t, order)


def clamped_time(traj: PolyTrajectory, t: float) -> float:
    return min(max(t, traj.t_start), traj.t_end)


@dataclass(frozen=True)
class SampledTrajectory:
    """Trajectory positions at a fixed time spacing with cumulative polyline length."""

    times: FloatArray
    positions: FloatArray
    cumulative_arc: FloatArray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        s = np.asarray(self.cumulative_arc, dtype=float)
        if not (len(t) == len(p) == len(s)):
            raise ValueError("times, positions and cumulative_arc must have equal length")
        if len(s) and (s[0] != 0.0 or np.any(np.diff(s) < 0)):
            raise ValueError("cumulative_arc must start at 0 and be nondecreasing")
        for name, arr in (("times", t), ("positions", p), ("cumulative_arc", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_points(cls, times: ArrayLike, positions: ArrayLike) -> SampledTrajectory:
        p = np.asarray(positions, dtype=float).reshape(-1, 3)
        steps = np.linalg.norm(np.diff(p, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(steps)])
        return cls(np.asarray(times, dtype=float), p, arc)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def length(self) -> float:
        return float(self.cumulative_arc[-1])


def sample_times(t0: float, t1: float, dt: float) -> FloatArray:
    """``t0, t0+dt, ...`` strictly before ``t1``, then ``t1`` itself."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = int(np.floor((t1 - t0) / dt + 1e-9))
    ts = t0 + dt * np.arange(n + 1)
    ts = ts[ts < t1 - 1e-9 * max(1.0, abs(t1))]
    return np.append(ts, t1)


def sample_uniform(traj: PolyTrajectory, dt: float) -> SampledTrajectory:
    """Sample ``traj`` every ``dt`` seconds, always including the final time."""
    ts = sample_times(traj.t_start, traj.t_end, dt)
    positions = positions_at(traj, ts)
    return SampledTrajectory.from_points(ts, positions)


def positions_at(traj: PolyTrajectory, ts: ArrayLike, order: int = 0) -> FloatArray:
    """Vectorized evaluation of the ``order``-th derivative at many times, shape (len(ts), 3)."""
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if ts.size and (ts.min() < traj.t_start or ts.max() > traj.t_end):
        raise ValueError("sample times outside trajectory domain")
    idx = np.searchsorted(traj.knots, ts, side="right") - 1
    idx = np.clip(idx, 0, len(traj.segments) - 1)
    out = np.zeros((len(ts), 3))
    for j in np.unique(idx):
        seg = traj.segments[j]
        mask = idx == j
        tau = ts[mask] - seg.t_start
        c = derivative_coeffs(seg.coeffs, order)
        powers = tau[:, None] ** np.arange(c.shape[1])[None, :]
        out[mask] = powers @ c.T
    return out


def nearest_sample_to_point(st: SampledTrajectory, p: ArrayLike, start: int = 0, stop: int | None = None) -> int:
    """Index of the sample closest to ``p``; ties resolve to the smaller index.

    ``start``/``stop`` optionally restrict the search window.
    """
    if len(st) == 0:
        raise ValueError("empty sampled trajectory")
    stop = len(st) if stop is None else min(stop, len(st))
    start = max(0, min(start, stop - 1))
    d2 = np.sum((st.positions[start:stop] - as_vec3(p, "p")) ** 2, axis=1)
    return start + int(np.argmin(d2))  # argmin returns the first minimum


def arc_distance_between(st: SampledTrajectory, i: int, j: int) -> float:
    """Along-trajectory distance from sample ``i`` to sample ``j`` (``i <= j``)."""
    if i > j:
        raise ValueError(f"arc distance needs i <= j, got i={i}, j={j}")
    if i < 0 or j >= len(st):
        raise IndexError(f"indices ({i}, {j}) out of range for {len(st)} samples")
    return float(st.cumulative_arc[j] - st.cumulative_arc[i])


def write_trajectory_csv(traj: PolyTrajectory, path: str | PathLike[str], dt: float) -> None:
    """Write ``t,x,y,z,vx,vy,vz`` rows sampled every ``dt`` seconds."""
    ts = sample_times(traj.t_start, traj.t_end, dt)
    pos = positions_at(traj, ts)
    vel = positions_at(traj, ts, order=1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z", "vx", "vy", "vz"])
        for t, p, v in zip(ts, pos, vel):
            w.writerow([repr(float(t))] + [repr(float(a)) for a in (*p, *v)])


def trajectory_from_segments(coeff_blocks: Sequence[ArrayLike], knots: ArrayLike) -> PolyTrajectory:
    """Assemble a trajectory from per-segment (3, d+1) coefficient arrays and knot times."""
    knots = np.asarray(knots, dtype=float)
    if len(knots) != len(coeff_blocks) + 1:
        raise ValueError("need one more knot than segments")
    segs = tuple(PolySegment(np.asarray(c, dtype=float), knots[j], knots[j + 1]) for j, c in enumerate(coeff_blocks))
    return PolyTrajectory(segs)
