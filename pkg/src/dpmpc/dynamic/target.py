"""Meeting test, avoidance-target selection and the temporal-goal reference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from dpmpc.dynamic.geometry import DynamicObstacle, RobotBelief
from dpmpc.trajectory import (
    PolyTrajectory,
    SampledTrajectory,
    as_vec3,
    clamped_time,
    nearest_sample_to_point,
    positions_at,
)

FloatArray = NDArray[np.float64]

MIN_SPEED = 1e-6


def meets_obstacle(rb: RobotBelief, o: DynamicObstacle, threshold: float) -> bool:
    """Obstacle ahead of the robot's motion (angle < 90 deg) and closer than ``threshold``."""
    if np.linalg.norm(rb.velocity) <= MIN_SPEED:
        return False
    to_obs = o.position - rb.position
    return bool(rb.velocity @ to_obs > 0.0 and np.linalg.norm(to_obs) < threshold)


def _tangents(positions: FloatArray) -> FloatArray:
    t = np.zeros_like(positions)
    if len(positions) > 1:
        t[:-1] = positions[1:] - positions[:-1]
        t[-1] = positions[-1] - positions[-2]
    return t


@dataclass(frozen=True)
class AvoidanceTarget:
    index: int
    near_candidate: int
    robot_candidate: int
    near_exhausted: bool
    robot_exhausted: bool

    @property
    def exhausted(self) -> bool:
        """True when the chosen candidate came from the end-of-trajectory default."""
        if self.index == self.near_candidate and not self.near_exhausted:
            return False
        if self.index == self.robot_candidate and not self.robot_exhausted:
            return False
        return True


def select_avoidance_target(st: SampledTrajectory, p_r: ArrayLike, p_o: ArrayLike, delta: float) -> AvoidanceTarget:
    """Pick the detour goal on the static trajectory.

    Candidate 1 scans forward from the sample nearest the obstacle for the
    first point at least ``delta`` of arc length away; candidate 2 scans from
    the sample nearest the robot for the first point at least ``delta`` from
    the obstacle. Both also require the point to move away from the obstacle
    (tangent at >= 90 deg to the point->obstacle direction). The candidate with
    more arc length ahead of the robot wins; ties go to candidate 1. A scan
    that finds nothing falls back to the final sample.
    """
    if len(st) == 0:
        raise ValueError("empty sampled trajectory")
    if delta <= 0:
        raise ValueError("delta must be positive")
    p_r, p_o = as_vec3(p_r, "robot position"), as_vec3(p_o, "obstacle position")
    P = st.positions
    last = len(P) - 1
    away = np.einsum("ij,ij->i", _tangents(P), p_o - P) <= 0.0

    i_near = nearest_sample_to_point(st, p_o)
    arc_ok = st.cumulative_arc - st.cumulative_arc[i_near] >= delta
    hits = np.flatnonzero(arc_ok[i_near:] & away[i_near:])
    c1, ex1 = (i_near + int(hits[0]), False) if len(hits) else (last, True)

    i_rob = nearest_sample_to_point(st, p_r)
    far = np.linalg.norm(P - p_o, axis=1) >= delta
    hits = np.flatnonzero(far[i_rob:] & away[i_rob:])
    c2, ex2 = (i_rob + int(hits[0]), False) if len(hits) else (last, True)

    base = st.cumulative_arc[i_rob]
    d1, d2 = st.cumulative_arc[c1] - base, st.cumulative_arc[c2] - base
    return AvoidanceTarget(c1 if d1 >= d2 else c2, c1, c2, ex1, ex2)


@dataclass(frozen=True)
class ReferenceSequence:
    """``N`` reference states; rows are steps ``1..N``."""

    positions: FloatArray
    velocities: FloatArray
    accelerations: FloatArray
    times: Optional[FloatArray] = None

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def states(self) -> FloatArray:
        """(N, 9) stacked ``[p, v, a]``."""
        return np.hstack([self.positions, self.velocities, self.accelerations])


def build_temporal_goal(traj: PolyTrajectory, t_a: float, horizon: int, dt: float, split: int) -> ReferenceSequence:
    """``N - n`` copies of the target at rest, then ``n`` static samples after it.

    Times past the trajectory end are clamped to the final point.
    """
    if not traj.t_start <= t_a <= traj.t_end:
        raise ValueError(f"t_a={t_a} outside the trajectory domain")
    if not 0 <= split <= horizon:
        raise ValueError("split must lie in [0, horizon]")
    hold = horizon - split
    ts = np.array([clamped_time(traj, t_a + j * dt) for j in range(1, split + 1)])
    pos = np.vstack([np.tile(traj.position(t_a), (hold, 1)), positions_at(traj, ts)]) if split else np.tile(traj.position(t_a), (hold, 1))
    vel = np.zeros((horizon, 3))
    acc = np.zeros((horizon, 3))
    if split:
        vel[hold:] = positions_at(traj, ts, 1)
        acc[hold:] = positions_at(traj, ts, 2)
        ended = ts >= traj.t_end
        vel[hold:][ended] = 0.0
        acc[hold:][ended] = 0.0
    times = np.concatenate([np.full(hold, t_a), ts])
    return ReferenceSequence(pos, vel, acc, times)


def tracking_reference(traj: PolyTrajectory, t: float, horizon: int, dt: float) -> ReferenceSequence:
    """Static samples at ``t + dt, ..., t + N dt`` (clamped to the end, where the robot should rest)."""
    raw = t + dt * np.arange(1, horizon + 1)
    ts = np.clip(raw, traj.t_start, traj.t_end)
    vel = positions_at(traj, ts, 1)
    acc = positions_at(traj, ts, 2)
    ended = raw >= traj.t_end
    vel[ended] = 0.0
    acc[ended] = 0.0
    return ReferenceSequence(positions_at(traj, ts), vel, acc, ts)
