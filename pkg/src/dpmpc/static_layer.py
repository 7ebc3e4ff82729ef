"""Minimum-snap trajectory through waypoints with iterative corridor shrinking.

Each segment is optimized over normalized coefficients ``c_i`` of
``s = (t - t_n) / T_n`` in ``[0, 1]``; the stored :class:`PolySegment` uses
local time ``tau = t - t_n`` so ``w_i = c_i / T_n**i``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from math import factorial
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import block_diag

from dpmpc.global_planner import WaypointPath
from dpmpc.occupancy import OccupancyGrid, first_collision
from dpmpc.qp import QpProblem, QpStatus, solve_qp
from dpmpc.trajectory import PolyTrajectory, positions_at, sample_times, sample_uniform, trajectory_from_segments

log = logging.getLogger(__name__)

MIN_SEGMENT_DURATION = 0.1


@dataclass(frozen=True)
class StaticPlanConfig:
    degree: int = 7
    deriv_order: int = 4
    regularization: float = 1e-6
    desired_velocity: float = 2.0
    initial_corridor: float = 0.5
    shrink_factor: float = 0.9
    sample_dt: float = 0.1
    max_iterations: int = 15

    def __post_init__(self) -> None:
        if not 0.5 <= self.shrink_factor < 1.0:
            raise ValueError(f"shrink_factor must lie in [0.5, 1), got {self.shrink_factor}")
        if 2 * self.deriv_order > self.degree + 1:
            raise ValueError("need 2*deriv_order <= degree + 1")
        if self.deriv_order < 1 or self.degree < 4:
            raise ValueError("degree must be >= 4 and deriv_order >= 1")
        if self.regularization < 0:
            raise ValueError("regularization must be non-negative")
        if self.desired_velocity <= 0 or self.sample_dt <= 0 or self.initial_corridor < 0:
            raise ValueError("desired_velocity, sample_dt must be positive and initial_corridor non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class CorridorConstraintSet:
    """Per-sample interpolation points on the waypoint chords and a common box half-width."""

    times: NDArray[np.float64]
    points: NDArray[np.float64]
    half_width: float

    def __len__(self) -> int:
        return len(self.times)


def allocate_segment_times(wp: WaypointPath, desired_velocity: float) -> NDArray[np.float64]:
    """Knot times: ``t_0 = 0``, durations ``max(distance / V_d, 0.1 s)``."""
    if desired_velocity <= 0:
        raise ValueError("desired velocity must be positive")
    pts = wp.as_array()
    durations = np.maximum(np.linalg.norm(np.diff(pts, axis=0), axis=1) / desired_velocity, MIN_SEGMENT_DURATION)
    return np.concatenate([[0.0], np.cumsum(durations)])


def _falling(i: int, k: int) -> int:
    return factorial(i) // factorial(i - k) if i >= k else 0


def snap_cost_block(duration: float, degree: int, deriv_order: int) -> NDArray[np.float64]:
    """``Q[i, j] = integral_0^T (d^k t^i/dt^k)(d^k t^j/dt^k) dt`` in closed form."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n, k = degree + 1, deriv_order
    Q = np.zeros((n, n))
    for i in range(k, n):
        for j in range(k, n):
            p = i + j - 2 * k + 1
            Q[i, j] = _falling(i, k) * _falling(j, k) * duration**p / p
    return Q


def corridor_constraints(
    wp: WaypointPath,
    knots: ArrayLike,
    dt: float,
    half_width: float,
    reference: Optional[PolyTrajectory] = None,
) -> CorridorConstraintSet:
    """Interpolation points on the waypoint chords at every ``dt`` sample of ``[t_0, t_N]``.

    Without ``reference`` the chord is interpolated at the sample's time
    fraction within its segment. With ``reference`` (normally the
    unconstrained minimum-snap solution) the fraction is that trajectory's
    projected progress along the chord, clipped to ``[0, 1]``; this keeps
    rest-to-rest boundary conditions compatible with small boxes.
    """
    knots = np.asarray(knots, dtype=float)
    pts = wp.as_array()
    ts = sample_times(knots[0], knots[-1], dt)
    seg = np.clip(np.searchsorted(knots, ts, side="right") - 1, 0, len(knots) - 2)
    chord = pts[seg + 1] - pts[seg]
    if reference is None:
        frac = (ts - knots[seg]) / (knots[seg + 1] - knots[seg])
    else:
        rel = positions_at(reference, ts) - pts[seg]
        frac = np.clip(np.sum(rel * chord, axis=1) / np.sum(chord * chord, axis=1), 0.0, 1.0)
    p_ip = pts[seg] + frac[:, None] * chord
    return CorridorConstraintSet(ts, p_ip, float(half_width))


@dataclass(frozen=True)
class _AxisStructure:
    """Axis-independent parts of the per-axis QP: cost, constraint matrices and rhs templates."""

    G: NDArray[np.float64]
    CE: NDArray[np.float64]
    eq_wp_index: NDArray[np.int64]  # waypoint index per equality row, -1 for homogeneous rows
    CI_rows: NDArray[np.float64]  # (S, nvar) evaluation rows at each corridor sample
    durations: NDArray[np.float64]
    scale: NDArray[np.float64]  # normalized coefficients = scale * QP variables
    eq_norm: NDArray[np.float64]  # row scaling applied to CE and ce0


def coefficient_scale(knots: ArrayLike, degree: int, deriv_order: int) -> NDArray[np.float64]:
    """Per-variable factor mapping QP variables back to normalized coefficients."""
    T = np.diff(np.asarray(knots, dtype=float))
    return np.repeat(T ** (deriv_order - 0.5), degree + 1)


def _axis_structure(knots: NDArray[np.float64], cfg: StaticPlanConfig, sample_t: NDArray[np.float64]) -> _AxisStructure:
    d, k = cfg.degree, cfg.deriv_order
    nc = d + 1
    M = len(knots) - 1
    T = np.diff(knots)
    nvar = M * nc
    Qn = snap_cost_block(1.0, d, k)
    # substituting w_j = T_j^(k-1/2) y_j turns every cost block into Qn; without it
    # mixed 0.1 s and 3 s segments push cond(G) past 1e17
    scale = coefficient_scale(knots, d, k)
    G = block_diag(*[Qn] * M) + cfg.regularization * np.eye(nvar)

    def deriv_row(seg: int, s: float, order: int) -> NDArray[np.float64]:
        row = np.zeros(nvar)
        for i in range(order, nc):
            row[seg * nc + i] = _falling(i, order) * s ** (i - order)
        return row / T[seg] ** order

    rows, wp_idx = [], []
    for j in range(M):
        rows.append(deriv_row(j, 0.0, 0))
        wp_idx.append(j)
        rows.append(deriv_row(j, 1.0, 0))
        wp_idx.append(j + 1)
    for j in range(M - 1):
        for m in range(1, k):
            rows.append(deriv_row(j, 1.0, m) - deriv_row(j + 1, 0.0, m))
            wp_idx.append(-1)
    for m in range(1, k):
        for r in (deriv_row(0, 0.0, m), deriv_row(M - 1, 1.0, m)):
            rows.append(r)
            wp_idx.append(-1)
    CE = np.array(rows).T * scale[:, None]
    eq_norm = np.max(np.abs(CE), axis=0)
    CE /= eq_norm

    seg = np.clip(np.searchsorted(knots, sample_t, side="right") - 1, 0, M - 1)
    s = np.clip((sample_t - knots[seg]) / T[seg], 0.0, 1.0)
    CI_rows = np.zeros((len(sample_t), nvar))
    powers = s[:, None] ** np.arange(nc)[None, :]
    for row, (j, pw) in enumerate(zip(seg, powers)):
        CI_rows[row, j * nc : (j + 1) * nc] = pw
    return _AxisStructure(G, CE, np.array(wp_idx), CI_rows * scale[None, :], T, scale, eq_norm)


def _axis_qp(struct: _AxisStructure, wp_axis: NDArray[np.float64], corridor: CorridorConstraintSet, axis: int) -> QpProblem:
    ce0 = np.where(struct.eq_wp_index >= 0, -wp_axis[np.maximum(struct.eq_wp_index, 0)], 0.0) / struct.eq_norm
    nvar = struct.G.shape[0]
    if np.isfinite(corridor.half_width):
        p_ip = corridor.points[:, axis]
        C = corridor.half_width
        CI = np.concatenate([struct.CI_rows, -struct.CI_rows]).T
        ci0 = np.concatenate([-(p_ip - C), p_ip + C])
    else:
        CI, ci0 = np.zeros((nvar, 0)), np.zeros(0)
    return QpProblem(struct.G, np.zeros(nvar), struct.CE, ce0, CI, ci0)


def build_minsnap_qp(
    wp: WaypointPath,
    knots: ArrayLike,
    cfg: StaticPlanConfig,
    corridor: CorridorConstraintSet,
) -> QpProblem:
    """Full three-axis QP (axis-major ordering).

    The variables are normalized segment coefficients divided by
    :func:`coefficient_scale` (tiled over the three axes). Infinite ``corridor.half_width`` drops the box constraints.
    """
    knots = np.asarray(knots, dtype=float)
    expected = len(sample_times(knots[0], knots[-1], cfg.sample_dt))
    if len(corridor) != expected:
        raise ValueError(f"corridor has {len(corridor)} samples, expected {expected} at dt={cfg.sample_dt}")
    struct = _axis_structure(knots, cfg, corridor.times)
    pts = wp.as_array()
    parts = [_axis_qp(struct, pts[:, a], corridor, a) for a in range(3)]
    return QpProblem(
        block_diag(*[q.G for q in parts]),
        np.concatenate([q.g0 for q in parts]),
        block_diag(*[q.CE for q in parts]),
        np.concatenate([q.ce0 for q in parts]),
        block_diag(*[q.CI for q in parts]),
        np.concatenate([q.ci0 for q in parts]),
    )


def coefficients_to_trajectory(w: ArrayLike, knots: ArrayLike, degree: int) -> PolyTrajectory:
    """Map the axis-major normalized coefficient vector to a :class:`PolyTrajectory`."""
    knots = np.asarray(knots, dtype=float)
    M, nc = len(knots) - 1, degree + 1
    c = np.asarray(w, dtype=float).reshape(3, M, nc)
    T = np.diff(knots)
    scale = T[:, None] ** -np.arange(nc)[None, :]  # (M, nc)
    blocks = [c[:, j, :] * scale[j] for j in range(M)]
    # shared knot positions come from the same waypoint equality, make them bitwise equal
    for j in range(M - 1):
        blocks[j + 1][:, 0] = blocks[j] @ (T[j] ** np.arange(nc))
    return trajectory_from_segments(blocks, knots)


@dataclass
class StaticPlanResult:
    """Outcome of :func:`plan_static`. ``trajectory`` is the last iterate even on failure."""

    success: bool
    trajectory: Optional[PolyTrajectory]
    iterations: int
    corridor: float
    corridor_history: list[float] = field(default_factory=list)
    constraints: Optional[CorridorConstraintSet] = None
    knots: Optional[NDArray[np.float64]] = None
    message: str = ""
    collision_index: Optional[int] = None
    wall_ms: float = 0.0
    unconstrained: Optional[PolyTrajectory] = None


def snap_objective(traj: PolyTrajectory, deriv_order: int = 4) -> float:
    """Integral of the squared ``deriv_order``-th derivative over the whole trajectory."""
    total = 0.0
    for seg in traj.segments:
        Q = snap_cost_block(seg.duration, seg.degree, deriv_order)
        total += float(sum(c @ Q @ c for c in seg.coeffs))
    return total


def solve_minsnap(
    wp: WaypointPath,
    knots: ArrayLike,
    cfg: StaticPlanConfig,
    corridor: CorridorConstraintSet,
) -> tuple[Optional[PolyTrajectory], QpStatus]:
    """Solve the corridor-constrained min-snap QP axis by axis (the axes decouple)."""
    knots = np.asarray(knots, dtype=float)
    struct = _axis_structure(knots, cfg, corridor.times)
    pts = wp.as_array()
    xs = []
    for a in range(3):
        sol = solve_qp(_axis_qp(struct, pts[:, a], corridor, a))
        if sol.status is not QpStatus.OPTIMAL:
            return None, sol.status
        xs.append(struct.scale * sol.x)
    return coefficients_to_trajectory(np.concatenate(xs), knots, cfg.degree), QpStatus.OPTIMAL


def unconstrained_minsnap(wp: WaypointPath, knots: ArrayLike, cfg: StaticPlanConfig) -> Optional[PolyTrajectory]:
    corridor = corridor_constraints(wp, knots, cfg.sample_dt, float("inf"))
    return solve_minsnap(wp, knots, cfg, corridor)[0]


def plan_static(grid: OccupancyGrid, wp: WaypointPath, cfg: StaticPlanConfig, radius: float) -> StaticPlanResult:
    """Iterative corridor shrinking around the minimum-snap QP.

    Each pass solves with the current box, samples the result every
    ``cfg.sample_dt`` and checks it against ``grid``; on collision the box is
    multiplied by ``cfg.shrink_factor``. Failures come back as a result with
    ``success=False`` rather than an exception.
    """
    t0 = time.perf_counter()
    wp.check_free(grid, radius)
    knots = allocate_segment_times(wp, cfg.desired_velocity)
    out = StaticPlanResult(False, None, 0, cfg.initial_corridor, knots=knots)
    reference = out.unconstrained = unconstrained_minsnap(wp, knots, cfg)
    if reference is None:
        out.message = "infeasible: QP without corridor bounds"
    for it in range(cfg.max_iterations if reference is not None else 0):
        box = cfg.initial_corridor * cfg.shrink_factor**it
        out.iterations, out.corridor = it + 1, box
        out.corridor_history.append(box)
        corridor = corridor_constraints(wp, knots, cfg.sample_dt, box, reference=reference)
        cand, status = solve_minsnap(wp, knots, cfg, corridor)
        if cand is None:
            # the unconstrained problem is feasible, so the boxes are to blame; tighter ones cannot help
            out.message = f"infeasible: corridor bounds ({status.value})"
            break
        out.trajectory = reference = cand
        out.constraints = corridor
        out.collision_index = first_collision(grid, sample_uniform(cand, cfg.sample_dt), radius)
        if out.collision_index is None:
            out.success, out.message = True, "collision-free"
            break
        log.debug("iteration %d: collision at sample %d with corridor %.4f", it + 1, out.collision_index, box)
    else:
        if reference is not None:
            out.message = "max_iterations exceeded"
    out.wall_ms = (time.perf_counter() - t0) * 1e3
    return out


def static_plan_report(grid: OccupancyGrid, wp: WaypointPath, result: StaticPlanResult, cfg: StaticPlanConfig, radius: float) -> dict[str, float]:
    """Post-hoc residuals of an accepted plan.

    Keys: ``continuity`` (max jump of derivatives ``1..k-1`` over interior
    knots), ``waypoints`` (max interpolation error, m), ``corridor`` (max
    per-axis excess over the final box, m; <= 0 when satisfied) and
    ``collisions`` (count of colliding ``sample_dt`` samples).
    """
    traj = result.trajectory
    if traj is None:
        raise ValueError("result has no trajectory")
    jumps = [0.0]
    for left, right in zip(traj.segments[:-1], traj.segments[1:]):
        for order in range(1, cfg.deriv_order):
            jumps.append(float(np.max(np.abs(left.evaluate(left.t_end, order) - right.evaluate(right.t_start, order)))))
    knots = traj.knots
    wp_err = max(float(np.max(np.abs(traj.position(t) - w))) for t, w in zip(knots, wp.waypoints))
    excess = -np.inf
    if result.constraints is not None:
        c = result.constraints
        pos = positions_at(traj, c.times)
        excess = float(np.max(np.abs(pos - c.points)) - c.half_width)
    st = sample_uniform(traj, cfg.sample_dt)
    hits = int(np.count_nonzero(~grid.spheres_free(st.positions, radius)))
    return {"continuity": max(jumps), "waypoints": wp_err, "corridor": excess, "collisions": float(hits)}
