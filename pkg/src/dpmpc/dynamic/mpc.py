"""Chance-constrained MPC on a triple integrator and the reactive planning step.

The model is a per-axis triple integrator with jerk input, discretized
exactly under zero-order hold. States are substituted out, so the QP
variables are the ``N`` jerk inputs (``3N`` scalars).
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import erfinv

from dpmpc.dynamic.geometry import DynamicObstacle, RobotBelief
from dpmpc.dynamic.target import (
    AvoidanceTarget,
    ReferenceSequence,
    build_temporal_goal,
    meets_obstacle,
    select_avoidance_target,
    tracking_reference,
)
from dpmpc.occupancy import OccupancyGrid, first_collision_points
from dpmpc.qp import QpProblem, QpStatus, solve_qp
from dpmpc.trajectory import PolyTrajectory, SampledTrajectory, sample_uniform

FloatArray = NDArray[np.float64]

MAP_ROW = -1


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    dt: float = 0.1
    delta: float = 0.03
    u_min: tuple[float, float, float] = (-20.0, -20.0, -20.0)
    u_max: tuple[float, float, float] = (20.0, 20.0, 20.0)
    position_weight: float = 10.0
    velocity_weight: float = 1.0
    acceleration_weight: float = 0.1
    input_weight: float = 0.01
    goal_split: Optional[int] = None
    meet_threshold: float = 3.0
    avoid_distance: float = 2.0
    scp_iterations: int = 2
    slack_penalty: float = 1e6
    use_chance_margin: bool = True
    use_temporal_goal: bool = True
    map_query_distance: float = 2.0  # 0 disables the static-map half-spaces
    map_margin: float = 0.05

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0.0 < self.delta <= 0.5:
            raise ValueError("delta must lie in (0, 0.5]")
        if np.any(np.asarray(self.u_min) >= np.asarray(self.u_max)):
            raise ValueError("u_min must be below u_max on every axis")
        weights = (self.position_weight, self.velocity_weight, self.acceleration_weight, self.input_weight)
        if min(weights) < 0 or self.input_weight <= 0:
            raise ValueError("weights must be non-negative and the input weight positive")
        if not 0.25 <= self.split / self.horizon <= 0.75:
            raise ValueError(f"goal split n/N = {self.split}/{self.horizon} outside [1/4, 3/4]")
        if self.scp_iterations < 1:
            raise ValueError("scp_iterations must be >= 1")
        if self.map_query_distance < 0 or self.map_margin < 0:
            raise ValueError("map_query_distance and map_margin must be non-negative")
        if self.meet_threshold <= 0 or self.avoid_distance <= 0:
            raise ValueError("meet_threshold and avoid_distance must be positive")

    @property
    def split(self) -> int:
        return self.horizon // 2 if self.goal_split is None else self.goal_split


class MpcStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    SOFTENED = "softened"
    EMERGENCY = "emergency"


@dataclass(frozen=True)
class ObstacleConstraints:
    """Half-spaces ``normals[i] . p_{steps[i]} >= offsets[i]`` used in the final QP.

    ``obstacles[i]`` is the obstacle index, or :data:`MAP_ROW` for static-map rows.
    """

    normals: FloatArray
    offsets: FloatArray
    steps: NDArray[np.int64]  # 1-based horizon step
    obstacles: NDArray[np.int64]
    margins: FloatArray

    def __len__(self) -> int:
        return len(self.offsets)

    @staticmethod
    def empty() -> ObstacleConstraints:
        z = np.zeros(0)
        return ObstacleConstraints(np.zeros((0, 3)), z, np.zeros(0, dtype=int), np.zeros(0, dtype=int), z)

    def concat(self, other: ObstacleConstraints) -> ObstacleConstraints:
        return ObstacleConstraints(
            np.vstack([self.normals, other.normals]),
            np.concatenate([self.offsets, other.offsets]),
            np.concatenate([self.steps, other.steps]),
            np.concatenate([self.obstacles, other.obstacles]),
            np.concatenate([self.margins, other.margins]),
        )

    @property
    def dynamic(self) -> NDArray[np.bool_]:
        return self.obstacles >= 0

    def evaluate(self, positions: FloatArray) -> FloatArray:
        """Constraint values (>= 0 when satisfied) for predicted positions (N, 3)."""
        return np.einsum("ij,ij->i", self.normals, positions[self.steps - 1]) - self.offsets


@dataclass
class MpcSolution:
    states: FloatArray  # (N, 9): steps 1..N
    controls: FloatArray  # (N, 3): controls[k] drives step k to k+1 (0-based)
    status: MpcStatus
    constraints: ObstacleConstraints
    active: list[list[int]] = field(default_factory=list)
    softened_steps: list[int] = field(default_factory=list)
    iterations: int = 0
    qp_iterations: int = 0
    wall_ms: float = 0.0
    objective: float = float("nan")

    @property
    def positions(self) -> FloatArray:
        return self.states[:, :3]

    @property
    def ok(self) -> bool:
        return self.status is not MpcStatus.EMERGENCY


@lru_cache(maxsize=16)
def prediction_matrices(horizon: int, dt: float) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """``X = Phi x0 + Gamma U`` for the stacked 9-state triple integrator.

    Returns ``(A, B, Phi, Gamma)`` with ``Phi`` (9N, 9) and ``Gamma`` (9N, 3N).
    """
    A3 = np.array([[1.0, dt, dt * dt / 2], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    B3 = np.array([[dt**3 / 6], [dt * dt / 2], [dt]])
    A = np.kron(A3, np.eye(3))
    B = np.kron(B3, np.eye(3))
    powers = [np.eye(9)]
    for _ in range(horizon):
        powers.append(A @ powers[-1])
    Phi = np.vstack(powers[1:])
    Gamma = np.zeros((9 * horizon, 3 * horizon))
    for k in range(1, horizon + 1):
        for j in range(k):
            Gamma[9 * (k - 1) : 9 * k, 3 * j : 3 * j + 3] = powers[k - 1 - j] @ B
    for arr in (A, B, Phi, Gamma):
        arr.setflags(write=False)
    return A, B, Phi, Gamma


def rollout(x0: ArrayLike, controls: ArrayLike, dt: float) -> FloatArray:
    """Step the exact discrete dynamics; returns states (N, 9) for steps 1..N."""
    U = np.asarray(controls, dtype=float).reshape(-1, 3)
    A, B, _, _ = prediction_matrices(1, dt)
    x = np.asarray(x0, dtype=float).copy()
    out = np.zeros((len(U), 9))
    for k, u in enumerate(U):
        x = A @ x + B @ u
        out[k] = x
    return out


def braking_controls(x0: ArrayLike, cfg: MpcConfig) -> FloatArray:
    """Jerk sequence that drives acceleration towards ``-v / 1 s`` within the input bounds."""
    x = np.asarray(x0, dtype=float).copy()
    A, B, _, _ = prediction_matrices(1, cfg.dt)
    U = np.zeros((cfg.horizon, 3))
    lo, hi = np.asarray(cfg.u_min), np.asarray(cfg.u_max)
    for k in range(cfg.horizon):
        a_des = -x[3:6]
        U[k] = np.clip((a_des - x[6:9]) / cfg.dt, lo, hi)
        x = A @ x + B @ U[k]
    return U


def _weights(cfg: MpcConfig) -> FloatArray:
    w = np.repeat([cfg.position_weight, cfg.velocity_weight, cfg.acceleration_weight], 3)
    return np.tile(w, cfg.horizon)


@lru_cache(maxsize=16)
def _cost_matrix(cfg: MpcConfig) -> FloatArray:
    _, _, _, Gamma = prediction_matrices(cfg.horizon, cfg.dt)
    W = _weights(cfg)
    H = Gamma.T @ (W[:, None] * Gamma) + cfg.input_weight * np.eye(3 * cfg.horizon)
    H = 2.0 * H
    H = 0.5 * (H + H.T)
    H.setflags(write=False)
    return H


def batch_halfspaces(
    p_r: FloatArray,
    p_o: FloatArray,
    cov_sum: Optional[FloatArray],
    q_half: FloatArray,
    delta: float,
) -> tuple[FloatArray, FloatArray, FloatArray, NDArray[np.bool_]]:
    """Vectorized chance half-spaces for K (robot, obstacle) pairs.

    ``q_half`` is (K, 3), the diagonal of ``Qc^(1/2)`` per pair. Returns
    normals (K, 3), offsets (K,), margins (K,) and a validity mask (False for
    coincident means).
    """
    diff = q_half * (p_r - p_o)
    dist = np.linalg.norm(diff, axis=1)
    valid = dist > 1e-12
    a = diff / np.where(valid, dist, 1.0)[:, None]
    if cov_sum is None:
        margins = np.zeros(len(a))
    else:
        cov_t = q_half[:, :, None] * cov_sum * q_half[:, None, :]
        var = np.einsum("ki,kij,kj->k", a, cov_t, a)
        margins = float(erfinv(1.0 - 2.0 * delta)) * np.sqrt(2.0 * np.maximum(var, 0.0))
    offsets = np.einsum("ki,ki->k", a, q_half * p_o) + 1.0 + margins
    return q_half * a, offsets, margins, valid


@dataclass(frozen=True)
class _ObstacleBeliefs:
    """Horizon-stacked obstacle means, summed covariances and ``Qc^(1/2)`` diagonals."""

    means: FloatArray  # (M*N, 3), obstacle-major
    cov_sum: Optional[FloatArray]  # (M*N, 3, 3) or None without the chance margin
    q_half: FloatArray  # (M*N, 3)
    count: int

    @staticmethod
    def build(obstacles: Sequence[DynamicObstacle], rb: RobotBelief, cfg: MpcConfig) -> _ObstacleBeliefs:
        N, M = cfg.horizon, len(obstacles)
        if not M:
            return _ObstacleBeliefs(np.zeros((0, 3)), None, np.zeros((0, 3)), 0)
        k = np.arange(1, N + 1, dtype=float)
        pos = np.array([o.position for o in obstacles])
        vel = np.array([o.velocity for o in obstacles])
        means = (pos[:, None, :] + k[None, :, None] * cfg.dt * vel[:, None, :]).reshape(-1, 3)
        axes = np.sqrt(3.0) * np.array([o.half_extents for o in obstacles])
        q_half = np.repeat(1.0 / (rb.radius + axes), N, axis=0)
        cov_sum = None
        if cfg.use_chance_margin:
            base = np.array([o.covariance for o in obstacles]) + rb.covariance
            grow = np.array([o.velocity_covariance for o in obstacles]) * cfg.dt**2
            cov_sum = (base[:, None] + k[None, :, None, None] * grow[:, None]).reshape(-1, 3, 3)
        return _ObstacleBeliefs(means, cov_sum, q_half, M)


def _obstacle_constraints(lin_points: FloatArray, beliefs: _ObstacleBeliefs, cfg: MpcConfig) -> ObstacleConstraints:
    N, M = cfg.horizon, beliefs.count
    if not M:
        return ObstacleConstraints.empty()
    p_r = np.tile(lin_points, (M, 1))
    normals, offsets, margins, valid = batch_halfspaces(p_r, beliefs.means, beliefs.cov_sum, beliefs.q_half, cfg.delta)
    steps = np.tile(np.arange(1, N + 1), M)
    ids = np.repeat(np.arange(M), N)
    return ObstacleConstraints(normals[valid], offsets[valid], steps[valid], ids[valid], margins[valid])


def _map_constraints(lin_points: FloatArray, grid: Optional[OccupancyGrid], radius: float, cfg: MpcConfig) -> ObstacleConstraints:
    """Separate each step from its nearest occupied voxel and keep it inside the world.

    Rows are only emitted where the linearization point is within
    ``cfg.map_query_distance`` of a voxel or bound.
    """
    if grid is None or cfg.map_query_distance == 0:
        return ObstacleConstraints.empty()
    steps = np.arange(1, cfg.horizon + 1)
    clear = radius + 0.5 * grid.resolution + cfg.map_margin
    dist, q = grid.nearest_occupied(lin_points)
    near = (dist < cfg.map_query_distance) & (dist > 1e-9)
    normals = [(lin_points[near] - q[near]) / dist[near, None]]
    offsets = [np.einsum("ij,ij->i", normals[0], q[near]) + clear]
    rows = [steps[near]]
    lo, hi = grid.origin + radius + cfg.map_margin, grid.upper - radius - cfg.map_margin
    for axis in range(3):
        for sign, bound, gap in ((1.0, lo[axis], lin_points[:, axis] - lo[axis]), (-1.0, -hi[axis], hi[axis] - lin_points[:, axis])):
            sel = gap < cfg.map_query_distance
            n = np.zeros((int(sel.sum()), 3))
            n[:, axis] = sign
            normals.append(n)
            offsets.append(np.full(len(n), bound))
            rows.append(steps[sel])
    # free runs along the axes keep the step out of walls the nearest voxel does not see
    max_cells = int(np.ceil(cfg.map_query_distance / grid.resolution))
    ext = grid.axis_free_extent(lin_points, radius + cfg.map_margin, max_cells)
    centers = grid.origin + (np.floor((lin_points - grid.origin) / grid.resolution) + 0.5) * grid.resolution
    for axis in range(3):
        for side, sign in ((0, -1.0), (1, 1.0)):
            run = ext[:, axis, side]
            sel = np.isfinite(run)
            n = np.zeros((int(sel.sum()), 3))
            n[:, axis] = -sign
            normals.append(n)
            offsets.append(-sign * (centers[sel, axis] + sign * run[sel]))
            rows.append(steps[sel])
    normals_a = np.vstack(normals)
    steps_a = np.concatenate(rows).astype(int)
    return ObstacleConstraints(normals_a, np.concatenate(offsets), steps_a, np.full(len(steps_a), MAP_ROW), np.zeros(len(steps_a)))


def _assemble_qp(
    x0: FloatArray,
    ref: FloatArray,
    cons: ObstacleConstraints,
    cfg: MpcConfig,
    soften: int,
) -> QpProblem:
    # soften: 0 hard, 1 slack on obstacle rows, 2 slack on map rows as well
    N = cfg.horizon
    _, _, Phi, Gamma = prediction_matrices(N, cfg.dt)
    free = Phi @ x0
    W = _weights(cfg)
    G = _cost_matrix(cfg)
    g0 = 2.0 * Gamma.T @ (W * (free - ref.reshape(-1)))
    nu = 3 * N
    lo = np.tile(cfg.u_min, N)
    hi = np.tile(cfg.u_max, N)
    CI_in = np.hstack([np.eye(nu), -np.eye(nu)])
    ci_in = np.concatenate([-lo, hi])

    K = len(cons)
    pos_rows = (9 * (cons.steps - 1))[:, None] + np.arange(3)[None, :]  # (K, 3)
    if K:
        Gp = Gamma[pos_rows]  # (K, 3, nu)
        CI_ob = np.einsum("ki,kij->jk", cons.normals, Gp)
        ci_ob = np.einsum("ki,ki->k", cons.normals, free[pos_rows]) - cons.offsets
    else:
        CI_ob, ci_ob = np.zeros((nu, 0)), np.zeros(0)

    if not soften:
        return QpProblem(G, g0, None, None, np.hstack([CI_in, CI_ob]), np.concatenate([ci_in, ci_ob]))

    # one slack per obstacle shared across the horizon (map rows share one more at level 2)
    dyn = cons.dynamic if soften < 2 else np.ones(K, dtype=bool)
    groups, group_of = np.unique(cons.obstacles[dyn], return_inverse=True)
    n_obs = len(groups)
    Gs = np.zeros((nu + n_obs, nu + n_obs))
    Gs[:nu, :nu] = G
    Gs[nu:, nu:] = 2.0 * cfg.slack_penalty * np.eye(n_obs)
    gs = np.concatenate([g0, np.zeros(n_obs)])
    CI = np.zeros((nu + n_obs, 2 * nu + K + n_obs))
    CI[:nu, : 2 * nu] = CI_in
    CI[:nu, 2 * nu : 2 * nu + K] = CI_ob
    CI[nu + group_of, 2 * nu + np.flatnonzero(dyn)] = 1.0
    CI[nu:, 2 * nu + K :] = np.eye(n_obs)
    ci0 = np.concatenate([ci_in, ci_ob, np.zeros(n_obs)])
    return QpProblem(Gs, gs, None, None, CI, ci0)


def solve_mpc(
    rb: RobotBelief,
    reference: ReferenceSequence | FloatArray,
    obstacles: Sequence[DynamicObstacle],
    grid: Optional[OccupancyGrid],
    cfg: MpcConfig,
    warm_positions: Optional[FloatArray] = None,
) -> MpcSolution:
    """Solve the chance-constrained tracking problem with ``cfg.scp_iterations`` convex passes.

    ``reference`` holds N states ``[p, v, a]``. Obstacle half-spaces are
    linearized at ``warm_positions`` (or the reference positions) and then at
    each pass's prediction. With a ``grid``, every step is also kept clear of
    its nearest occupied voxel and inside the world bounds. If a pass is
    infeasible it is retried with penalized slacks; if that fails too the
    result is a braking command with ``EMERGENCY`` status.
    """
    t0 = time.perf_counter()
    N = cfg.horizon
    ref = reference.states if isinstance(reference, ReferenceSequence) else np.asarray(reference, dtype=float)
    if ref.shape != (N, 9):
        raise ValueError(f"reference must have shape ({N}, 9), got {ref.shape}")
    x0 = rb.state
    _, _, Phi, Gamma = prediction_matrices(N, cfg.dt)
    lin = ref[:, :3] if warm_positions is None else np.asarray(warm_positions, dtype=float)
    nu = 3 * N

    status = MpcStatus.OPTIMAL
    qp_iters = 0
    U = None
    beliefs = _ObstacleBeliefs.build(obstacles, rb, cfg)

    def constraints(points: FloatArray) -> ObstacleConstraints:
        return _obstacle_constraints(points, beliefs, cfg).concat(_map_constraints(points, grid, rb.radius, cfg))

    cons = constraints(lin)
    softened: list[int] = []
    objective = float("nan")
    for it in range(cfg.scp_iterations):
        cons = constraints(lin)
        pass_status = MpcStatus.OPTIMAL
        for level in range(3):
            sol = solve_qp(_assemble_qp(x0, ref, cons, cfg, soften=level))
            qp_iters += sol.iterations
            if sol.status is QpStatus.OPTIMAL:
                break
            pass_status = MpcStatus.SOFTENED
        else:
            U = braking_controls(x0, cfg)
            states = rollout(x0, U, cfg.dt)
            return MpcSolution(
                states, U, MpcStatus.EMERGENCY, cons, [[] for _ in range(N)], [], it + 1, qp_iters,
                (time.perf_counter() - t0) * 1e3,
            )
        U = sol.x[:nu].reshape(N, 3)
        objective = sol.objective
        status = pass_status
        X = (Phi @ x0 + Gamma @ sol.x[:nu]).reshape(N, 9)
        lin = X[:, :3]
        if pass_status is MpcStatus.SOFTENED:
            viol = cons.evaluate(lin) < -1e-9
            softened = sorted(set(cons.steps[viol].tolist()))
        else:
            softened = []

    states = rollout(x0, U, cfg.dt)
    values = cons.evaluate(states[:, :3])
    active: list[list[int]] = [[] for _ in range(N)]
    for k, ob, v in zip(cons.steps, cons.obstacles, values):
        if abs(v) <= 1e-6:
            active[k - 1].append(int(ob))
    return MpcSolution(
        states, U, status, cons, active, softened, cfg.scp_iterations, qp_iters,
        (time.perf_counter() - t0) * 1e3, objective,
    )


class Mode(str, enum.Enum):
    TRACKING = "tracking"
    AVOIDANCE = "avoidance"


@dataclass
class ReactivePlan:
    solution: MpcSolution
    mode: Mode
    reference: ReferenceSequence
    committed: FloatArray  # collision-free prefix of the predicted states
    target: Optional[AvoidanceTarget] = None
    obstacle: Optional[int] = None

    @property
    def control(self) -> FloatArray:
        return self.solution.controls[0]


class ReactivePlanner:
    """Per-episode dynamic layer: keeps the warm start between calls.

    Not thread-safe; use one instance per episode.
    """

    def __init__(self, static_traj: PolyTrajectory, grid: Optional[OccupancyGrid], cfg: MpcConfig):
        self.traj = static_traj
        self.grid = grid
        self.cfg = cfg
        self.samples: SampledTrajectory = sample_uniform(static_traj, cfg.dt)
        self._prev: Optional[MpcSolution] = None

    def reset(self) -> None:
        self._prev = None

    def _warm_positions(self) -> Optional[FloatArray]:
        if self._prev is None or not self._prev.ok:
            return None
        p = self._prev.positions
        return np.vstack([p[1:], p[-1:]])

    def plan(self, rb: RobotBelief, t: float, obstacles: Sequence[DynamicObstacle]) -> ReactivePlan:
        cfg = self.cfg
        meeting = [
            (float(np.linalg.norm(o.position - rb.position)), i)
            for i, o in enumerate(obstacles)
            if meets_obstacle(rb, o, cfg.meet_threshold)
        ]
        target = None
        nearest = None
        if meeting:
            nearest = min(meeting)[1]
        if nearest is not None and cfg.use_temporal_goal:
            target = select_avoidance_target(self.samples, rb.position, obstacles[nearest].position, cfg.avoid_distance)
            ref = build_temporal_goal(self.traj, float(self.samples.times[target.index]), cfg.horizon, cfg.dt, cfg.split)
        else:
            ref = tracking_reference(self.traj, t, cfg.horizon, cfg.dt)
        mode = Mode.AVOIDANCE if nearest is not None else Mode.TRACKING
        sol = solve_mpc(rb, ref, obstacles, self.grid, cfg, warm_positions=self._warm_positions())
        self._prev = sol
        committed = sol.states
        if self.grid is not None:
            hit = first_collision_points(self.grid, sol.positions, rb.radius)
            if hit is not None:
                committed = sol.states[:hit]
        return ReactivePlan(sol, mode, ref, committed, target, nearest)


def plan_reactive(
    rb: RobotBelief,
    static_traj: PolyTrajectory,
    t: float,
    obstacles: Sequence[DynamicObstacle],
    grid: Optional[OccupancyGrid],
    cfg: MpcConfig,
    planner: Optional[ReactivePlanner] = None,
) -> ReactivePlan:
    """One dynamic-layer step; pass ``planner`` to keep the warm start across calls."""
    planner = planner or ReactivePlanner(static_traj, grid, cfg)
    return planner.plan(rb, t, obstacles)
