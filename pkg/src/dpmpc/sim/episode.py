"""Closed-loop episodes: static plan once, then the reactive layer at every tick."""

from __future__ import annotations

import dataclasses
import enum
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from dpmpc.dynamic.geometry import (
    DynamicObstacle,
    RobotBelief,
    ellipsoid_from_bbox,
    qc_matrix,
    qc_norm,
    surface_distance,
)
from dpmpc.dynamic.mpc import Mode, MpcConfig, MpcStatus, ReactivePlanner, braking_controls, prediction_matrices
from dpmpc.global_planner import WaypointPath, plan_waypoints
from dpmpc.sim.scenario import Scenario
from dpmpc.static_layer import StaticPlanResult, plan_static
from dpmpc.trajectory import PolyTrajectory, nearest_sample_to_point, sample_uniform

FloatArray = NDArray[np.float64]

NO_OBSTACLE_DISTANCE = sys.float_info.max
VELOCITY_SMOOTHING = 0.5


class Variant(str, enum.Enum):
    PROPOSED = "proposed"
    DETERMINISTIC = "deterministic"
    NO_TEMPORAL_GOAL = "no-temporal-goal"


def variant_config(cfg: MpcConfig, variant: Variant | str) -> MpcConfig:
    """MPC settings for an ablation: the deterministic variant drops the chance margin,
    the other one keeps tracking the static reference while avoiding."""
    v = Variant(variant)
    if v is Variant.DETERMINISTIC:
        return dataclasses.replace(cfg, use_chance_margin=False)
    if v is Variant.NO_TEMPORAL_GOAL:
        return dataclasses.replace(cfg, use_temporal_goal=False)
    return cfg


@dataclass(frozen=True)
class StaticPlan:
    waypoints: Optional[WaypointPath]
    result: Optional[StaticPlanResult]
    static_ms: float  # corridor-shrinking loop only
    global_ms: float = float("nan")
    message: str = ""

    @property
    def trajectory(self) -> Optional[PolyTrajectory]:
        if self.result is None or not self.result.success:
            return None
        return self.result.trajectory


def plan_static_for(sc: Scenario) -> StaticPlan:
    """Global path, then the corridor-shrinking trajectory."""
    t0 = time.perf_counter()
    try:
        wp = plan_waypoints(sc.grid, sc.start, sc.goal, sc.robot_radius + sc.path_margin)
    except (RuntimeError, ValueError):
        # retry without the extra margin before giving up
        try:
            wp = plan_waypoints(sc.grid, sc.start, sc.goal, sc.robot_radius)
        except (RuntimeError, ValueError) as exc:
            ms = (time.perf_counter() - t0) * 1e3
            return StaticPlan(None, None, float("nan"), ms, f"global planner: {exc}")
    global_ms = (time.perf_counter() - t0) * 1e3
    res = plan_static(sc.grid, wp, sc.static, sc.robot_radius)
    return StaticPlan(wp, res, res.wall_ms, global_ms, res.message)


@dataclass(frozen=True)
class EpisodeMetrics:
    """Outcome of one episode. Wall-clock fields are excluded from equality."""

    success: bool
    collision: bool
    timeout: bool
    d_min: float
    traj_length: float
    traj_time: float
    steps: int = 0
    avoidance_steps: int = 0
    avoidance_activations: int = 0
    softened_steps: int = 0
    emergency_steps: int = 0
    reason: str = ""
    static_ms: float = field(default=float("nan"), compare=False)
    mpc_track_ms_mean: float = field(default=float("nan"), compare=False)
    mpc_track_ms_p95: float = field(default=float("nan"), compare=False)
    mpc_meet_ms_mean: float = field(default=float("nan"), compare=False)
    mpc_meet_ms_p95: float = field(default=float("nan"), compare=False)

    def __post_init__(self) -> None:
        if self.success and (self.collision or self.timeout):
            raise ValueError("a successful episode cannot collide or time out")


@dataclass
class TraceRow:
    t: float
    mode: str
    status: str
    clock: float
    robot: FloatArray  # (9,)
    reference: FloatArray  # (3,) first reference position
    true_obstacles: FloatArray  # (M, 3)
    measured_obstacles: FloatArray  # (M, 3)
    mpc_ms: float = field(default=float("nan"), compare=False)


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    trace: list[TraceRow] = field(default_factory=list)
    static: Optional[StaticPlan] = None


def _stats(ms: list[float]) -> tuple[float, float]:
    if not ms:
        return float("nan"), float("nan")
    a = np.asarray(ms)
    return float(a.mean()), float(np.percentile(a, 95))


def obstacle_phases(sc: Scenario, seed: int) -> FloatArray:
    """Per-seed time offsets of the obstacle scripts (all zero without jitter)."""
    if sc.phase_jitter <= 0 or not sc.obstacles:
        return np.zeros(len(sc.obstacles))
    rng = np.random.default_rng([seed, 1])
    return rng.uniform(0.0, sc.phase_jitter, len(sc.obstacles))


def run_episode(
    sc: Scenario,
    variant: Variant | str,
    seed: int,
    *,
    static: Optional[StaticPlan] = None,
    record_trace: bool = False,
) -> EpisodeResult:
    """Simulate one episode.

    Obstacles follow their scripts exactly; the planner sees positions with
    Gaussian noise drawn from ``uncertainty_scale * covariance`` and
    velocities from smoothed finite differences of those measurements. The
    robot executes the first planned jerk and is integrated with the same
    discrete model the planner uses. Collisions are judged on true states.
    """
    variant = Variant(variant)
    static = static or plan_static_for(sc)
    traj = static.trajectory
    n_obs = len(sc.obstacles)
    if traj is None:
        m = EpisodeMetrics(
            False, False, False, NO_OBSTACLE_DISTANCE if n_obs == 0 else float("nan"), 0.0, 0.0,
            reason=f"static plan failed: {static.message}", static_ms=static.static_ms,
        )
        return EpisodeResult(m, [], static)

    cfg = variant_config(sc.mpc, variant)
    dt = cfg.dt
    planner = ReactivePlanner(traj, sc.grid, cfg)
    samples = sample_uniform(traj, dt)
    A, B, _, _ = prediction_matrices(1, dt)

    scale = sc.uncertainty_scale
    covs = [scale * o.covariance for o in sc.obstacles]
    vcovs = [scale * o.velocity_covariance for o in sc.obstacles]
    noise_chol = [np.linalg.cholesky(c + 1e-15 * np.eye(3)) for c in covs]
    qcs = [qc_matrix(sc.robot_radius, ellipsoid_from_bbox(o.half_extents)) for o in sc.obstacles]
    phases = obstacle_phases(sc, seed)
    rng = np.random.default_rng([seed, 0])

    def truth(t: float) -> tuple[FloatArray, FloatArray]:
        if not n_obs:
            return np.zeros((0, 3)), np.zeros((0, 3))
        states = [o.state_at(t + ph) for o, ph in zip(sc.obstacles, phases)]
        return np.array([s[0] for s in states]), np.array([s[1] for s in states])

    x = np.concatenate([sc.start, np.zeros(6)])
    t = 0.0
    clock = traj.t_start
    proj = 0
    window = max(1, int(np.ceil((sc.clock_lead + 2.0) / dt)) * 4)
    prev_meas: Optional[FloatArray] = None
    v_est = np.zeros((n_obs, 3))
    d_min = NO_OBSTACLE_DISTANCE
    length = 0.0
    track_ms: list[float] = []
    meet_ms: list[float] = []
    trace: list[TraceRow] = []
    counts = dict(steps=0, avoid=0, activations=0, softened=0, emergency=0)
    last_mode = Mode.TRACKING
    collision = timeout = success = False
    reason = ""
    max_steps = int(np.ceil(sc.time_budget / dt))

    p_true, _ = truth(0.0)
    if n_obs:
        d0 = np.array([surface_distance(x[:3], p, q) for p, q in zip(p_true, qcs)])
        d_min = float(d0.min())

    for step in range(max_steps):
        # measurements
        p_true, _ = truth(t)
        if n_obs:
            z = rng.standard_normal((n_obs, 3))
            meas = p_true + np.einsum("kij,kj->ki", np.array(noise_chol), z)
            if prev_meas is not None:
                fd = (meas - prev_meas) / dt
                v_est = fd if step == 1 else VELOCITY_SMOOTHING * v_est + (1 - VELOCITY_SMOOTHING) * fd
            prev_meas = meas
            beliefs = [
                DynamicObstacle(meas[i], v_est[i], covs[i], vcovs[i], sc.obstacles[i].half_extents)
                for i in range(n_obs)
            ]
        else:
            meas = np.zeros((0, 3))
            beliefs = []

        # progress clock along the static trajectory
        proj = nearest_sample_to_point(samples, x[:3], start=proj, stop=min(len(samples), proj + window))
        t_proj = float(samples.times[proj])
        clock = float(np.clip(clock, t_proj, min(t_proj + sc.clock_lead, traj.t_end)))

        rb = RobotBelief(x[:3], x[3:6], x[6:9], sc.robot_covariance, sc.robot_radius)
        plan = planner.plan(rb, clock, beliefs)
        sol = plan.solution
        (meet_ms if plan.mode is Mode.AVOIDANCE else track_ms).append(sol.wall_ms)
        if plan.mode is Mode.AVOIDANCE:
            counts["avoid"] += 1
            if last_mode is Mode.TRACKING:
                counts["activations"] += 1
        last_mode = plan.mode
        if sol.status is MpcStatus.SOFTENED:
            counts["softened"] += 1
        if sol.status is MpcStatus.EMERGENCY or len(plan.committed) == 0:
            counts["emergency"] += 1
            u = braking_controls(x, cfg)[0]
        else:
            u = sol.controls[0]

        if record_trace:
            trace.append(TraceRow(t, plan.mode.value, sol.status.value, clock, x.copy(), plan.reference.positions[0].copy(), p_true.copy(), meas.copy(), sol.wall_ms))

        x_new = A @ x + B @ u
        length += float(np.linalg.norm(x_new[:3] - x[:3]))
        x = x_new
        t = (step + 1) * dt
        clock += dt
        counts["steps"] += 1

        p_true, _ = truth(t)
        if n_obs:
            gaps = np.array([surface_distance(x[:3], p, q) for p, q in zip(p_true, qcs)])
            d_min = min(d_min, float(gaps.min()))
            inside = [qc_norm(x[:3] - p, q) < 1.0 for p, q in zip(p_true, qcs)]
            if any(inside):
                collision, reason = True, f"hit obstacle {int(np.argmax(inside))} at t={t:.1f}"
                break
        if not sc.grid.spheres_free(x[None, :3], sc.robot_radius)[0]:
            collision, reason = True, f"hit static map at t={t:.1f}"
            break
        if np.linalg.norm(x[:3] - sc.goal) <= sc.goal_tolerance:
            success = True
            break
    else:
        timeout, reason = True, f"time budget {sc.time_budget:g} s exhausted"

    if record_trace:
        trace.append(TraceRow(t, last_mode.value, "end", clock, x.copy(), x[:3].copy(), p_true.copy(), np.full_like(p_true, np.nan)))

    tm, tp = _stats(track_ms)
    mm, mp = _stats(meet_ms)
    metrics = EpisodeMetrics(
        success=success,
        collision=collision,
        timeout=timeout,
        d_min=d_min,
        traj_length=length,
        traj_time=t,
        steps=counts["steps"],
        avoidance_steps=counts["avoid"],
        avoidance_activations=counts["activations"],
        softened_steps=counts["softened"],
        emergency_steps=counts["emergency"],
        reason=reason,
        static_ms=static.static_ms,
        mpc_track_ms_mean=tm,
        mpc_track_ms_p95=tp,
        mpc_meet_ms_mean=mm,
        mpc_meet_ms_p95=mp,
    )
    return EpisodeResult(metrics, trace, static)
