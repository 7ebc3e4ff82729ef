"""Acceptance criteria 1-9. Each test records one PASS/FAIL line (shown in the run summary)."""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np
import pytest

from dpmpc.dynamic.geometry import (
    DynamicObstacle,
    RobotBelief,
    chance_constraint_halfspace,
    ellipsoid_from_bbox,
    qc_matrix,
    qc_norm,
)
from dpmpc.dynamic.mpc import MpcConfig, solve_mpc
from dpmpc.dynamic.target import select_avoidance_target
from dpmpc.global_planner import WaypointPath
from dpmpc.occupancy import build_grid
from dpmpc.qp import QpProblem, QpStatus, kkt_residuals, solve_qp
from dpmpc.sim.batch import run_batch, write_metrics_csv
from dpmpc.sim.episode import plan_static_for, run_episode
from dpmpc.sim.scenario import UNCERTAINTY_LEVELS, shipped_scenario
from dpmpc.static_layer import StaticPlanConfig, allocate_segment_times, plan_static, static_plan_report, unconstrained_minsnap
from dpmpc.trajectory import SampledTrajectory
from tests.oracles import brute_force_avoidance_target, enumerate_active_sets_qp, random_qp, rest_to_rest_coeffs

VARIANTS = ("proposed", "deterministic", "no-temporal-goal")


def test_criterion_1_qp_matches_enumeration(record):
    rng = np.random.default_rng(20240601)
    t0 = time.perf_counter()
    worst_x = worst_f = worst_kkt = 0.0
    bad = 0
    for _ in range(500):
        G, g0, CE, ce0, CI, ci0 = random_qp(rng)
        prob = QpProblem(G, g0, CE, ce0, CI, ci0)
        sol = solve_qp(prob)
        ref = enumerate_active_sets_qp(G, g0, CE, ce0, CI, ci0)
        if sol.status is not QpStatus.OPTIMAL or ref is None:
            bad += 1
            continue
        worst_x = max(worst_x, float(np.max(np.abs(sol.x - ref[0]))))
        worst_f = max(worst_f, abs(sol.objective - ref[1]))
        scale = 1.0 + float(np.max(np.abs(g0)))
        worst_kkt = max(worst_kkt, max(kkt_residuals(prob, sol).values()) / scale)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and worst_x <= 1e-6 and worst_f <= 1e-6 and worst_kkt <= 1e-7 and elapsed < 5.0
    record("1", ok, f"500 QPs, max |dx| {worst_x:.1e}, max |df| {worst_f:.1e}, max KKT {worst_kkt:.1e}, {elapsed:.2f} s")
    assert ok


def test_criterion_2_forced_minsnap(record):
    oracle = rest_to_rest_coeffs(7, 1.0, 0.0, 1.0)
    closed = np.array([0, 0, 0, 0, 35, -84, 70, -20], dtype=float)
    wp = WaypointPath((np.zeros(3), np.array([1.0, 0.0, 0.0])))
    cfg = StaticPlanConfig(degree=7, desired_velocity=1.0)
    knots = allocate_segment_times(wp, cfg.desired_velocity)
    direct = unconstrained_minsnap(wp, knots, cfg).segments[0].coeffs[0]
    # the same case through the corridor loop on an empty map
    grid = build_grid([], ([-1, -1, -1], [2, 1, 1]), 0.1)
    looped = plan_static(grid, wp, cfg, 0.3).trajectory.segments[0].coeffs[0]
    err = max(np.max(np.abs(direct - oracle)), np.max(np.abs(looped - oracle)))
    ok = float(knots[-1]) == 1.0 and err <= 1e-6 and np.max(np.abs(oracle - closed)) <= 1e-9
    record("2", ok, f"degree-7 rest-to-rest coefficients, max error {err:.1e}")
    assert ok


def test_criterion_3_gap_corridor_shrinking(record):
    sc = shipped_scenario("gap")
    static = plan_static_for(sc)
    res = static.result
    assert res is not None and res.trajectory is not None, static.message
    rep = static_plan_report(sc.grid, static.waypoints, res, sc.static, sc.robot_radius)
    ok = (
        res.success
        and res.iterations <= 10
        and rep["collisions"] == 0
        and rep["continuity"] <= 1e-6
        and rep["waypoints"] <= 1e-6
        and rep["corridor"] <= 1e-6
    )
    record(
        "3",
        ok,
        f"gap: {res.iterations} iterations, continuity {rep['continuity']:.1e}, waypoints {rep['waypoints']:.1e} m, "
        f"corridor excess {rep['corridor']:.2e} m, {int(rep['collisions'])} colliding samples",
    )
    assert ok


def _collision_rate(delta, rng, n=1_000_000):
    Qc = qc_matrix(0.3, ellipsoid_from_bbox([0.3, 0.25, 0.8]))
    S_r = np.array([[0.02, 0.005, 0.0], [0.005, 0.015, 0.002], [0.0, 0.002, 0.01]])
    S_o = np.array([[0.03, -0.004, 0.0], [-0.004, 0.02, 0.0], [0.0, 0.0, 0.015]])
    p_lin, p_o = np.array([1.6, 0.9, 1.1]), np.array([0.2, 0.3, 1.0])
    hs = chance_constraint_halfspace(p_lin, S_r, p_o, S_o, Qc, delta)
    # robot mean on the boundary of the linearized constraint
    nrm = hs.normal / np.linalg.norm(hs.normal)
    p_r = p_lin - hs.value(p_lin) / np.linalg.norm(hs.normal) * nrm
    R = rng.multivariate_normal(p_r, S_r, size=n)
    O = rng.multivariate_normal(p_o, S_o, size=n)
    # the deterministic linearized test on the sampled positions: n.(p_r - p_o) >= 1
    rate = float(np.mean((R - O) @ hs.normal < 1.0))
    return rate, abs(float(hs.value(p_r)))


def test_criterion_4_chance_calibration(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    details, ok = [], True
    for delta in (0.03, 0.1, 0.3):
        rate, on_boundary = _collision_rate(delta, rng)
        se = math.sqrt(delta * (1 - delta) / 1_000_000)
        ok &= abs(rate - delta) <= 3 * se and on_boundary < 1e-12
        details.append(f"{delta}: {rate:.5f} ({(rate - delta) / se:+.2f} SE)")
    # delta = 0.5 with zero covariance is the deterministic constraint
    Qc = qc_matrix(0.3, ellipsoid_from_bbox([0.3, 0.25, 0.8]))
    p_lin, p_o = np.array([1.6, 0.9, 1.1]), np.array([0.2, 0.3, 1.0])
    hs = chance_constraint_halfspace(p_lin, np.zeros((3, 3)), p_o, np.zeros((3, 3)), Qc, 0.5)
    Qh = np.sqrt(np.diag(Qc))
    a = Qh * (p_lin - p_o) / np.linalg.norm(Qh * (p_lin - p_o))
    pts = rng.normal(size=(100, 3)) * 2
    det_gap = float(np.max(np.abs(hs.value(pts) - ((pts - p_o) * Qh @ a - 1.0))))
    ok &= hs.margin == 0.0 and det_gap <= 1e-12
    # and in the MPC the two formulations give identical controls
    cfg = MpcConfig()
    rb = RobotBelief([0, 0, 1], [0, 0, 0], [0, 0, 0], np.zeros((3, 3)), 0.3)
    ob = DynamicObstacle([1.0, 0.05, 1.0], [0, 0, 0], np.zeros((3, 3)), np.zeros((3, 3)), [0.2, 0.2, 0.2])
    ref = np.zeros((cfg.horizon, 9))
    ref[:, :3] = [2.0, 0.0, 1.0]
    u_half = solve_mpc(rb, ref, [ob], None, dataclasses.replace(cfg, delta=0.5)).controls
    u_det = solve_mpc(rb, ref, [ob], None, dataclasses.replace(cfg, use_chance_margin=False)).controls
    ok &= bool(np.array_equal(u_half, u_det))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    record("4", ok, f"MC 1e6: {'; '.join(details)}; delta=0.5 gap {det_gap:.1e}, MPC bitwise equal; {elapsed:.1f} s")
    assert ok


def test_criterion_5_transform_and_bbox(record):
    rng = np.random.default_rng(5)
    worst = 0.0
    disagree = 0
    for _ in range(1000):
        h = rng.uniform(0.05, 1.5, 3)
        r = rng.uniform(0.0, 0.6)
        Qc = qc_matrix(r, ellipsoid_from_bbox(h))
        p_r, p_o = rng.uniform(-3, 3, 3), rng.uniform(-3, 3, 3)
        d = p_r - p_o
        quad = float(d @ Qc @ d)
        # scale space so the grown ellipsoid becomes the unit sphere
        S = np.sqrt(np.diag(Qc))
        sphere = float(np.sum((S * p_r - S * p_o) ** 2))
        worst = max(worst, abs(quad - sphere), abs(float(qc_norm(d, Qc)) ** 2 - sphere))
        disagree += (quad >= 1.0) != (sphere >= 1.0)
    corner_err = 0.0
    for _ in range(200):
        h = rng.uniform(0.01, 3.0, 3)
        axes = ellipsoid_from_bbox(h).axes
        corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * 3)).reshape(3, -1).T * h
        corner_err = max(corner_err, float(np.max(np.abs(np.sum((corners / axes) ** 2, axis=1) - 1.0))))
    ok = worst <= 1e-12 and disagree == 0 and corner_err <= 1e-12
    record("5", ok, f"1000 pairs max diff {worst:.1e}, {disagree} disagreements; bbox corners max |g-1| {corner_err:.1e}")
    assert ok


def test_criterion_6_straight_line_target(record):
    xs = np.linspace(0.0, 10.0, 101)
    P = np.c_[xs, np.zeros_like(xs), np.zeros_like(xs)]
    st = SampledTrajectory.from_points(xs, P)
    p_r, p_o, delta = np.array([3.0, 0, 0]), np.array([5.0, 0.5, 0]), 2.0
    tgt = select_avoidance_target(st, p_r, p_o, delta)
    idx, c1, c2 = brute_force_avoidance_target(P, p_r, p_o, delta)
    # scan conditions checked directly: arc length from the obstacle's nearest sample, clearance from the obstacle
    i_near = int(np.argmin(np.linalg.norm(P - p_o, axis=1)))
    cond1 = xs[c1] - xs[i_near] >= delta and c1 >= i_near and (p_o - P[c1])[0] <= 0
    cond2 = np.linalg.norm(P[c2] - p_o) >= delta and (p_o - P[c2])[0] <= 0
    first2 = all(np.linalg.norm(P[i] - p_o) < delta or (p_o - P[i])[0] > 0 for i in range(30, c2))
    ok = tgt.index == idx and P[tgt.index][0] == pytest.approx(7.0) and cond1 and cond2 and first2 and not tgt.exhausted
    record("6", ok, f"target x={P[tgt.index][0]:.2f} (candidates x={P[c1][0]:.2f}, x={P[c2][0]:.2f}), oracle index {idx}")
    assert ok


@pytest.mark.slow
def test_criterion_7_forest_trends(record):
    sc = shipped_scenario("forest")
    t0 = time.perf_counter()
    res = run_batch(sc, VARIANTS, UNCERTAINTY_LEVELS, 20)
    elapsed = time.perf_counter() - t0
    agg = res.aggregate
    a = all(agg("proposed", s).success_rate >= 0.9 for s in (0.25, 1.0))
    b = agg("proposed", 4.0).d_min > agg("deterministic", 4.0).d_min
    c = all(agg("no-temporal-goal", s).traj_time > agg("proposed", s).traj_time for s in UNCERTAINTY_LEVELS)
    d = agg("deterministic", 4.0).success_rate < agg("proposed", 4.0).success_rate
    ok = a and b and c and d and elapsed < 600
    parts = " ".join(f"{k}={'ok' if v else 'NO'}" for k, v in zip("abcd", (a, b, c, d)))
    sr = "/".join(f"{agg('proposed', s).success_rate:.0%}" for s in UNCERTAINTY_LEVELS)
    record(
        "7",
        ok,
        f"{parts}; proposed SR {sr}; d_min@4 {agg('proposed', 4.0).d_min:.3f} vs {agg('deterministic', 4.0).d_min:.3f}; "
        f"det SR@4 {agg('deterministic', 4.0).success_rate:.0%}; "
        + "time " + "/".join(f"{agg('no-temporal-goal', s).traj_time:.1f}>{agg('proposed', s).traj_time:.1f}" for s in UNCERTAINTY_LEVELS)
        + f"; {elapsed:.0f} s",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8_real_time(record):
    # static layer: corridor-shrinking loop, worst of three runs per shipped map with <= 10 waypoints
    static_ms = {}
    for name in ("forest", "gap", "tunnel"):
        sc = shipped_scenario(name)
        plans = [plan_static_for(sc) for _ in range(3)]
        assert len(plans[0].waypoints) <= 10
        static_ms[name] = max(p.static_ms for p in plans)
    # MPC: every step of forest episodes (10 obstacles, N = 20), pooled per mode over all scales
    sc = shipped_scenario("forest")
    assert len(sc.obstacles) == 10 and sc.mpc.horizon == 20
    static = plan_static_for(sc)
    track, meet = [], []
    for scale in UNCERTAINTY_LEVELS:
        for seed in range(5):
            trace = run_episode(sc.with_uncertainty(scale), "proposed", seed, static=static, record_trace=True).trace
            for row in trace[:-1]:
                (track if row.mode == "tracking" else meet).append(row.mpc_ms)
    p_track, p_meet = float(np.percentile(track, 95)), float(np.percentile(meet, 95))
    ok = max(static_ms.values()) <= 100.0 and p_track <= 50.0 and p_meet <= 50.0 and len(meet) > 100
    st = ", ".join(f"{k} {v:.0f}" for k, v in static_ms.items())
    record("8", ok, f"static ms {st}; MPC p95 tracking {p_track:.1f} ms ({len(track)} steps), meeting {p_meet:.1f} ms ({len(meet)} steps)")
    assert ok


@pytest.mark.slow
def test_criterion_9_bitwise_rerun(record, tmp_path):
    mismatched = []
    n = 0
    for name in ("forest", "gap", "maze", "tunnel"):
        sc = shipped_scenario(name)
        static = plan_static_for(sc)
        for run in ("a", "b"):
            res = run_batch(sc, VARIANTS, [1.0, 4.0], 2, timing=False, static=None if run == "b" else static)
            write_metrics_csv(res, tmp_path / f"{name}_{run}.csv")
        n += len(res.rows)
        if (tmp_path / f"{name}_a.csv").read_bytes() != (tmp_path / f"{name}_b.csv").read_bytes():
            mismatched.append(name)
    ok = not mismatched
    record("9", ok, f"{n} (scenario, variant, scale, seed) episodes rerun; mismatched CSVs: {mismatched or 'none'}")
    assert ok
