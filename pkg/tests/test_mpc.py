from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from dpmpc.dynamic.geometry import DynamicObstacle, RobotBelief, ellipsoid_from_bbox, qc_matrix, qc_norm
from dpmpc.dynamic.mpc import (
    MAP_ROW,
    Mode,
    MpcConfig,
    MpcStatus,
    ReactivePlanner,
    braking_controls,
    plan_reactive,
    prediction_matrices,
    rollout,
    solve_mpc,
)
from dpmpc.dynamic.target import tracking_reference
from dpmpc.occupancy import StaticBox, build_grid, first_collision_points
from dpmpc.trajectory import PolySegment, PolyTrajectory

CFG = MpcConfig()
ZERO = np.zeros((3, 3))


def _robot(p=(0, 0, 1), v=(0, 0, 0), a=(0, 0, 0), cov=ZERO):
    return RobotBelief(p, v, a, cov, 0.3)


def _hold(p, N=20):
    ref = np.zeros((N, 9))
    ref[:, :3] = p
    return ref


def _line_traj(speed=1.0, length=10.0):
    c = np.zeros((3, 8))
    c[0, 1] = speed
    c[2, 0] = 1.0
    return PolyTrajectory((PolySegment(c, 0.0, length / speed),))


def _tracking_cost(states, controls, ref, cfg=CFG):
    w = np.repeat([cfg.position_weight, cfg.velocity_weight, cfg.acceleration_weight], 3)
    return float(np.sum(w * (states - ref) ** 2) + cfg.input_weight * np.sum(controls**2))


class TestModel:
    def test_prediction_matches_rollout(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=9)
        U = rng.normal(size=(20, 3))
        _, _, Phi, Gamma = prediction_matrices(20, 0.1)
        stacked = (Phi @ x0 + Gamma @ U.reshape(-1)).reshape(20, 9)
        np.testing.assert_allclose(stacked, rollout(x0, U, 0.1), atol=1e-12)

    def test_exact_zoh_for_constant_jerk(self):
        # constant jerk j from rest: p = j t^3 / 6
        states = rollout(np.zeros(9), np.tile([6.0, 0.0, 0.0], (10, 1)), 0.1)
        assert states[-1, 0] == pytest.approx(1.0, abs=1e-12)
        assert states[-1, 3] == pytest.approx(3.0, abs=1e-12)

    def test_matrices_are_read_only(self):
        _, _, Phi, _ = prediction_matrices(5, 0.1)
        with pytest.raises(ValueError):
            Phi[0, 0] = 2.0

    def test_braking_reduces_speed(self):
        x0 = np.r_[0, 0, 1, 2.0, -1.0, 0, 0, 0, 0]
        states = rollout(x0, braking_controls(x0, CFG), CFG.dt)
        speed = np.linalg.norm(states[:, 3:6], axis=1)
        assert speed[-1] < 0.5 * np.linalg.norm(x0[3:6])


class TestTracking:
    def test_hover_fixed_point(self):
        sol = solve_mpc(_robot(), _hold([0, 0, 1]), [], None, CFG)
        assert sol.status is MpcStatus.OPTIMAL
        np.testing.assert_allclose(sol.controls, 0.0, atol=1e-9)
        np.testing.assert_allclose(sol.positions, np.tile([0, 0, 1], (20, 1)), atol=1e-6)

    def test_one_meter_ahead(self):
        ref = _hold([1, 0, 1])
        sol = solve_mpc(_robot(), ref, [], None, CFG)
        assert np.linalg.norm(sol.positions[-1] - [1, 0, 1]) < 1.0
        idle = rollout(np.r_[0, 0, 1, np.zeros(6)], np.zeros((20, 3)), CFG.dt)
        assert _tracking_cost(sol.states, sol.controls, ref) < _tracking_cost(idle, np.zeros((20, 3)), ref)

    def test_dynamics_residual(self):
        rb = _robot(v=(1.0, 0.5, 0.0), a=(0.2, 0, 0))
        sol = solve_mpc(rb, _hold([3, 1, 1]), [], None, CFG)
        np.testing.assert_allclose(rollout(rb.state, sol.controls, CFG.dt), sol.states, atol=1e-10)

    def test_input_bounds(self):
        cfg = dataclasses.replace(CFG, u_min=(-2.0,) * 3, u_max=(2.0,) * 3)
        sol = solve_mpc(_robot(), _hold([5, 0, 1]), [], None, cfg)
        assert np.all(np.abs(sol.controls) <= 2.0 + 1e-9)
        assert np.isclose(np.max(np.abs(sol.controls)), 2.0)

    def test_reference_shape_checked(self):
        with pytest.raises(ValueError, match="shape"):
            solve_mpc(_robot(), np.zeros((19, 9)), [], None, CFG)


class TestObstacles:
    def _blocker(self, cov=ZERO, vcov=ZERO):
        return DynamicObstacle([1.0, 0.05, 1.0], [0, 0, 0], cov, vcov, [0.2, 0.2, 0.2])

    def test_deterministic_separation_post_hoc(self):
        cfg = dataclasses.replace(CFG, delta=0.5)
        o = self._blocker()
        sol = solve_mpc(_robot(), _hold([2, 0, 1]), [o], None, cfg)
        assert sol.status is MpcStatus.OPTIMAL
        Qc = qc_matrix(0.3, ellipsoid_from_bbox(o.half_extents))
        assert np.all(qc_norm(sol.positions - o.position, Qc) >= 1 - 1e-6)
        assert np.all(sol.constraints.evaluate(sol.positions) >= -1e-7)

    def test_half_delta_equals_deterministic_variant(self):
        o = self._blocker(cov=np.eye(3) * 0.01, vcov=np.eye(3) * 0.1)
        rb = _robot(cov=np.eye(3) * 0.01)
        a = solve_mpc(rb, _hold([2, 0, 1]), [o], None, dataclasses.replace(CFG, delta=0.5))
        b = solve_mpc(rb, _hold([2, 0, 1]), [o], None, dataclasses.replace(CFG, use_chance_margin=False))
        np.testing.assert_array_equal(a.controls, b.controls)

    def test_margin_widens_detour(self):
        o = self._blocker(cov=np.eye(3) * 0.02, vcov=np.eye(3) * 0.2)
        Qc = qc_matrix(0.3, ellipsoid_from_bbox(o.half_extents))
        gaps = []
        for use in (False, True):
            sol = solve_mpc(_robot(), _hold([2, 0, 1]), [o], None, dataclasses.replace(CFG, use_chance_margin=use))
            gaps.append(np.min(qc_norm(sol.positions - o.position, Qc)))
        assert gaps[1] > gaps[0]

    def test_active_set_reported(self):
        sol = solve_mpc(_robot(), _hold([2, 0, 1]), [self._blocker()], None, dataclasses.replace(CFG, delta=0.5))
        assert any(0 in step for step in sol.active)

    def test_softened_when_start_is_inside(self):
        o = DynamicObstacle([0.2, 0.0, 1.0], [0, 0, 0], ZERO, ZERO, [0.3, 0.3, 0.3])
        sol = solve_mpc(_robot(), _hold([0, 0, 1]), [o], None, CFG)
        assert sol.status is MpcStatus.SOFTENED
        assert sol.softened_steps and sol.softened_steps[0] == 1
        assert sol.ok


class TestStaticMap:
    def test_map_rows_keep_clear_of_wall(self):
        # the reference hugs the wall closer than the robot radius allows
        grid = build_grid([StaticBox([1.0, 0.0, 1.0], [0.1, 1.0, 1.0])], ([-1, -2, 0], [3, 2, 2]), 0.1)
        ref = _hold([0.75, 0.8, 1.0])
        assert not grid.spheres_free(ref[:1, :3], 0.3)[0]
        sol = solve_mpc(_robot(p=(0.3, -0.5, 1.0)), ref, [], grid, CFG)
        assert sol.status is MpcStatus.OPTIMAL
        assert np.any(sol.constraints.obstacles == MAP_ROW)
        assert grid.spheres_free(sol.positions, 0.3).all()
        assert sol.positions[-1, 1] > 0.5

    def test_disabled_map_rows(self):
        grid = build_grid([StaticBox([1.0, 0.0, 1.0], [0.1, 1.0, 1.0])], ([-1, -2, 0], [3, 2, 2]), 0.1)
        cfg = dataclasses.replace(CFG, map_query_distance=0.0)
        sol = solve_mpc(_robot(), _hold([2.0, 0, 1]), [], grid, cfg)
        assert len(sol.constraints) == 0


class TestReactive:
    def test_no_obstacles_tracks_static_samples(self):
        traj = _line_traj()
        plan = plan_reactive(_robot(p=(1, 0, 1), v=(1, 0, 0)), traj, 1.0, [], None, CFG)
        assert plan.mode is Mode.TRACKING
        np.testing.assert_allclose(plan.reference.states, tracking_reference(traj, 1.0, 20, 0.1).states)

    def test_obstacle_ahead_switches_mode(self):
        traj = _line_traj()
        o = DynamicObstacle([3.0, 0.2, 1.0], [-0.5, 0, 0], ZERO, ZERO, [0.3, 0.3, 0.9])
        plan = plan_reactive(_robot(p=(1, 0, 1), v=(1, 0, 0)), traj, 1.0, [o], None, CFG)
        assert plan.mode is Mode.AVOIDANCE
        assert plan.obstacle == 0
        hold = CFG.horizon - CFG.split
        np.testing.assert_array_equal(plan.reference.positions[:hold], np.tile(plan.reference.positions[0], (hold, 1)))

    def test_without_temporal_goal_keeps_tracking_reference(self):
        traj = _line_traj()
        cfg = dataclasses.replace(CFG, use_temporal_goal=False)
        o = DynamicObstacle([3.0, 0.2, 1.0], [-0.5, 0, 0], ZERO, ZERO, [0.3, 0.3, 0.9])
        plan = plan_reactive(_robot(p=(1, 0, 1), v=(1, 0, 0)), traj, 1.0, [o], None, cfg)
        assert plan.mode is Mode.AVOIDANCE
        assert plan.target is None
        np.testing.assert_allclose(plan.reference.states, tracking_reference(traj, 1.0, 20, 0.1).states)

    def test_committed_prefix_stops_before_wall(self):
        # wall voxel centers from x = 1.45; with r = 0.3 step 12 (x = 1.2) is the first hit
        grid = build_grid([StaticBox([1.7, 0.0, 1.0], [0.3, 1.0, 1.0])], ([-1, -1, 0], [3, 1, 2]), 0.1)
        cfg = dataclasses.replace(CFG, map_query_distance=0.0)
        plan = plan_reactive(_robot(p=(0, 0, 1), v=(1, 0, 0)), _line_traj(), 0.0, [], grid, cfg)
        np.testing.assert_allclose(plan.solution.positions[:, 0], 0.1 * np.arange(1, 21), atol=1e-9)
        assert first_collision_points(grid, plan.solution.positions, 0.3) == 11
        assert len(plan.committed) == 11
        np.testing.assert_array_equal(plan.committed, plan.solution.states[:11])

    def test_warm_start_is_shifted_solution(self):
        traj = _line_traj()
        planner = ReactivePlanner(traj, None, CFG)
        first = planner.plan(_robot(p=(0, 0, 1), v=(1, 0, 0)), 0.0, [])
        warm = planner._warm_positions()
        np.testing.assert_array_equal(warm[:-1], first.solution.positions[1:])
        planner.reset()
        assert planner._warm_positions() is None


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(horizon=1), dict(delta=0.0), dict(delta=0.7), dict(goal_split=2), dict(goal_split=18), dict(input_weight=0.0), dict(u_min=(1.0, 1.0, 1.0), u_max=(0.0, 0.0, 0.0))],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            MpcConfig(**kw)

    def test_default_split(self):
        assert MpcConfig().split == 10
