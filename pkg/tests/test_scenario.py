from __future__ import annotations

import numpy as np
import pytest

from dpmpc.sim.scenario import (
    UNCERTAINTY_LEVELS,
    ObstacleScript,
    ScenarioError,
    load_scenario,
    parse_scenario,
    shipped_scenario,
    shipped_scenarios,
)


class TestShipped:
    def test_bundled_files(self):
        assert {"forest", "gap", "maze", "tunnel"} <= set(shipped_scenarios())

    @pytest.mark.parametrize("name", ["forest", "gap", "maze", "tunnel"])
    def test_parses_and_start_goal_free(self, name):
        sc = shipped_scenario(name)
        assert sc.grid.spheres_free(np.array([sc.start, sc.goal]), sc.robot_radius).all()

    def test_forest_has_ten_moving_obstacles(self):
        sc = shipped_scenario("forest")
        assert len(sc.obstacles) == 10
        assert sc.mpc.horizon == 20 and sc.mpc.dt == pytest.approx(0.1)

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="available"):
            shipped_scenario("nowhere")

    def test_uncertainty_levels(self):
        assert UNCERTAINTY_LEVELS == (0.25, 1.0, 4.0)


class TestValidation:
    def test_missing_field_names_field_and_line(self, corridor_text):
        text = corridor_text.replace("  goal: [7.0, 2.0, 1.5]\n", "")
        with pytest.raises(ScenarioError) as err:
            parse_scenario(text, "c.scn")
        assert "robot.goal" in str(err.value)
        assert str(err.value).startswith("c.scn:7:")  # the enclosing "robot:" key

    def test_start_inside_box(self, corridor_text):
        text = corridor_text.replace("start: [1.0, 2.0, 1.5]", "start: [4.0, 0.3, 1.5]")
        with pytest.raises(ScenarioError, match="inside static box 0") as err:
            parse_scenario(text, "c.scn")
        assert err.value.line == 8

    def test_unknown_mpc_key(self, corridor_text):
        text = corridor_text.replace("  horizon: 20\n", "  horizon: 20\n  horizn: 3\n")
        with pytest.raises(ScenarioError, match="unknown field 'mpc.horizn'"):
            parse_scenario(text, "c.scn")

    def test_unknown_top_level_key(self, corridor_text):
        with pytest.raises(ScenarioError, match="unknown top-level key 'colour'"):
            parse_scenario(corridor_text + "colour: blue\n", "c.scn")

    def test_bad_vector(self, corridor_text):
        text = corridor_text.replace("radius: 0.3", "radius: -1")
        with pytest.raises(ScenarioError, match="robot.radius must be positive"):
            parse_scenario(text, "c.scn")

    def test_invalid_mpc_value(self, corridor_text):
        text = corridor_text.replace("  dt: 0.1\n", "  dt: 0.1\n  delta: 0.9\n")
        with pytest.raises(ScenarioError, match="invalid mpc"):
            parse_scenario(text, "c.scn")

    def test_obstacle_needs_one_motion(self, corridor_text):
        text = corridor_text.replace("    speed: 0.8\n", "    speed: 0.8\n    velocity: [1, 0, 0]\n")
        with pytest.raises(ScenarioError, match="exactly one"):
            parse_scenario(text, "c.scn")

    def test_yaml_error_has_line(self):
        with pytest.raises(ScenarioError) as err:
            parse_scenario("name: x\nworld: [1, 2\n", "bad.scn")
        assert err.value.line is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="cannot read"):
            load_scenario(tmp_path / "none.scn")

    def test_full_covariance_matrix(self, corridor_text):
        text = corridor_text.replace("covariance: [0.0025, 0.0025, 0.0025]", "covariance: [[0.01, 0.001, 0], [0.001, 0.01, 0], [0, 0, 0.01]]")
        sc = parse_scenario(text, "c.scn")
        assert sc.robot_covariance[0, 1] == pytest.approx(0.001)


class TestScripts:
    def test_loop_and_period(self):
        o = ObstacleScript(np.zeros(3), np.ones(3) * 0.2, np.eye(3) * 0.01, np.eye(3), waypoints=np.array([[2.0, 0, 0]]), speed=1.0)
        assert o.period == pytest.approx(4.0)
        p, v = o.state_at(1.0)
        np.testing.assert_allclose(p, [1.0, 0, 0])
        np.testing.assert_allclose(v, [1.0, 0, 0])
        p, v = o.state_at(3.0)
        np.testing.assert_allclose(p, [1.0, 0, 0])
        np.testing.assert_allclose(v, [-1.0, 0, 0])
        np.testing.assert_allclose(o.state_at(9.0)[0], o.state_at(1.0)[0])

    def test_constant_velocity(self):
        o = ObstacleScript(np.zeros(3), np.ones(3) * 0.2, np.eye(3) * 0.01, np.eye(3), velocity=np.array([0.5, 0, 0]))
        np.testing.assert_allclose(o.state_at(2.0)[0], [1.0, 0, 0])

    def test_with_uncertainty(self, corridor):
        sc = corridor.with_uncertainty(4.0)
        assert sc.uncertainty_scale == 4.0
        assert corridor.uncertainty_scale == 1.0
        assert sc.grid is not None
