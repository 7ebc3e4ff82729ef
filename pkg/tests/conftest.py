from __future__ import annotations

import pytest

from dpmpc.sim.scenario import parse_scenario

CORRIDOR_SCN = """\
name: corridor
world:
  bounds: [[0, 0, 0], [8, 4, 3]]
  resolution: 0.2
  boxes:
    - {center: [4.0, 0.3, 1.5], half_extents: [0.5, 0.3, 1.5]}
robot:
  start: [1.0, 2.0, 1.5]
  goal: [7.0, 2.0, 1.5]
  radius: 0.3
  covariance: [0.0025, 0.0025, 0.0025]
static:
  desired_velocity: 1.5
mpc:
  horizon: 20
  dt: 0.1
uncertainty_scale: 1.0
time_budget: 20
obstacles:
  - start: [4.5, 3.6, 1.5]
    waypoints: [[4.5, 0.8, 1.5]]
    speed: 0.8
    half_extents: [0.25, 0.25, 0.25]
    covariance: [0.01, 0.01, 0.01]
    velocity_covariance: [0.36, 0.36, 0.36]
"""


@pytest.fixture(scope="session")
def corridor_text() -> str:
    return CORRIDOR_SCN


@pytest.fixture(scope="session")
def corridor():
    return parse_scenario(CORRIDOR_SCN, "corridor.scn")


# acceptance criterion -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[criterion] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
