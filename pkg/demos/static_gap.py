"""Corridor shrinking on the bundled gap map.

The grid path squeezes through a 1 m opening in a 1 m thick wall. The
unconstrained minimum-snap curve through those waypoints clips the wall, so
the corridor box around the waypoint chords is shrunk until the sampled
trajectory is clear.

    python demos/static_gap.py
"""

from __future__ import annotations

from dpmpc.occupancy import first_collision
from dpmpc.sim.episode import plan_static_for
from dpmpc.sim.scenario import shipped_scenario
from dpmpc.static_layer import static_plan_report
from dpmpc.trajectory import sample_uniform


def main() -> None:
    sc = shipped_scenario("gap")
    plan = plan_static_for(sc)
    res = plan.result
    print(f"waypoints ({len(plan.waypoints)}):")
    for p in plan.waypoints.waypoints:
        print(f"  {p.round(2)}")

    hit = first_collision(sc.grid, sample_uniform(res.unconstrained, sc.static.sample_dt), sc.robot_radius)
    print(f"unconstrained min-snap first collides at sample {hit}")
    print("corridor half-widths tried:", ", ".join(f"{c:.3f}" for c in res.corridor_history))
    print(f"{res.message} after {res.iterations} iterations in {res.wall_ms:.1f} ms")

    rep = static_plan_report(sc.grid, plan.waypoints, res, sc.static, sc.robot_radius)
    print(f"continuity {rep['continuity']:.1e}, waypoint error {rep['waypoints']:.1e} m, corridor excess {rep['corridor']:.1e} m")
    traj = res.trajectory
    print(f"duration {traj.t_end - traj.t_start:.2f} s over {len(traj.segments)} segments")


if __name__ == "__main__":
    main()
