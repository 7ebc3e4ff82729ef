"""Reactive layer: obstacle beliefs, chance constraints, temporal goal and MPC."""

from dpmpc.dynamic.geometry import (
    DegenerateDirection,
    DynamicObstacle,
    EllipsoidShape,
    HalfSpace,
    RobotBelief,
    chance_constraint_halfspace,
    chance_margin,
    ellipsoid_from_bbox,
    propagate_obstacle,
    qc_matrix,
    qc_norm,
    surface_distance,
)
from dpmpc.dynamic.mpc import (
    Mode,
    MpcConfig,
    MpcSolution,
    MpcStatus,
    ReactivePlan,
    ReactivePlanner,
    plan_reactive,
    prediction_matrices,
    rollout,
    solve_mpc,
)
from dpmpc.dynamic.target import (
    AvoidanceTarget,
    ReferenceSequence,
    build_temporal_goal,
    meets_obstacle,
    select_avoidance_target,
    tracking_reference,
)

__all__ = [
    "AvoidanceTarget",
    "DegenerateDirection",
    "DynamicObstacle",
    "EllipsoidShape",
    "HalfSpace",
    "Mode",
    "MpcConfig",
    "MpcSolution",
    "MpcStatus",
    "ReactivePlan",
    "ReactivePlanner",
    "ReferenceSequence",
    "RobotBelief",
    "build_temporal_goal",
    "chance_constraint_halfspace",
    "chance_margin",
    "ellipsoid_from_bbox",
    "meets_obstacle",
    "plan_reactive",
    "prediction_matrices",
    "propagate_obstacle",
    "qc_matrix",
    "qc_norm",
    "rollout",
    "select_avoidance_target",
    "solve_mpc",
    "surface_distance",
    "tracking_reference",
]
