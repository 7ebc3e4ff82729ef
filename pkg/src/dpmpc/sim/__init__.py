"""Scenario files, closed-loop episodes and batch metrics."""

from dpmpc.sim.batch import (
    ALL_VARIANTS,
    METRIC_COLUMNS,
    Aggregate,
    BatchResult,
    BatchRow,
    format_aggregates,
    read_metrics_csv,
    run_batch,
    write_metrics_csv,
)
from dpmpc.sim.episode import (
    NO_OBSTACLE_DISTANCE,
    EpisodeMetrics,
    EpisodeResult,
    StaticPlan,
    TraceRow,
    Variant,
    plan_static_for,
    run_episode,
    variant_config,
)
from dpmpc.sim.scenario import (
    UNCERTAINTY_LEVELS,
    ObstacleScript,
    Scenario,
    ScenarioError,
    load_scenario,
    parse_scenario,
    shipped_scenario,
    shipped_scenarios,
)
from dpmpc.sim.trace import write_trace_csv

__all__ = [
    "ALL_VARIANTS",
    "METRIC_COLUMNS",
    "NO_OBSTACLE_DISTANCE",
    "UNCERTAINTY_LEVELS",
    "Aggregate",
    "BatchResult",
    "BatchRow",
    "EpisodeMetrics",
    "EpisodeResult",
    "ObstacleScript",
    "Scenario",
    "ScenarioError",
    "StaticPlan",
    "TraceRow",
    "Variant",
    "format_aggregates",
    "load_scenario",
    "parse_scenario",
    "plan_static_for",
    "read_metrics_csv",
    "run_batch",
    "run_episode",
    "shipped_scenario",
    "shipped_scenarios",
    "variant_config",
    "write_metrics_csv",
    "write_trace_csv",
]
