"""Variant x uncertainty x seed sweeps and the metrics CSV."""

from __future__ import annotations

import csv
import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from dpmpc.sim.episode import EpisodeMetrics, StaticPlan, Variant, plan_static_for, run_episode
from dpmpc.sim.scenario import UNCERTAINTY_LEVELS, Scenario

METRIC_COLUMNS = (
    "variant",
    "uncertainty",
    "seed",
    "success",
    "d_min",
    "traj_length",
    "traj_time",
    "static_ms",
    "mpc_track_ms_p95",
    "mpc_meet_ms_p95",
)
AGGREGATE_SEED = "mean"
ALL_VARIANTS = tuple(v.value for v in Variant)


@dataclass(frozen=True)
class BatchRow:
    variant: str
    uncertainty: float
    seed: int
    metrics: EpisodeMetrics


@dataclass(frozen=True)
class Aggregate:
    """Per (variant, uncertainty) summary.

    ``d_min`` averages every episode (a collision is the least safe outcome and
    must count); length and time average successful episodes only, since a
    crashed or timed-out run has no meaningful duration.
    """

    variant: str
    uncertainty: float
    n: int
    success_rate: float
    d_min: float
    traj_length: float
    traj_time: float
    static_ms: float
    mpc_track_ms_p95: float
    mpc_meet_ms_p95: float


@dataclass
class BatchResult:
    rows: list[BatchRow]
    aggregates: list[Aggregate]

    def aggregate(self, variant: str, uncertainty: float) -> Aggregate:
        for a in self.aggregates:
            if a.variant == variant and a.uncertainty == uncertainty:
                return a
        raise KeyError((variant, uncertainty))


def _mean(values: Sequence[float]) -> float:
    a = np.asarray(values, dtype=float)
    a = a[~np.isnan(a)]
    if not len(a):
        return float("nan")
    if np.all(a == a[0]):
        return float(a[0])  # keeps the no-obstacle sentinel from overflowing
    return float(np.sum(a / len(a)))


def aggregate_rows(rows: Sequence[BatchRow]) -> list[Aggregate]:
    groups: dict[tuple[str, float], list[EpisodeMetrics]] = {}
    for r in rows:
        groups.setdefault((r.variant, r.uncertainty), []).append(r.metrics)
    out = []
    for (variant, scale), ms in groups.items():
        ok = [m for m in ms if m.success]
        out.append(
            Aggregate(
                variant,
                scale,
                len(ms),
                len(ok) / len(ms),
                _mean([m.d_min for m in ms]),
                _mean([m.traj_length for m in ok]),
                _mean([m.traj_time for m in ok]),
                _mean([m.static_ms for m in ms]),
                _mean([m.mpc_track_ms_p95 for m in ms]),
                _mean([m.mpc_meet_ms_p95 for m in ms]),
            )
        )
    return out


def _strip_timing(m: EpisodeMetrics) -> EpisodeMetrics:
    nan = float("nan")
    return dataclasses.replace(
        m, static_ms=nan, mpc_track_ms_mean=nan, mpc_track_ms_p95=nan, mpc_meet_ms_mean=nan, mpc_meet_ms_p95=nan
    )


def _episode(args: tuple[Scenario, str, float, int, StaticPlan, bool]) -> BatchRow:
    sc, variant, scale, seed, static, timing = args
    m = run_episode(sc.with_uncertainty(scale), variant, seed, static=static).metrics
    return BatchRow(variant, scale, seed, m if timing else _strip_timing(m))


def run_batch(
    sc: Scenario,
    variants: Iterable[str] = ALL_VARIANTS,
    uncertainty_scales: Iterable[float] = UNCERTAINTY_LEVELS,
    n_seeds: int = 20,
    *,
    timing: bool = True,
    workers: int = 1,
    static: Optional[StaticPlan] = None,
    progress: Optional[Callable[[BatchRow], None]] = None,
) -> BatchResult:
    """Run every (variant, scale, seed) cell with seeds ``0..n_seeds-1``.

    The static plan does not depend on the variant or the uncertainty level,
    so it is computed once. With ``timing=False`` all wall-clock fields are
    NaN, which makes the output reproducible bit for bit.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    variants = [Variant(v).value for v in variants]
    scales = [float(s) for s in uncertainty_scales]
    static = static or plan_static_for(sc)
    jobs = [(sc, v, s, seed, static, timing) for v in variants for s in scales for seed in range(n_seeds)]
    rows: list[BatchRow] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_episode, jobs):
                rows.append(row)
                if progress:
                    progress(row)
    else:
        for job in jobs:
            row = _episode(job)
            rows.append(row)
            if progress:
                progress(row)
    return BatchResult(rows, aggregate_rows(rows))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_metrics_csv(result: BatchResult, path: str | Path) -> None:
    """Per-episode rows followed by one ``seed=mean`` row per cell (``success`` is then the rate)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in result.rows:
            m = r.metrics
            w.writerow([
                r.variant, _fmt(r.uncertainty), r.seed, int(m.success), _fmt(m.d_min), _fmt(m.traj_length),
                _fmt(m.traj_time), _fmt(m.static_ms), _fmt(m.mpc_track_ms_p95), _fmt(m.mpc_meet_ms_p95),
            ])
        for a in result.aggregates:
            w.writerow([
                a.variant, _fmt(a.uncertainty), AGGREGATE_SEED, _fmt(a.success_rate), _fmt(a.d_min),
                _fmt(a.traj_length), _fmt(a.traj_time), _fmt(a.static_ms), _fmt(a.mpc_track_ms_p95),
                _fmt(a.mpc_meet_ms_p95),
            ])


def read_metrics_csv(path: str | Path) -> tuple[list[dict], list[dict]]:
    """Parse a metrics CSV back into ``(episode_rows, aggregate_rows)`` of typed dicts."""
    rows, aggs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        for raw in reader:
            rec = {k: float(raw[k]) for k in METRIC_COLUMNS[3:]}
            rec["variant"] = raw["variant"]
            rec["uncertainty"] = float(raw["uncertainty"])
            if raw["seed"] == AGGREGATE_SEED:
                rec["seed"] = AGGREGATE_SEED
                aggs.append(rec)
            else:
                rec["seed"] = int(raw["seed"])
                rec["success"] = bool(int(rec["success"]))
                rows.append(rec)
    return rows, aggs


def format_aggregates(aggs: Sequence[Aggregate]) -> str:
    """Fixed-width summary table for terminals."""
    head = f"{'variant':<18}{'scale':>6}{'n':>4}{'SR':>7}{'d_min':>8}{'length':>9}{'time':>8}{'track p95':>11}{'meet p95':>10}"
    lines = [head, "-" * len(head)]
    for a in aggs:
        d = "inf" if a.d_min > 1e300 else f"{a.d_min:.3f}"
        lines.append(
            f"{a.variant:<18}{a.uncertainty:>6g}{a.n:>4}{a.success_rate:>7.0%}{d:>8}{a.traj_length:>9.2f}"
            f"{a.traj_time:>8.2f}{a.mpc_track_ms_p95:>11.1f}{a.mpc_meet_ms_p95:>10.1f}"
        )
    return "\n".join(lines)

