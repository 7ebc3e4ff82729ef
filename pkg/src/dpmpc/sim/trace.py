"""Per-step trace CSV for plotting an episode."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from dpmpc.sim.episode import TraceRow


def trace_columns(n_obstacles: int) -> list[str]:
    cols = ["t", "mode", "status", "clock", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "ref_x", "ref_y", "ref_z"]
    for i in range(n_obstacles):
        cols += [f"o{i}_x", f"o{i}_y", f"o{i}_z", f"m{i}_x", f"m{i}_y", f"m{i}_z"]
    return cols


def write_trace_csv(trace: Sequence[TraceRow], path: str | Path) -> None:
    """Robot state, first reference point and true/measured (``o``/``m``) obstacle positions per step."""
    n_obs = len(trace[0].true_obstacles) if trace else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(n_obs))
        for r in trace:
            row = [repr(r.t), r.mode, r.status, repr(r.clock)]
            row += [repr(float(v)) for v in r.robot]
            row += [repr(float(v)) for v in r.reference]
            for o, m in zip(r.true_obstacles, r.measured_obstacles):
                row += [repr(float(v)) for v in o] + [repr(float(v)) for v in m]
            w.writerow(row)
