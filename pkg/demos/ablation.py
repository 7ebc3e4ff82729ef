"""A short version of the forest ablation: three variants at three uncertainty levels.

The full study uses 20 seeds per cell (``dpmpc plan --scenario forest``);
this runs a handful so it finishes in about a minute.

    python demos/ablation.py [n_seeds]
"""

from __future__ import annotations

import sys

from dpmpc.sim.batch import format_aggregates, run_batch
from dpmpc.sim.scenario import shipped_scenario


def main() -> None:
    n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    result = run_batch(shipped_scenario("forest"), n_seeds=n_seeds)
    print(format_aggregates(result.aggregates))
    print("\nd_min averages all episodes (negative means contact); length and time average successes only.")


if __name__ == "__main__":
    main()
