"""How the chance margin pushes the linearized obstacle constraint outwards.

For a robot and an obstacle with Gaussian position uncertainty, the
half-space offset grows by erfinv(1 - 2 delta) * sqrt(2 a' Sigma a). The
script prints that margin for a few risk levels and checks the resulting
collision probability by sampling.

    python demos/chance_margin.py
"""

from __future__ import annotations

import numpy as np

from dpmpc.dynamic.geometry import chance_constraint_halfspace, ellipsoid_from_bbox, qc_matrix


def main() -> None:
    rng = np.random.default_rng(0)
    Qc = qc_matrix(0.3, ellipsoid_from_bbox([0.3, 0.3, 0.9]))  # a walking person, robot radius 0.3 m
    S_r = np.diag([0.01, 0.01, 0.01])
    S_o = np.diag([0.04, 0.04, 0.01])
    p_lin, p_o = np.array([2.0, 0.5, 1.0]), np.array([0.0, 0.0, 1.0])
    n = 200_000
    print(f"{'delta':>6} {'margin':>8} {'sampled P(collision)':>22}")
    for delta in (0.5, 0.3, 0.1, 0.03, 0.01):
        hs = chance_constraint_halfspace(p_lin, S_r, p_o, S_o, Qc, delta)
        unit = hs.normal / np.linalg.norm(hs.normal)
        p_r = p_lin - hs.value(p_lin) / np.linalg.norm(hs.normal) * unit  # mean exactly on the boundary
        R = rng.multivariate_normal(p_r, S_r, size=n)
        O = rng.multivariate_normal(p_o, S_o, size=n)
        rate = np.mean((R - O) @ hs.normal < 1.0)
        print(f"{delta:>6} {hs.margin:>8.3f} {rate:>22.4f}")


if __name__ == "__main__":
    main()
