"""Dense strictly convex QP solver (Goldfarb-Idnani dual active-set method).

Solves::

    min  0.5 x'Gx + g0'x
    s.t. CE'x + ce0  = 0
         CI'x + ci0 >= 0

The solver starts from the unconstrained minimizer and adds violated
constraints one at a time while keeping dual feasibility. The factorization
``J' N_active = [R; 0]`` with ``J = L^-T Q`` is updated with a Householder
reflection on constraint addition and Givens rotations on deletion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_triangular
from scipy.linalg.lapack import dtrtrs

FloatArray = NDArray[np.float64]

ACTIVITY_TOL = 1e-9
# ||d2||^2 / ||d||^2 below this means the constraint normal lies in the active span;
# min-snap Hessians reach cond ~1e11, where independent rows still score ~1e-17
DEPENDENCE_TOL = 1e-20
SYMMETRY_TOL = 1e-9


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    DEGENERATE = "degenerate"


@dataclass
class QpProblem:
    G: FloatArray
    g0: FloatArray
    CE: Optional[FloatArray] = None
    ce0: Optional[FloatArray] = None
    CI: Optional[FloatArray] = None
    ci0: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        n = self.G.shape[0]
        if self.G.shape != (n, n):
            raise ValueError(f"G must be square, got {self.G.shape}")
        scale = max(1.0, float(np.max(np.abs(self.G))) if n else 1.0)
        if n and np.max(np.abs(self.G - self.G.T)) > SYMMETRY_TOL * scale:
            raise ValueError("G must be symmetric")
        self.g0 = np.asarray(self.g0, dtype=float).reshape(n)
        self.CE, self.ce0 = _constraint_block(self.CE, self.ce0, n, "CE")
        self.CI, self.ci0 = _constraint_block(self.CI, self.ci0, n, "CI")
        if self.CE.shape[1] > n:
            raise ValueError("more equality constraints than variables")

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def n_eq(self) -> int:
        return self.CE.shape[1]

    @property
    def n_ineq(self) -> int:
        return self.CI.shape[1]

    def objective(self, x: ArrayLike) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.G @ x + self.g0 @ x)


def _constraint_block(C, c0, n: int, name: str) -> tuple[FloatArray, FloatArray]:
    if C is None:
        return np.zeros((n, 0)), np.zeros(0)
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C.reshape(n, -1)
    if C.shape[0] != n:
        raise ValueError(f"{name} must have {n} rows, got {C.shape}")
    c0 = np.asarray(c0, dtype=float).reshape(-1)
    if c0.shape != (C.shape[1],):
        raise ValueError(f"{name} offset length {c0.shape} does not match {C.shape[1]} constraints")
    return C, c0


@dataclass
class QpSolution:
    """Result of :func:`solve_qp`.

    Multipliers follow ``G x + g0 = CE @ lambda_eq + CI @ lambda_ineq`` with
    ``lambda_ineq >= 0``. ``active_set`` lists the active inequality indices.
    """

    x: FloatArray
    objective: float
    active_set: list[int]
    status: QpStatus
    lambda_eq: FloatArray = field(default_factory=lambda: np.zeros(0))
    lambda_ineq: FloatArray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is QpStatus.OPTIMAL


class _ActiveFactor:
    """Holds ``J`` and ``R`` for the current active set."""

    def __init__(self, J: FloatArray):
        n = J.shape[0]
        self.J0 = J.copy()
        self.J = J
        self.R = np.zeros((n, n))
        self.q = 0

    def direction(self, normal: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        q = self.q
        d = self.J.T @ normal
        z = self.J[:, q:] @ d[q:]
        if q:
            r = dtrtrs(self.R[:q, :q], d[:q], lower=0)[0]
        else:
            r = np.zeros(0)
        return d, z, r

    def dependent(self, d: FloatArray) -> bool:
        q = self.q
        total = float(d @ d)
        return total == 0.0 or float(d[q:] @ d[q:]) <= DEPENDENCE_TOL * total

    def add(self, d: FloatArray) -> bool:
        q = self.q
        if q >= self.J.shape[0] or self.dependent(d):
            return False
        v = d[q:].copy()
        sigma = float(np.linalg.norm(v))
        alpha = -sigma if v[0] >= 0 else sigma
        v[0] -= alpha
        vv = float(v @ v)
        if vv > 0:
            J2 = self.J[:, q:]
            J2 -= np.outer(J2 @ v, v * (2.0 / vv))
        self.R[:q, q] = d[:q]
        self.R[q, q] = alpha
        self.q = q + 1
        return True

    def remove(self, pos: int) -> None:
        # dropping column pos leaves R[pos:q, pos:q-1] upper Hessenberg; one
        # small QR restores the triangle and the same rotation is applied to J
        q = self.q
        R, J = self.R, self.J
        R[:, pos : q - 1] = R[:, pos + 1 : q]
        R[:, q - 1] = 0.0
        q -= 1
        if pos < q:
            Qh, Rh = np.linalg.qr(R[pos : q + 1, pos:q], mode="complete")
            R[pos : q + 1, pos:q] = Rh
            J[:, pos : q + 1] = J[:, pos : q + 1] @ Qh
        R[q, :] = 0.0
        self.q = q


def solve_qp(prob: QpProblem, max_iter: Optional[int] = None) -> QpSolution:
    """Solve a strictly convex QP; raises ``ValueError`` when ``G`` is not positive definite.

    Infeasibility is reported through ``status``, never raised.
    """
    G, g0 = prob.G, prob.g0
    n, p, m = prob.n, prob.n_eq, prob.n_ineq
    CE, ce0, CI, ci0 = prob.CE, prob.ce0, prob.CI, prob.ci0
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise ValueError("G is not positive definite") from exc
    if np.any(np.diag(L) <= 0) or not np.all(np.isfinite(L)):
        raise ValueError("G is not positive definite")

    Linv = solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    fac = _ActiveFactor(np.ascontiguousarray(Linv.T))
    x = -(fac.J @ (fac.J.T @ g0))

    # active constraint ids: equality i -> -(i+1), inequality i -> i
    active: list[int] = []
    u = np.zeros(0)

    def result(status: QpStatus, iters: int) -> QpSolution:
        lam_eq = np.zeros(p)
        lam_in = np.zeros(m)
        for k, c in enumerate(active):
            if c < 0:
                lam_eq[-c - 1] = u[k]
            else:
                lam_in[c] = u[k]
        act = sorted(c for c in active if c >= 0)
        return QpSolution(x.copy(), prob.objective(x), act, status, lam_eq, lam_in, iters)

    for i in range(p):
        normal = CE[:, i]
        d, z, r = fac.direction(normal)
        resid = float(normal @ x + ce0[i])
        if fac.dependent(d):
            if abs(resid) > ACTIVITY_TOL * (1.0 + abs(ce0[i])):
                return result(QpStatus.INFEASIBLE, 0)
            continue  # redundant equality
        t2 = -resid / float(z @ normal)
        x = x + t2 * z
        u = np.append(u - t2 * r, t2)
        fac.add(d)
        active.append(-i - 1)
    n_eq_active = len(active)

    if m == 0:
        return result(QpStatus.OPTIMAL, 0)

    tol = ACTIVITY_TOL * (1.0 + np.abs(ci0))
    is_active = np.zeros(m, dtype=bool)
    max_iter = max_iter or 50 * (n + m + p) + 100
    iters = 0
    excluded = np.zeros(m, dtype=bool)

    while True:
        s = CI.T @ x + ci0
        violated = (s < -tol) & ~is_active & ~excluded
        if not violated.any():
            if excluded.any() and np.any(s < -tol):
                return result(QpStatus.DEGENERATE, iters)
            return result(QpStatus.OPTIMAL, iters)
        ip = int(np.argmin(np.where(violated, s, np.inf)))
        normal = CI[:, ip]
        sp = float(s[ip])
        x_old, u_old, active_old = x.copy(), u.copy(), list(active)
        u = np.append(u, 0.0)

        while True:
            iters += 1
            if iters > max_iter:
                return result(QpStatus.DEGENERATE, iters)
            d, z, r = fac.direction(normal)
            # partial step: largest dual step keeping active inequality multipliers >= 0
            t1, l_pos = np.inf, -1
            q = fac.q
            if q > n_eq_active:
                rr = r[n_eq_active:q]
                pos_r = rr > 0.0
                if pos_r.any():
                    ratios = np.where(pos_r, u[n_eq_active:q] / np.where(pos_r, rr, 1.0), np.inf)
                    k = int(np.argmin(ratios))
                    t1, l_pos = float(ratios[k]), n_eq_active + k
            z_dep = fac.dependent(d)
            t2 = np.inf if z_dep else -sp / float(z @ normal)
            t = min(t1, t2)
            if not np.isfinite(t):
                u = u[:-1]
                return result(QpStatus.INFEASIBLE, iters)
            if z_dep:
                u[:q] -= t * r
                u[q] += t
                is_active[active[l_pos]] = False
                _drop(fac, active, l_pos)
                u = np.delete(u, l_pos)
                continue
            x = x + t * z
            u[:q] -= t * r
            u[q] += t
            if t == t2:
                if not fac.add(d):
                    excluded[ip] = True
                    x, u, active = x_old, u_old, active_old
                    _refactor(fac, active, CE, CI)
                    is_active[:] = False
                    is_active[[c for c in active if c >= 0]] = True
                    break
                active.append(ip)
                is_active[ip] = True
                excluded[:] = False
                break
            is_active[active[l_pos]] = False
            _drop(fac, active, l_pos)
            u = np.delete(u, l_pos)
            sp = float(normal @ x + ci0[ip])


def _drop(fac: _ActiveFactor, active: list[int], pos: int) -> None:
    fac.remove(pos)
    active.pop(pos)


def _refactor(fac: _ActiveFactor, active: list[int], CE: FloatArray, CI: FloatArray) -> None:
    """Rebuild the factorization from scratch for a restored active set."""
    fresh = _ActiveFactor(fac.J0.copy())
    for c in active:
        normal = CE[:, -c - 1] if c < 0 else CI[:, c]
        d = fresh.J.T @ normal
        fresh.add(d)
    fac.J, fac.R, fac.q = fresh.J, fresh.R, fresh.q


def kkt_residuals(prob: QpProblem, sol: QpSolution) -> dict[str, float]:
    """Stationarity, dual sign, complementarity and primal feasibility residuals."""
    x = sol.x
    grad = prob.G @ x + prob.g0 - prob.CE @ sol.lambda_eq - prob.CI @ sol.lambda_ineq
    slack = prob.CI.T @ x + prob.ci0
    eq = prob.CE.T @ x + prob.ce0
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "dual_sign": float(-np.min(sol.lambda_ineq, initial=0.0)),
        "complementarity": float(np.max(np.abs(sol.lambda_ineq * slack), initial=0.0)),
        "primal_ineq": float(-np.min(slack, initial=0.0)),
        "primal_eq": float(np.max(np.abs(eq), initial=0.0)),
    }
