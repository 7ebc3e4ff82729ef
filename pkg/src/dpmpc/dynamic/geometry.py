"""Obstacle beliefs, collision ellipsoids and linearized chance constraints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import erfinv

from dpmpc.trajectory import as_vec3

FloatArray = NDArray[np.float64]


def _psd(m: ArrayLike, name: str) -> FloatArray:
    a = np.asarray(m, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.min(np.linalg.eigvalsh(a)) < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return a


@dataclass(frozen=True)
class RobotBelief:
    position: FloatArray
    velocity: FloatArray
    acceleration: FloatArray
    covariance: FloatArray
    radius: float

    def __post_init__(self) -> None:
        for name in ("position", "velocity", "acceleration"):
            object.__setattr__(self, name, as_vec3(getattr(self, name), name))
        object.__setattr__(self, "covariance", _psd(self.covariance, "robot covariance"))
        if not self.radius > 0:
            raise ValueError("robot radius must be positive")

    @property
    def state(self) -> FloatArray:
        """Stacked ``[p, v, a]`` (9,)."""
        return np.concatenate([self.position, self.velocity, self.acceleration])


@dataclass(frozen=True)
class DynamicObstacle:
    position: FloatArray
    velocity: FloatArray
    covariance: FloatArray
    velocity_covariance: FloatArray
    half_extents: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", as_vec3(self.position, "obstacle position"))
        object.__setattr__(self, "velocity", as_vec3(self.velocity, "obstacle velocity"))
        object.__setattr__(self, "covariance", _psd(self.covariance, "obstacle covariance"))
        object.__setattr__(self, "velocity_covariance", _psd(self.velocity_covariance, "obstacle velocity covariance"))
        h = as_vec3(self.half_extents, "half_extents")
        if np.any(h <= 0):
            raise ValueError("obstacle half_extents must be positive")
        object.__setattr__(self, "half_extents", h)

    @property
    def ellipsoid(self) -> EllipsoidShape:
        return ellipsoid_from_bbox(self.half_extents)


@dataclass(frozen=True)
class EllipsoidShape:
    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("ellipsoid semi-axes must be positive")

    @property
    def axes(self) -> FloatArray:
        return np.array([self.a, self.b, self.c])


def ellipsoid_from_bbox(half_extents: ArrayLike) -> EllipsoidShape:
    """Smallest-volume axis-aligned ellipsoid through all 8 box corners: semi-axes ``sqrt(3) * h``."""
    h = as_vec3(half_extents, "half_extents")
    if np.any(h <= 0):
        raise ValueError("half_extents must be positive")
    a, b, c = np.sqrt(3.0) * h
    return EllipsoidShape(float(a), float(b), float(c))


def qc_matrix(r: float, e: EllipsoidShape) -> FloatArray:
    """``diag(1/(r+a)^2, 1/(r+b)^2, 1/(r+c)^2)``: robot sphere grown into the obstacle ellipsoid."""
    if r < 0:
        raise ValueError("radius must be non-negative")
    return np.diag(1.0 / (r + e.axes) ** 2)


def qc_norm(d: ArrayLike, Qc: FloatArray) -> FloatArray:
    """``sqrt(d' Qc d)`` row-wise."""
    d = np.asarray(d, dtype=float)
    return np.sqrt(np.einsum("...i,ij,...j->...", d, Qc, d))


def surface_distance(p_r: ArrayLike, p_o: ArrayLike, Qc: FloatArray) -> FloatArray:
    """Gap along the center line to the grown ellipsoid; zero exactly when ``||p_r - p_o||_Qc = 1``."""
    d = np.asarray(p_r, dtype=float) - np.asarray(p_o, dtype=float)
    eu = np.linalg.norm(d, axis=-1)
    q = qc_norm(d, Qc)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(q > 0, eu * (1.0 - 1.0 / q), -np.inf)
    return out


def propagate_obstacle(o: DynamicObstacle, steps: int, dt: float) -> tuple[FloatArray, FloatArray]:
    """Constant-velocity belief for steps ``1..steps``.

    Returns means (steps, 3) and covariances (steps, 3, 3); row ``k-1`` is step ``k``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    k = np.arange(1, steps + 1, dtype=float)
    means = o.position + k[:, None] * dt * o.velocity
    covs = o.covariance + k[:, None, None] * (dt**2) * o.velocity_covariance
    return means, covs


class DegenerateDirection(ValueError):
    """Robot and obstacle means coincide, so no separating direction exists."""


@dataclass(frozen=True)
class HalfSpace:
    """``normal . p >= offset`` on the untransformed robot position."""

    normal: FloatArray
    offset: float
    margin: float  # chance term in transformed units

    def value(self, p: ArrayLike) -> FloatArray:
        return np.asarray(p, dtype=float) @ self.normal - self.offset


def chance_margin(direction: FloatArray, cov_sum_t: FloatArray, delta: float) -> float:
    """``erfinv(1 - 2 delta) * sqrt(2 a' Sigma a)`` in transformed coordinates."""
    if not 0.0 < delta <= 0.5:
        raise ValueError(f"delta must lie in (0, 0.5], got {delta}")
    var = float(direction @ cov_sum_t @ direction)
    return float(erfinv(1.0 - 2.0 * delta)) * np.sqrt(2.0 * max(var, 0.0))


def chance_constraint_halfspace(
    p_r_mean: ArrayLike,
    cov_r: ArrayLike,
    p_o_mean: ArrayLike,
    cov_o: ArrayLike,
    Qc: FloatArray,
    delta: float,
) -> HalfSpace:
    """Linearized collision chance constraint as a half-space in the robot position.

    In coordinates scaled by ``Qc^(1/2)`` the collision set is the unit ball
    around the obstacle; linearizing at the current robot mean gives
    ``a'(p_r,t - p_o,t) >= 1 + erfinv(1 - 2 delta) sqrt(2 a'(S_r,t + S_o,t) a)``.
    Raises :class:`DegenerateDirection` for coincident means.
    """
    Qh = np.sqrt(np.diag(np.asarray(Qc, dtype=float)))
    pr_t = Qh * as_vec3(p_r_mean, "robot mean")
    po_t = Qh * as_vec3(p_o_mean, "obstacle mean")
    diff = pr_t - po_t
    dist = float(np.linalg.norm(diff))
    if dist < 1e-12:
        raise DegenerateDirection("robot and obstacle means coincide")
    a = diff / dist
    cov_t = Qh[:, None] * (np.asarray(cov_r, dtype=float) + np.asarray(cov_o, dtype=float)) * Qh[None, :]
    margin = chance_margin(a, cov_t, delta)
    return HalfSpace(Qh * a, float(a @ po_t) + 1.0 + margin, margin)
