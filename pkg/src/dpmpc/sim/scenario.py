"""Scenario files: YAML documents describing the world, the robot and the moving obstacles.

Every validation error carries the file name and the line of the offending
key, e.g. ``forest.scn:12: robot.start is inside static box 3``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml
from numpy.typing import NDArray

from dpmpc.dynamic.mpc import MpcConfig
from dpmpc.occupancy import OccupancyGrid, StaticBox, build_grid
from dpmpc.static_layer import StaticPlanConfig

FloatArray = NDArray[np.float64]

UNCERTAINTY_LEVELS = (0.25, 1.0, 4.0)
TOP_LEVEL_KEYS = frozenset({
    "name", "world", "robot", "static", "mpc", "obstacles", "uncertainty_scale", "time_budget",
    "goal_tolerance", "path_margin", "clock_lead", "phase_jitter",
    "defaults",  # free-form holder for YAML anchors
})


class ScenarioError(ValueError):
    def __init__(self, source: str, line: Optional[int], message: str):
        self.source = source
        self.line = line
        self.message = message
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ObstacleScript:
    """Ground-truth motion of one obstacle.

    With ``waypoints`` the obstacle walks ``start -> w0 -> w1 -> ... -> w_last -> start``
    at constant ``speed`` and repeats; otherwise it moves with constant ``velocity``.
    """

    start: FloatArray
    half_extents: FloatArray
    covariance: FloatArray
    velocity_covariance: FloatArray
    waypoints: Optional[FloatArray] = None
    speed: float = 0.0
    velocity: Optional[FloatArray] = None

    @cached_property
    def _loop(self) -> tuple[FloatArray, FloatArray, float]:
        pts = np.vstack([self.start, self.waypoints, self.start])
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        return pts, cum, float(cum[-1])

    @property
    def period(self) -> float:
        """Seconds per loop (``inf`` for constant-velocity scripts)."""
        if self.waypoints is None or self.speed <= 0:
            return float("inf")
        return self._loop[2] / self.speed

    def state_at(self, t: float) -> tuple[FloatArray, FloatArray]:
        """True ``(position, velocity)`` at time ``t``."""
        if self.waypoints is None:
            v = np.zeros(3) if self.velocity is None else self.velocity
            return self.start + t * v, v.copy()
        pts, cum, total = self._loop
        if total == 0.0 or self.speed == 0.0:
            return self.start.copy(), np.zeros(3)
        s = (self.speed * t) % total
        j = min(int(np.searchsorted(cum, s, side="right")) - 1, len(pts) - 2)
        d = pts[j + 1] - pts[j]
        length = cum[j + 1] - cum[j]
        u = d / length if length > 0 else np.zeros(3)
        return pts[j] + (s - cum[j]) * u, self.speed * u


@dataclass(frozen=True)
class Scenario:
    name: str
    bounds: tuple[FloatArray, FloatArray]
    resolution: float
    boxes: tuple[StaticBox, ...]
    start: FloatArray
    goal: FloatArray
    robot_radius: float
    robot_covariance: FloatArray
    obstacles: tuple[ObstacleScript, ...]
    static: StaticPlanConfig
    mpc: MpcConfig
    uncertainty_scale: float = 1.0
    time_budget: float = 60.0
    goal_tolerance: float = 0.3
    path_margin: float = 0.2
    clock_lead: float = 0.5
    phase_jitter: float = 0.0
    source: str = "<memory>"

    @cached_property
    def grid(self) -> OccupancyGrid:
        return build_grid(list(self.boxes), self.bounds, self.resolution)

    def with_uncertainty(self, scale: float) -> Scenario:
        if not scale > 0:
            raise ValueError("uncertainty scale must be positive")
        return dataclasses.replace(self, uncertainty_scale=float(scale))


# --- YAML plumbing -----------------------------------------------------------


@dataclass
class _Doc:
    """Plain Python value plus the line of every key path."""

    value: Any
    lines: dict[tuple, int] = field(default_factory=dict)


def _convert(node: yaml.Node, path: tuple, lines: dict[tuple, int]) -> Any:
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _convert(v, path + (key,), lines)
            lines[path + (key,)] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_convert(v, path + (i,), lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _parse(text: str, source: str) -> _Doc:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(source, mark.line + 1 if mark else None, f"parse error: {exc}") from None
    if node is None or not isinstance(node, yaml.MappingNode):
        raise ScenarioError(source, 1, "scenario must be a mapping")
    lines: dict[tuple, int] = {}
    return _Doc(_convert(node, (), lines), lines)


class _Reader:
    def __init__(self, doc: _Doc, source: str):
        self.doc = doc
        self.source = source

    def line(self, path: tuple) -> Optional[int]:
        while path and path not in self.doc.lines:
            path = path[:-1]
        return self.doc.lines.get(path)

    def fail(self, path: tuple, message: str) -> ScenarioError:
        return ScenarioError(self.source, self.line(path), message)

    @staticmethod
    def dotted(path: tuple) -> str:
        return ".".join(f"[{p}]" if isinstance(p, int) else str(p) for p in path).replace(".[", "[")

    def get(self, path: tuple, default: Any = ...) -> Any:
        cur = self.doc.value
        for i, key in enumerate(path):
            container_ok = isinstance(cur, dict) if isinstance(key, str) else isinstance(cur, list)
            if not container_ok:
                raise self.fail(path[:i], f"{self.dotted(path[:i]) or 'document'} has the wrong type")
            if (isinstance(key, str) and key not in cur) or (isinstance(key, int) and key >= len(cur)):
                if default is ...:
                    raise self.fail(path[:i], f"missing field '{self.dotted(path)}'")
                return default
            cur = cur[key]
        return cur

    def number(self, path: tuple, default: Any = ..., positive: bool = False) -> float:
        v = self.get(path, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
            raise self.fail(path, f"{self.dotted(path)} must be a finite number")
        if positive and v <= 0:
            raise self.fail(path, f"{self.dotted(path)} must be positive")
        return float(v)

    def vec3(self, path: tuple, default: Any = ...) -> FloatArray:
        v = self.get(path, default)
        try:
            a = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.fail(path, f"{self.dotted(path)} must be a list of 3 numbers") from None
        if a.shape != (3,) or not np.all(np.isfinite(a)):
            raise self.fail(path, f"{self.dotted(path)} must be a list of 3 finite numbers")
        return a

    def cov(self, path: tuple, default: Any = ...) -> FloatArray:
        """A 3x3 matrix, or 3 numbers taken as its diagonal."""
        v = self.get(path, default)
        try:
            a = np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise self.fail(path, f"{self.dotted(path)} must be 3 numbers or a 3x3 matrix") from None
        if a.shape == (3,):
            a = np.diag(a)
        if a.shape != (3, 3) or not np.all(np.isfinite(a)):
            raise self.fail(path, f"{self.dotted(path)} must be 3 numbers or a 3x3 matrix")
        if not np.allclose(a, a.T) or np.min(np.linalg.eigvalsh(a)) < -1e-12:
            raise self.fail(path, f"{self.dotted(path)} must be symmetric positive semidefinite")
        return a

    def config(self, path: tuple, cls: type) -> Any:
        raw = self.get(path, {})
        if not isinstance(raw, dict):
            raise self.fail(path, f"{self.dotted(path)} must be a mapping")
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in names:
                raise self.fail(path + (key,), f"unknown field '{self.dotted(path + (key,))}'")
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise self.fail(path, f"invalid {self.dotted(path)}: {exc}") from None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and validate scenario text."""
    r = _Reader(_parse(text, source), source)
    for key in r.doc.value:
        if key not in TOP_LEVEL_KEYS:
            raise r.fail((key,), f"unknown top-level key '{key}'")
    lo, hi = r.vec3(("world", "bounds", 0)), r.vec3(("world", "bounds", 1))
    if np.any(lo >= hi):
        raise r.fail(("world", "bounds"), "world.bounds min must be below max on every axis")
    res = r.number(("world", "resolution"), positive=True)

    boxes = []
    for i, _ in enumerate(r.get(("world", "boxes"), [])):
        c = r.vec3(("world", "boxes", i, "center"))
        h = r.vec3(("world", "boxes", i, "half_extents"))
        if np.any(h <= 0):
            raise r.fail(("world", "boxes", i, "half_extents"), f"box {i} half_extents must be positive")
        boxes.append(StaticBox(c, h))

    radius = r.number(("robot", "radius"), 0.3, positive=True)
    start, goal = r.vec3(("robot", "start")), r.vec3(("robot", "goal"))
    for name, p in (("start", start), ("goal", goal)):
        path = ("robot", name)
        if np.any(p < lo) or np.any(p > hi):
            raise r.fail(path, f"robot.{name} {p.tolist()} is outside the world bounds")
        for j, b in enumerate(boxes):
            if b.contains(p[None])[0]:
                raise r.fail(path, f"robot.{name} is inside static box {j}")
    robot_cov = r.cov(("robot", "covariance"), [0.0, 0.0, 0.0])

    scripts = []
    for i, _ in enumerate(r.get(("obstacles",), [])):
        base = ("obstacles", i)
        wps = r.get(base + ("waypoints",), None)
        vel = r.get(base + ("velocity",), None)
        if (wps is None) == (vel is None):
            raise r.fail(base, f"obstacle {i} needs exactly one of 'waypoints' or 'velocity'")
        h = r.vec3(base + ("half_extents",))
        if np.any(h <= 0):
            raise r.fail(base + ("half_extents",), f"obstacle {i} half_extents must be positive")
        kw: dict[str, Any] = dict(
            start=r.vec3(base + ("start",)),
            half_extents=h,
            covariance=r.cov(base + ("covariance",)),
            velocity_covariance=r.cov(base + ("velocity_covariance",)),
        )
        if wps is not None:
            if not isinstance(wps, list) or not wps:
                raise r.fail(base + ("waypoints",), f"obstacle {i} waypoints must be a non-empty list")
            kw["waypoints"] = np.array([r.vec3(base + ("waypoints", j)) for j in range(len(wps))])
            kw["speed"] = r.number(base + ("speed",))
            if kw["speed"] < 0:
                raise r.fail(base + ("speed",), f"obstacle {i} speed must be non-negative")
        else:
            kw["velocity"] = r.vec3(base + ("velocity",))
        scripts.append(ObstacleScript(**kw))

    scale = r.number(("uncertainty_scale",), 1.0, positive=True)
    sc = Scenario(
        name=str(r.get(("name",), Path(source).stem)),
        bounds=(lo, hi),
        resolution=res,
        boxes=tuple(boxes),
        start=start,
        goal=goal,
        robot_radius=radius,
        robot_covariance=robot_cov,
        obstacles=tuple(scripts),
        static=r.config(("static",), StaticPlanConfig),
        mpc=r.config(("mpc",), MpcConfig),
        uncertainty_scale=scale,
        time_budget=r.number(("time_budget",), 60.0, positive=True),
        goal_tolerance=r.number(("goal_tolerance",), 0.3, positive=True),
        path_margin=r.number(("path_margin",), 0.2),
        clock_lead=r.number(("clock_lead",), 0.5),
        phase_jitter=r.number(("phase_jitter",), 0.0),
        source=source,
    )
    grid = sc.grid
    for name, p in (("start", start), ("goal", goal)):
        if not grid.spheres_free(p[None], radius)[0]:
            raise r.fail(("robot", name), f"robot.{name} is not collision-free at radius {radius}")
    return sc


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError(str(p), None, f"cannot read scenario: {exc.strerror}") from None
    return parse_scenario(text, p.name)


def shipped_scenarios() -> dict[str, Path]:
    """Scenario files bundled with the package, keyed by stem."""
    root = Path(__file__).resolve().parent.parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.scn"))}


def shipped_scenario(name: str) -> Scenario:
    files = shipped_scenarios()
    if name not in files:
        raise KeyError(f"no shipped scenario '{name}'; available: {sorted(files)}")
    return load_scenario(files[name])
