"""Planning metrics: L2 displacement and collision rate at 1 s / 2 s / 3 s.

Two conventions are supported:

``at_horizon``
    L2 is the error of the waypoint at exactly k seconds; a scene counts as
    colliding at horizon k if any waypoint up to k seconds collides.
``avg_up_to``
    L2 is the mean error over all waypoints up to k seconds; the collision
    value is the fraction of colliding waypoints up to k seconds.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Rect, heading_from_path, rect_intersect
from .scenegen import DT, HORIZON, Scene

MODES = ("at_horizon", "avg_up_to")
HORIZONS_S = (1, 2, 3)
CSV_HEADER = ("mode", "scenes", "l2_1s", "l2_2s", "l2_3s", "l2_avg", "cr_1s", "cr_2s", "cr_3s", "cr_avg")
EGO_SIZE = (4.5, 2.0)

__all__ = ["MODES", "CSV_HEADER", "MetricsReport", "PlanningResult", "rect_intersect", "l2_error",
           "collision_flags", "collision_rate", "evaluate", "write_metrics_csv"]


@dataclass
class PlanningResult:
    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64)
        if self.waypoints.shape != (HORIZON, 2):
            raise ValueError(f"a plan holds {HORIZON} x 2 waypoints, got {self.waypoints.shape}")
        if not np.all(np.isfinite(self.waypoints)):
            raise ValueError("plan contains non-finite waypoints")


def _as_traj(x) -> np.ndarray:
    return x.waypoints if isinstance(x, PlanningResult) else np.asarray(x, dtype=np.float64)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown metric mode {mode!r}; expected one of {MODES}")


def _steps(k: int) -> int:
    return int(round(k / DT))


def l2_error(plan, gt, mode: str = "at_horizon") -> tuple[float, float, float]:
    _check_mode(mode)
    p, g = _as_traj(plan), _as_traj(gt)
    if p.shape != g.shape or p.shape != (HORIZON, 2):
        raise ValueError(f"trajectory length mismatch: {p.shape} vs {g.shape}")
    err = np.hypot(*(p - g).T)
    if mode == "at_horizon":
        return tuple(float(err[_steps(k) - 1]) for k in HORIZONS_S)
    return tuple(float(err[: _steps(k)].mean()) for k in HORIZONS_S)


def collision_flags(plan, scene: Scene, ego_size=EGO_SIZE, dt: float = DT) -> np.ndarray:
    """Per-waypoint booleans: does the planned ego footprint overlap any agent's GT footprint?"""
    p = _as_traj(plan)
    heads = heading_from_path(p)
    flags = np.zeros(len(p), dtype=bool)
    for i, a in enumerate(scene.agents):
        fut = scene.agent_future(i)
        for k in range(len(p)):
            if flags[k]:
                continue
            ego = Rect(p[k, 0], p[k, 1], heads[k], *ego_size)
            other = Rect(fut[k, 0], fut[k, 1], a.heading_at(k + 1, dt), *a.size)
            flags[k] = rect_intersect(ego, other)
    return flags


def collision_rate(plans: Sequence, scenes: Sequence[Scene], ego_size=EGO_SIZE,
                   mode: str = "at_horizon") -> tuple[float, float, float]:
    _check_mode(mode)
    if len(plans) != len(scenes):
        raise ValueError(f"{len(plans)} plans for {len(scenes)} scenes")
    if not scenes:
        return (0.0, 0.0, 0.0)
    per_scene = []
    for plan, scene in zip(plans, scenes):
        f = collision_flags(plan, scene, ego_size)
        if mode == "at_horizon":
            per_scene.append([float(f[: _steps(k)].any()) for k in HORIZONS_S])
        else:
            per_scene.append([float(f[: _steps(k)].mean()) for k in HORIZONS_S])
    return tuple(float(v) for v in np.mean(per_scene, axis=0))


@dataclass
class MetricsReport:
    mode: str
    scenes: int
    l2: tuple[float, float, float]
    collision: tuple[float, float, float]

    @property
    def l2_avg(self) -> float:
        return sum(self.l2) / 3.0

    @property
    def cr_avg(self) -> float:
        return sum(self.collision) / 3.0

    def row(self) -> list[str]:
        vals = [*self.l2, self.l2_avg, *self.collision, self.cr_avg]
        return [self.mode, str(self.scenes)] + [f"{v:.6f}" for v in vals]


def evaluate(plans: Sequence, scenes: Sequence[Scene], mode: str = "at_horizon", ego_size=EGO_SIZE) -> MetricsReport:
    _check_mode(mode)
    if len(plans) != len(scenes):
        raise ValueError(f"{len(plans)} plans for {len(scenes)} scenes")
    if scenes:
        l2 = tuple(float(v) for v in np.mean([l2_error(p, s.ego_future, mode) for p, s in zip(plans, scenes)], axis=0))
    else:
        l2 = (0.0, 0.0, 0.0)
    return MetricsReport(mode, len(scenes), l2, collision_rate(plans, scenes, ego_size, mode))


def metrics_csv(reports: Sequence[MetricsReport], extra_cols: Sequence[str] = (), extra_vals=()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*extra_cols, *CSV_HEADER])
    for i, r in enumerate(reports):
        w.writerow([*(extra_vals[i] if extra_vals else ()), *r.row()])
    return buf.getvalue()


def write_metrics_csv(path, reports: Sequence[MetricsReport], extra_cols: Sequence[str] = (), extra_vals=()) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv(reports, extra_cols, extra_vals))
