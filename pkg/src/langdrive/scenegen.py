"""Seeded synthetic driving scenes and their JSON-Lines persistence.

All coordinates live in the ego frame at t=0: ego at the origin heading +x,
+y to the left. Futures are 6 waypoints at 0.5 s spacing.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Rect, heading_from_path, rect_intersect

CLASSES = ("car", "pedestrian", "cyclist")
MAP_KINDS = ("lane_divider", "road_boundary", "ped_crossing")
COMMANDS = ("left", "straight", "right")
SCENARIOS = ("following", "crossing", "lane_change", "turn")

DT = 0.5
HORIZON = 6
LANE_WIDTH = 3.5
SCHEMA_VERSION = 1
NEIGHBOUR_P = 0.85

_CLASS_SIZES = {"car": (4.5, 2.0), "pedestrian": (0.8, 0.8), "cyclist": (1.8, 0.8)}


class DataError(ValueError):
    """Malformed dataset content."""


class UnsatisfiableSceneError(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentState:
    id: int
    cls: str
    pos: tuple[float, float]
    heading: float
    speed: float
    yaw_rate: float
    size: tuple[float, float]

    def heading_at(self, step: int, dt: float = DT) -> float:
        return self.heading + self.yaw_rate * dt * step


@dataclass(frozen=True)
class MapPolyline:
    kind: str
    points: tuple[tuple[float, float], ...]


@dataclass
class Scene:
    ego: AgentState
    agents: list[AgentState]
    map: list[MapPolyline]
    # gt_future[0] is the ego, gt_future[i + 1] belongs to agents[i]
    gt_future: list[list[tuple[float, float]]]
    command: str
    seed: int = 0
    scenario: str = ""
    ald_tokens: list[int] | None = None
    gld_tokens: list[int] | None = None

    @property
    def ego_future(self) -> np.ndarray:
        return np.asarray(self.gt_future[0], dtype=np.float64)

    def agent_future(self, i: int) -> np.ndarray:
        return np.asarray(self.gt_future[i + 1], dtype=np.float64)


@dataclass(frozen=True)
class GeneratorConfig:
    extent: float = 50.0
    max_agents: int = 16
    max_map: int = 8
    background_agents: tuple[int, int] = (1, 7)
    scenario_mix: tuple[float, float, float, float] = (0.40, 0.25, 0.20, 0.15)
    ego_size: tuple[float, float] = (4.5, 2.0)
    retries: int = 64
    dt: float = DT
    horizon: int = HORIZON

    def __post_init__(self):
        if self.extent <= 0:
            raise ValueError("extent must be positive")
        if self.max_agents < 0 or self.max_map < 0:
            raise ValueError("agent/map bounds must be non-negative")
        lo, hi = self.background_agents
        if not 0 <= lo <= hi:
            raise ValueError("background_agents must satisfy 0 <= lo <= hi")
        if len(self.scenario_mix) != len(SCENARIOS) or min(self.scenario_mix) < 0 or sum(self.scenario_mix) <= 0:
            raise ValueError("scenario_mix needs four non-negative weights with positive sum")
        if self.retries < 1:
            raise ValueError("retries must be >= 1")


def rollout_ct(state: AgentState, dt: float = DT, steps: int = HORIZON) -> list[tuple[float, float]]:
    """Constant-turn-rate rollout; returns the ``steps`` positions after each update."""
    if dt <= 0 or steps < 1:
        raise ValueError("rollout needs dt > 0 and steps >= 1")
    x, y = state.pos
    th = state.heading
    out = []
    for _ in range(steps):
        x += state.speed * math.cos(th) * dt
        y += state.speed * math.sin(th) * dt
        th += state.yaw_rate * dt
        out.append((x, y))
    return out


# ---------------------------------------------------------------------------
# road geometry: an arc of curvature ``kappa`` through the origin, heading +x


def _lane_point(kappa: float, s: float, offset: float) -> tuple[float, float, float]:
    th = kappa * s
    if abs(kappa) < 1e-12:
        px, py = s, 0.0
    else:
        px, py = math.sin(th) / kappa, (1.0 - math.cos(th)) / kappa
    return px - offset * math.sin(th), py + offset * math.cos(th), th


def _lane_polyline(kappa: float, offset: float, s0: float, s1: float, n: int = 10) -> tuple[tuple[float, float], ...]:
    return tuple(_lane_point(kappa, s, offset)[:2] for s in np.linspace(s0, s1, n))


def _lane_agent(aid, cls, kappa, s, offset, speed, size, reverse=False) -> AgentState:
    x, y, th = _lane_point(kappa, s, offset)
    # curvature of a path offset laterally from the centre arc
    k_eff = kappa / (1.0 - kappa * offset) if abs(kappa) > 1e-12 else 0.0
    if reverse:
        th += math.pi
        k_eff = -k_eff
    return AgentState(aid, cls, (x, y), _wrap(th), speed, speed * k_eff, size)


def _wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def _smoothstep(u: float) -> float:
    u = min(max(u, 0.0), 1.0)
    return u * u * (3.0 - 2.0 * u)


# ---------------------------------------------------------------------------
# generation


def _sample_scenario(rng: np.random.Generator, cfg: GeneratorConfig) -> str:
    w = np.asarray(cfg.scenario_mix, dtype=np.float64)
    return SCENARIOS[int(rng.choice(len(SCENARIOS), p=w / w.sum()))]


def _background(rng, kappa, count, extent) -> list[AgentState]:
    out = []
    for _ in range(count):
        kind = int(rng.integers(5))
        s = float(rng.uniform(-0.7, 0.8) * extent)
        jitter = float(rng.normal(0.0, 0.4))
        if kind == 0:  # oncoming car on the left lane
            a = _lane_agent(0, "car", kappa, s, LANE_WIDTH + jitter, float(rng.uniform(4, 12)), (4.5, 2.0),
                            reverse=True)
        elif kind == 1:  # same-direction car on the right lane
            a = _lane_agent(0, "car", kappa, s, -LANE_WIDTH + jitter, float(rng.uniform(4, 12)), (4.5, 2.0))
        elif kind == 2:  # parked car beside the road
            side = 1.0 if rng.random() < 0.5 else -1.0
            a = _lane_agent(0, "car", kappa, s, side * 6.5, 0.0, (4.5, 2.0))
        elif kind == 3:  # pedestrian on the sidewalk
            side = 1.0 if rng.random() < 0.5 else -1.0
            a = _lane_agent(0, "pedestrian", kappa, s, side * 7.0 + jitter, float(rng.uniform(0.0, 1.6)),
                            (0.8, 0.8), reverse=bool(rng.random() < 0.5))
        else:  # cyclist at the right road edge
            a = _lane_agent(0, "cyclist", kappa, s, -4.2 + 0.5 * jitter, float(rng.uniform(2, 6)), (1.8, 0.8))
        out.append(a)
    return out


def _neighbour(rng, kappa, ego_speed, side: float = 0.0) -> AgentState:
    """A car in an adjacent lane roughly alongside the ego, moving with the traffic."""
    if side == 0.0:
        side = 1.0 if rng.random() < 0.5 else -1.0
    return _lane_agent(0, "car", kappa, float(rng.uniform(-6, 8)), side * (LANE_WIDTH - 0.3 + float(rng.normal(0, 0.25))),
                       max(0.0, ego_speed + float(rng.uniform(-3, 3))), (4.5, 2.0))


def _attempt(rng: np.random.Generator, cfg: GeneratorConfig):
    scenario = _sample_scenario(rng, cfg)
    extent = cfg.extent
    kappa = float(rng.uniform(-0.006, 0.006))
    agents: list[AgentState] = []
    lateral_target, change_time = 0.0, 3.0
    command = "straight"
    crossing_s = None

    if scenario == "following":
        v_lead = float(rng.uniform(4, 12))
        s_lead = float(rng.uniform(10, 30))
        agents.append(_lane_agent(0, "car", kappa, s_lead, 0.0, v_lead, (4.5, 2.0)))
        ego_speed = max(2.0, v_lead + float(rng.uniform(-1.5, 1.0)))
    elif scenario == "crossing":
        ego_speed = float(rng.uniform(3, 8))
        crossing_s = float(rng.uniform(12, 30))
        side = 1.0 if rng.random() < 0.5 else -1.0
        ped_speed = float(rng.uniform(1.0, 1.8))
        # start so the pedestrian reaches the ego lane roughly when the ego does
        reach = crossing_s / ego_speed
        start = min(9.0, max(2.5, ped_speed * reach * float(rng.uniform(0.3, 1.3))))
        x, y, th = _lane_point(kappa, crossing_s, side * start)
        agents.append(AgentState(0, "pedestrian", (x, y), _wrap(th - side * math.pi / 2), ped_speed, 0.0, (0.8, 0.8)))
    elif scenario == "lane_change":
        ego_speed = float(rng.uniform(5, 12))
        lateral_target = LANE_WIDTH if rng.random() < 0.5 else -LANE_WIDTH
        change_time = float(rng.uniform(2.5, 4.0))
        command = "left" if lateral_target > 0 else "right"
        if rng.random() < 0.7:
            agents.append(_lane_agent(0, "car", kappa, float(rng.uniform(15, 35)), lateral_target,
                                      float(rng.uniform(6, 12)), (4.5, 2.0)))
        if rng.random() < 0.5:
            agents.append(_lane_agent(0, "car", kappa, float(rng.uniform(12, 30)), 0.0,
                                      float(rng.uniform(2, 6)), (4.5, 2.0)))
    else:  # turn on an empty road
        sign = 1.0 if rng.random() < 0.5 else -1.0
        kappa = sign * float(rng.uniform(1 / 40, 1 / 15))
        ego_speed = float(rng.uniform(3, 8))
        command = "left" if sign > 0 else "right"

    if rng.random() < NEIGHBOUR_P:
        agents.insert(1 if scenario == "following" else 0,
                      _neighbour(rng, kappa, ego_speed, side=-math.copysign(1.0, lateral_target) if lateral_target else 0.0))
    if scenario != "turn":
        lo, hi = cfg.background_agents
        agents.extend(_background(rng, kappa, int(rng.integers(lo, hi + 1)), extent))
    agents = agents[: cfg.max_agents]
    agents = [replace(a, id=i + 1) for i, a in enumerate(agents)]

    s_hi = 0.8 * extent
    polylines = [
        MapPolyline("lane_divider", _lane_polyline(kappa, 0.5 * LANE_WIDTH, -0.3 * extent, s_hi)),
        MapPolyline("lane_divider", _lane_polyline(kappa, -0.5 * LANE_WIDTH, -0.3 * extent, s_hi)),
        MapPolyline("road_boundary", _lane_polyline(kappa, 1.5 * LANE_WIDTH, -0.3 * extent, s_hi)),
        MapPolyline("road_boundary", _lane_polyline(kappa, -1.5 * LANE_WIDTH, -0.3 * extent, s_hi)),
    ]
    if crossing_s is None and scenario != "turn" and rng.random() < 0.3:
        crossing_s = float(rng.uniform(10, 35))
    if crossing_s is not None:
        a = _lane_point(kappa, crossing_s, -1.5 * LANE_WIDTH)[:2]
        b = _lane_point(kappa, crossing_s, 1.5 * LANE_WIDTH)[:2]
        polylines.append(MapPolyline("ped_crossing", (a, b)))
    polylines = polylines[: cfg.max_map]

    ego_future = []
    for k in range(1, cfg.horizon + 1):
        t = k * cfg.dt
        off = lateral_target * _smoothstep(t / change_time)
        ego_future.append(_lane_point(kappa, ego_speed * t, off)[:2])
    ego = AgentState(0, "car", (0.0, 0.0), 0.0, ego_speed, ego_speed * kappa, cfg.ego_size)
    futures = [ego_future] + [rollout_ct(a, cfg.dt, cfg.horizon) for a in agents]
    return Scene(ego, agents, polylines, futures, command, scenario=scenario)


def ego_collides(scene: Scene, dt: float = DT) -> bool:
    """Does the ego ground-truth future overlap any agent's ground-truth footprint?"""
    fut = scene.ego_future
    heads = heading_from_path(fut)
    L, W = scene.ego.size
    start = Rect(0.0, 0.0, 0.0, L, W)
    for i, a in enumerate(scene.agents):
        if rect_intersect(start, Rect(a.pos[0], a.pos[1], a.heading, *a.size)):
            return True
        af = scene.agent_future(i)
        for k in range(len(fut)):
            ego_r = Rect(fut[k, 0], fut[k, 1], heads[k], L, W)
            ag_r = Rect(af[k, 0], af[k, 1], a.heading_at(k + 1, dt), *a.size)
            if rect_intersect(ego_r, ag_r):
                return True
    return False


def validate_scene(scene: Scene, cfg: GeneratorConfig = GeneratorConfig()) -> list[str]:
    """Return human-readable invariant violations (empty when the scene is valid)."""
    bad = []
    R = cfg.extent
    if scene.ego.id != 0 or scene.ego.cls != "car":
        bad.append("ego must be id 0, class car")
    if len(scene.agents) > cfg.max_agents:
        bad.append(f"{len(scene.agents)} agents > {cfg.max_agents}")
    if len(scene.map) > cfg.max_map:
        bad.append(f"{len(scene.map)} polylines > {cfg.max_map}")
    if scene.command not in COMMANDS:
        bad.append(f"unknown command {scene.command!r}")
    for a in [scene.ego] + scene.agents:
        if a.cls not in CLASSES:
            bad.append(f"agent {a.id}: unknown class {a.cls!r}")
        if a.speed < 0:
            bad.append(f"agent {a.id}: negative speed")
        if a.size[0] <= 0 or a.size[1] <= 0:
            bad.append(f"agent {a.id}: non-positive size")
        if math.hypot(*a.pos) > R:
            bad.append(f"agent {a.id}: outside extent")
    for p in scene.map:
        if p.kind not in MAP_KINDS:
            bad.append(f"unknown polyline kind {p.kind!r}")
        if not 2 <= len(p.points) <= 10:
            bad.append(f"polyline with {len(p.points)} points")
        if any(p.points[i] == p.points[i + 1] for i in range(len(p.points) - 1)):
            bad.append("polyline with repeated consecutive points")
        if any(math.hypot(*q) > R for q in p.points):
            bad.append("polyline point outside extent")
    if len(scene.gt_future) != len(scene.agents) + 1:
        bad.append("gt_future count does not match agents")
    for f in scene.gt_future:
        if len(f) != HORIZON:
            bad.append(f"future of length {len(f)}")
    for i in range(len(scene.agents)):
        if len(scene.gt_future) > i + 1 and np.hypot(*scene.agent_future(i).T).max() > 1.5 * R:
            bad.append(f"agent {scene.agents[i].id}: future leaves 1.5x extent")
    if not bad and ego_collides(scene, cfg.dt):
        bad.append("ego ground truth collides")
    return bad


def generate_scene(seed: int, cfg: GeneratorConfig = GeneratorConfig()) -> Scene:
    rng = np.random.default_rng(seed)
    for _ in range(cfg.retries):
        scene = _attempt(rng, cfg)
        scene.seed = int(seed)
        if not validate_scene(scene, cfg):
            return scene
    raise UnsatisfiableSceneError("unsatisfiable scene config")


def generate_dataset(seeds: Iterable[int], cfg: GeneratorConfig = GeneratorConfig()) -> list[Scene]:
    return [generate_scene(s, cfg) for s in seeds]


# ---------------------------------------------------------------------------
# JSON-Lines persistence


def _fmt(obj) -> str:
    # json.dumps would emit shortest-repr floats; records pin 17 significant digits
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise DataError("non-finite float in scene")
        text = format(x, ".17g")
        # keep float syntax so -0.0 and integral values read back as floats
        return text if any(ch in text for ch in ".e") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_fmt(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_fmt(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _agent_dict(a: AgentState) -> dict:
    return {"id": a.id, "class": a.cls, "pos": list(a.pos), "heading": a.heading, "speed": a.speed,
            "yaw_rate": a.yaw_rate, "size": list(a.size)}


def scene_to_dict(scene: Scene) -> dict:
    d = {
        "schema_version": SCHEMA_VERSION,
        "seed": scene.seed,
        "scenario": scene.scenario,
        "command": scene.command,
        "ego": _agent_dict(scene.ego),
        "agents": [_agent_dict(a) for a in scene.agents],
        "map": [{"kind": p.kind, "points": [list(q) for q in p.points]} for p in scene.map],
        "gt_future": [[list(w) for w in f] for f in scene.gt_future],
    }
    if scene.ald_tokens is not None:
        d["ald_tokens"] = list(scene.ald_tokens)
    if scene.gld_tokens is not None:
        d["gld_tokens"] = list(scene.gld_tokens)
    return d


def _pair(v) -> tuple[float, float]:
    x, y = v
    return float(x), float(y)


def _agent_from(d: dict) -> AgentState:
    return AgentState(int(d["id"]), str(d["class"]), _pair(d["pos"]), float(d["heading"]), float(d["speed"]),
                      float(d["yaw_rate"]), _pair(d["size"]))


def scene_from_dict(d: dict) -> Scene:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported schema_version {d.get('schema_version')!r}")
    return Scene(
        ego=_agent_from(d["ego"]),
        agents=[_agent_from(a) for a in d["agents"]],
        map=[MapPolyline(str(p["kind"]), tuple(_pair(q) for q in p["points"])) for p in d["map"]],
        gt_future=[[_pair(w) for w in f] for f in d["gt_future"]],
        command=str(d["command"]),
        seed=int(d.get("seed", 0)),
        scenario=str(d.get("scenario", "")),
        ald_tokens=[int(t) for t in d["ald_tokens"]] if "ald_tokens" in d else None,
        gld_tokens=[int(t) for t in d["gld_tokens"]] if "gld_tokens" in d else None,
    )


def dumps_scene(scene: Scene) -> str:
    return _fmt(scene_to_dict(scene))


def write_dataset(scenes: Sequence[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            fh.write(dumps_scene(s))
            fh.write("\n")


def read_dataset(path) -> list[Scene]:
    scenes = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            scenes.append(scene_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: line {lineno}: malformed scene record ({exc})") from exc
    return scenes
