"""Rule-based scene descriptions over a closed 18-token vocabulary.

``attention_description`` keeps only agents that matter for the ego's next
3 s; ``global_description`` lists every agent within 30 m. Both emit clauses
of (class, side, distance, motion) tokens separated by SEP.
"""

from __future__ import annotations

import math

import numpy as np

from .scenegen import DT, HORIZON, AgentState, Scene

VOCAB = (
    "BOS", "EOS", "NONE", "SEP",
    "CAR", "PED", "CYCLIST",
    "AHEAD", "BEHIND", "LEFT", "RIGHT",
    "NEAR", "MID", "FAR",
    "APPROACHING", "RECEDING", "CROSSING", "STATIC",
)
TOKEN_ID = {t: i for i, t in enumerate(VOCAB)}
V = len(VOCAB)
BOS, EOS, NONE, SEP = 0, 1, 2, 3
L_MAX = 24
CLAUSE_LEN = 4

CLASS_TOKENS = {"car": TOKEN_ID["CAR"], "pedestrian": TOKEN_ID["PED"], "cyclist": TOKEN_ID["CYCLIST"]}
SIDE_TOKENS = frozenset(TOKEN_ID[t] for t in ("AHEAD", "BEHIND", "LEFT", "RIGHT"))
DIST_TOKENS = frozenset(TOKEN_ID[t] for t in ("NEAR", "MID", "FAR"))
MOTION_TOKENS = frozenset(TOKEN_ID[t] for t in ("APPROACHING", "RECEDING", "CROSSING", "STATIC"))

CORRIDOR_M = 3.5
PROXIMITY_M = 5.0
GLOBAL_RADIUS_M = 30.0
MAX_ALD_CLAUSES = 4
MAX_GLD_CLAUSES = 5


def max_clauses_for(l_max: int = L_MAX) -> int:
    # BOS + k clauses + (k - 1) SEP + EOS
    return max(0, (l_max - 1) // (CLAUSE_LEN + 1))


def decode(tokens) -> list[str]:
    return [VOCAB[t] for t in tokens]


def is_grammatical(tokens, l_max: int = L_MAX) -> bool:
    """BOS (NONE | clause (SEP clause)*) EOS, within ``l_max`` tokens."""
    toks = list(tokens)
    if len(toks) < 3 or len(toks) > l_max or toks[0] != BOS or toks[-1] != EOS:
        return False
    body = toks[1:-1]
    if BOS in body or EOS in body:
        return False
    if body == [NONE]:
        return True
    if (len(body) + 1) % (CLAUSE_LEN + 1):
        return False
    for start in range(0, len(body), CLAUSE_LEN + 1):
        c = body[start : start + CLAUSE_LEN]
        if c[0] not in CLASS_TOKENS.values() or c[1] not in SIDE_TOKENS:
            return False
        if c[2] not in DIST_TOKENS or c[3] not in MOTION_TOKENS:
            return False
        if start + CLAUSE_LEN < len(body) and body[start + CLAUSE_LEN] != SEP:
            return False
    return True


def clauses(tokens) -> list[tuple[int, ...]]:
    body = list(tokens)[1:-1]
    if body == [NONE]:
        return []
    return [tuple(body[i : i + CLAUSE_LEN]) for i in range(0, len(body), CLAUSE_LEN + 1)]


def _velocity(a: AgentState) -> np.ndarray:
    return a.speed * np.array([math.cos(a.heading), math.sin(a.heading)])


def agent_clause(agent: AgentState, ego: AgentState) -> tuple[int, int, int, int]:
    x, y = agent.pos
    if abs(y) <= abs(x):
        side = "AHEAD" if x >= 0 else "BEHIND"
    else:
        side = "LEFT" if y > 0 else "RIGHT"
    dist = math.hypot(x, y)
    bucket = "NEAR" if dist < 10.0 else ("MID" if dist < 25.0 else "FAR")
    va = _velocity(agent)
    if agent.cls == "pedestrian" and abs(va[1]) > 0.5:
        # ego path runs along +x, so lateral speed is the y component
        motion = "CROSSING"
    else:
        rel_v = va - _velocity(ego)
        rate = float(np.dot([x, y], rel_v) / dist) if dist > 0 else 0.0
        if abs(rate) < 0.2:
            motion = "STATIC"
        else:
            motion = "APPROACHING" if rate < 0 else "RECEDING"
    return (CLASS_TOKENS[agent.cls], TOKEN_ID[side], TOKEN_ID[bucket], TOKEN_ID[motion])


def _frame(cls_list: list[tuple[int, ...]]) -> list[int]:
    if not cls_list:
        return [BOS, NONE, EOS]
    out = [BOS]
    for i, c in enumerate(cls_list):
        if i:
            out.append(SEP)
        out.extend(c)
    out.append(EOS)
    return out


def closest_approach(agent: AgentState, ego_future: np.ndarray, dt: float = DT) -> tuple[float, int]:
    """(min distance, step) between the agent's constant-velocity rollout and the ego path, steps 0..6."""
    ego_path = np.vstack([[0.0, 0.0], np.asarray(ego_future)[:HORIZON]])
    t = dt * np.arange(len(ego_path))[:, None]
    agent_path = np.asarray(agent.pos)[None, :] + t * _velocity(agent)[None, :]
    d = np.hypot(*(agent_path - ego_path).T)
    k = int(np.argmin(d))
    return float(d[k]), k


def relevant_agents(scene: Scene) -> list[AgentState]:
    ranked = []
    for a in scene.agents:
        dmin, k = closest_approach(a, scene.ego_future)
        dist = math.hypot(*a.pos)
        if dmin < CORRIDOR_M or dist < PROXIMITY_M:
            ranked.append((k, dist, a.id, a))
    ranked.sort(key=lambda r: r[:3])
    return [r[3] for r in ranked]


def attention_description(scene: Scene, l_max: int = L_MAX) -> list[int]:
    cap = min(MAX_ALD_CLAUSES, max_clauses_for(l_max))
    return _frame([agent_clause(a, scene.ego) for a in relevant_agents(scene)[:cap]])


def global_description(scene: Scene, l_max: int = L_MAX) -> list[int]:
    near = [(math.hypot(*a.pos), a.id, a) for a in scene.agents if math.hypot(*a.pos) <= GLOBAL_RADIUS_M]
    near.sort(key=lambda r: r[:2])
    cap = min(MAX_GLD_CLAUSES, max_clauses_for(l_max))
    return _frame([agent_clause(r[2], scene.ego) for r in near[:cap]])


def describe(scene: Scene, mode: str = "ald") -> list[int]:
    if mode == "ald":
        return attention_description(scene)
    if mode == "gld":
        return global_description(scene)
    raise ValueError(f"unknown description mode {mode!r}")


def annotate(scene: Scene) -> Scene:
    """Fill the scene's ``ald_tokens``/``gld_tokens`` fields in place and return it."""
    scene.ald_tokens = attention_description(scene)
    scene.gld_tokens = global_description(scene)
    return scene
