"""Planning, motion, and auxiliary detection/map heads over refined tokens."""

from __future__ import annotations

import math

import numpy as np

from . import numkit as nk
from .layers import init_mlp, mlp
from .scenegen import COMMANDS, HORIZON, Scene
from .tokenizer import MAP_POINTS, command_onehot, resample_polyline

# heads emit waypoints in units of this many metres
TRAJ_SCALE = 10.0
DET_FEATS = 6


def init_params(store: nk.ParamStore, d: int, hidden: int, rng: np.random.Generator) -> None:
    init_mlp(store, "head.plan", d + len(COMMANDS), hidden, 2 * HORIZON, rng, zero_out=True)
    init_mlp(store, "head.motion", d, hidden, 2 * HORIZON, rng, zero_out=True)
    init_mlp(store, "head.det", d, hidden, DET_FEATS, rng, zero_out=True)
    init_mlp(store, "head.map", d, hidden, 2 * MAP_POINTS, rng, zero_out=True)


def plan_head(q_ego: nk.Tensor, command: str, store: nk.ParamStore) -> nk.Tensor:
    """6 x 2 ego waypoints in metres."""
    x = nk.concat_cols([q_ego, nk.Tensor(command_onehot(command))])
    return nk.reshape(nk.scale(mlp(store, "head.plan", x), TRAJ_SCALE), HORIZON, 2)


def _valid_rows(Q: nk.Tensor, mask) -> tuple[nk.Tensor | None, np.ndarray]:
    idx = np.flatnonzero(np.asarray(mask, dtype=bool))
    if len(idx) == 0:
        return None, idx
    return (Q if len(idx) == Q.shape[0] else nk.take_rows(Q, idx)), idx


def motion_head(Q_agents: nk.Tensor, mask, store: nk.ParamStore) -> nk.Tensor | None:
    """(n_valid, 12) rows of flattened 6 x 2 waypoints in metres, or None when no agent is valid."""
    rows, _ = _valid_rows(Q_agents, mask)
    if rows is None:
        return None
    return nk.scale(mlp(store, "head.motion", rows), TRAJ_SCALE)


def imitation_loss(pred: nk.Tensor, gt) -> nk.Tensor:
    """Mean squared Euclidean distance over (x, y) waypoints; any layout with interleaved x, y."""
    gt = nk.as_tensor(gt)
    if pred.shape != gt.shape:
        raise nk.ShapeError(f"imitation_loss: {pred.shape} vs {gt.shape}")
    diff = nk.sub(pred, gt)
    return nk.scale(nk.sum(nk.mul(diff, diff)), 2.0 / pred.data.size)


def det_targets(scene: Scene, extent: float) -> np.ndarray:
    return np.asarray([[a.pos[0] / extent, a.pos[1] / extent, math.sin(a.heading), math.cos(a.heading),
                        a.speed / 10.0, math.log(a.size[0] * a.size[1])] for a in scene.agents]).reshape(-1, DET_FEATS)


def map_targets(scene: Scene, extent: float) -> np.ndarray:
    return np.asarray([resample_polyline(p.points).ravel() / extent for p in scene.map]).reshape(-1, 2 * MAP_POINTS)


def _mse(pred: nk.Tensor, target: np.ndarray) -> nk.Tensor:
    diff = nk.sub(pred, nk.Tensor(target))
    return nk.mean(nk.mul(diff, diff))


def aux_losses(Q_agents: nk.Tensor, agent_mask, Q_map: nk.Tensor, map_mask, scene: Scene,
               store: nk.ParamStore, extent: float) -> tuple[nk.Tensor, nk.Tensor]:
    """(det_loss, map_loss); a loss over an empty set is 0."""
    agents, _ = _valid_rows(Q_agents, agent_mask)
    det = _mse(mlp(store, "head.det", agents), det_targets(scene, extent)) if agents is not None else nk.zeros(1, 1)
    polys, _ = _valid_rows(Q_map, map_mask)
    mp = _mse(mlp(store, "head.map", polys), map_targets(scene, extent)) if polys is not None else nk.zeros(1, 1)
    return det, mp
