"""Scene -> BEV grid -> learned BEV features -> ego / agent / map instance tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .geometry import Rect
from .layers import init_linear, init_mlp, linear, mlp
from .scenegen import CLASSES, COMMANDS, MAP_KINDS, Scene

CHANNELS = ("car", "pedestrian", "cyclist", "lane_divider", "road_boundary", "ped_crossing")
AGENT_FEATS = 10
MAP_POINTS = 10
MAP_FEATS = len(MAP_KINDS) + 2 * MAP_POINTS
SUPERSAMPLE = 4
POS_SCALE = 10.0  # metres per feature unit; keeps nearby agents distinguishable


@dataclass(frozen=True)
class TokenizerConfig:
    extent: float = 50.0
    H: int = 32
    W: int = 32
    d: int = 64
    d_bev: int = 16
    n_agents: int = 16
    n_map: int = 8

    @property
    def cell(self) -> tuple[float, float]:
        return 2 * self.extent / self.W, 2 * self.extent / self.H


@dataclass
class TokenizedScene:
    q_ego: nk.Tensor
    Q_agents: nk.Tensor
    agent_mask: np.ndarray
    Q_map: nk.Tensor
    map_mask: np.ndarray


# ---------------------------------------------------------------------------
# rasterisation


def _world_to_cell(cfg: TokenizerConfig, x, y):
    cx, cy = cfg.cell
    return (np.asarray(x) + cfg.extent) / cx, (np.asarray(y) + cfg.extent) / cy


def _paint_rect(grid: np.ndarray, ch: int, r: Rect, cfg: TokenizerConfig) -> None:
    """Paint the fraction of each cell covered by ``r`` (estimated on a sub-cell lattice)."""
    cx, cy = cfg.cell
    half = 0.5 * math.hypot(r.length, r.width)
    j0, i0 = (int(math.floor(v)) for v in _world_to_cell(cfg, r.cx - half, r.cy - half))
    j1, i1 = (int(math.floor(v)) for v in _world_to_cell(cfg, r.cx + half, r.cy + half))
    j0, i0 = max(j0, 0), max(i0, 0)
    j1, i1 = min(j1, cfg.W - 1), min(i1, cfg.H - 1)
    if j0 > j1 or i0 > i1:
        return
    sub = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    xs = -cfg.extent + (np.arange(j0, j1 + 1)[:, None] + sub[None, :]).ravel() * cx
    ys = -cfg.extent + (np.arange(i0, i1 + 1)[:, None] + sub[None, :]).ravel() * cy
    X, Y = np.meshgrid(xs, ys)  # (rows*S, cols*S)
    c, s = math.cos(r.heading), math.sin(r.heading)
    u = (X - r.cx) * c + (Y - r.cy) * s
    v = -(X - r.cx) * s + (Y - r.cy) * c
    inside = (np.abs(u) <= 0.5 * r.length) & (np.abs(v) <= 0.5 * r.width)
    nr, nc = i1 - i0 + 1, j1 - j0 + 1
    frac = inside.reshape(nr, SUPERSAMPLE, nc, SUPERSAMPLE).mean(axis=(1, 3))
    block = grid[i0 : i1 + 1, j0 : j1 + 1, ch]
    np.maximum(block, frac, out=block)


def _paint_polyline(grid: np.ndarray, ch: int, pts, cfg: TokenizerConfig) -> None:
    step = 0.25 * min(cfg.cell)
    pts = np.asarray(pts, dtype=np.float64)
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(math.ceil(np.hypot(*(b - a)) / step)) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        seg = a + t * (b - a)
        j, i = _world_to_cell(cfg, seg[:, 0], seg[:, 1])
        j, i = np.floor(j).astype(int), np.floor(i).astype(int)
        ok = (j >= 0) & (j < cfg.W) & (i >= 0) & (i < cfg.H)
        grid[i[ok], j[ok], ch] = 1.0


def rasterize(scene: Scene, cfg: TokenizerConfig = TokenizerConfig()) -> np.ndarray:
    """H x W x 6 grid in [0, 1]; row index follows +y, column index follows +x."""
    grid = np.zeros((cfg.H, cfg.W, len(CHANNELS)))
    for a in scene.agents:
        _paint_rect(grid, CLASSES.index(a.cls), Rect(a.pos[0], a.pos[1], a.heading, *a.size), cfg)
    for p in scene.map:
        _paint_polyline(grid, len(CLASSES) + MAP_KINDS.index(p.kind), p.points, cfg)
    return grid


# ---------------------------------------------------------------------------
# geometric attributes and bilinear sampling weights


def resample_polyline(points, n: int = MAP_POINTS) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(targets, s, pts[:, 0]), np.interp(targets, s, pts[:, 1])])


def agent_features(scene: Scene, extent: float) -> np.ndarray:
    rows = []
    for a in scene.agents:
        onehot = [1.0 if a.cls == c else 0.0 for c in CLASSES]
        rows.append([a.pos[0] / POS_SCALE, a.pos[1] / POS_SCALE, math.sin(a.heading), math.cos(a.heading),
                     a.speed / 10.0, a.size[0] / 5.0, a.size[1] / 5.0, *onehot])
    return np.asarray(rows, dtype=np.float64).reshape(-1, AGENT_FEATS)


def map_features(scene: Scene, extent: float) -> np.ndarray:
    rows = []
    for p in scene.map:
        onehot = [1.0 if p.kind == k else 0.0 for k in MAP_KINDS]
        rows.append(onehot + list(resample_polyline(p.points).ravel() / extent))
    return np.asarray(rows, dtype=np.float64).reshape(-1, MAP_FEATS)


def command_onehot(command: str) -> np.ndarray:
    return np.asarray([[1.0 if command == c else 0.0 for c in COMMANDS]])


def bilinear_weights(points, cfg: TokenizerConfig) -> np.ndarray:
    """(n, H*W) matrix whose rows bilinearly sample a flattened cell-centred grid."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((len(pts), cfg.H * cfg.W))
    u, v = _world_to_cell(cfg, pts[:, 0], pts[:, 1])
    u = np.clip(u - 0.5, 0.0, cfg.W - 1)
    v = np.clip(v - 0.5, 0.0, cfg.H - 1)
    for r, (x, y) in enumerate(zip(u, v)):
        j0, i0 = int(math.floor(x)), int(math.floor(y))
        j1, i1 = min(j0 + 1, cfg.W - 1), min(i0 + 1, cfg.H - 1)
        fx, fy = x - j0, y - i0
        for i, j, w in ((i0, j0, (1 - fx) * (1 - fy)), (i0, j1, fx * (1 - fy)),
                        (i1, j0, (1 - fx) * fy), (i1, j1, fx * fy)):
            out[r, i * cfg.W + j] += w
    return out


@dataclass
class PreparedScene:
    """Parameter-independent tensors derived once from a scene."""
    scene: Scene
    grid: np.ndarray  # (H*W, C)
    agent_feats: np.ndarray
    map_feats: np.ndarray
    command: np.ndarray
    agent_sample: np.ndarray
    map_sample: np.ndarray
    ego_sample: np.ndarray
    agent_mask: np.ndarray
    map_mask: np.ndarray


def prepare(scene: Scene, cfg: TokenizerConfig = TokenizerConfig()) -> PreparedScene:
    if len(scene.agents) > cfg.n_agents or len(scene.map) > cfg.n_map:
        raise ValueError(f"scene has {len(scene.agents)} agents / {len(scene.map)} polylines; "
                         f"tokenizer holds {cfg.n_agents} / {cfg.n_map}")
    grid = rasterize(scene, cfg).reshape(cfg.H * cfg.W, len(CHANNELS))
    agent_pts = [a.pos for a in scene.agents]
    map_pts = [resample_polyline(p.points).mean(axis=0) for p in scene.map]
    amask = np.zeros(cfg.n_agents, dtype=bool)
    amask[: len(scene.agents)] = True
    mmask = np.zeros(cfg.n_map, dtype=bool)
    mmask[: len(scene.map)] = True
    return PreparedScene(
        scene=scene,
        grid=grid,
        agent_feats=agent_features(scene, cfg.extent),
        map_feats=map_features(scene, cfg.extent),
        command=command_onehot(scene.command),
        agent_sample=bilinear_weights(agent_pts, cfg),
        map_sample=bilinear_weights(map_pts, cfg),
        ego_sample=bilinear_weights([(0.0, 0.0)], cfg),
        agent_mask=amask,
        map_mask=mmask,
    )


# ---------------------------------------------------------------------------
# learned parts


def init_params(store: nk.ParamStore, cfg: TokenizerConfig, rng: np.random.Generator) -> None:
    init_linear(store, "tok.bev", len(CHANNELS), cfg.d_bev, rng)
    init_linear(store, "tok.bev_proj", cfg.d_bev, cfg.d, rng, bias=False)
    init_mlp(store, "tok.agent", AGENT_FEATS, cfg.d, cfg.d, rng)
    init_mlp(store, "tok.map", MAP_FEATS, cfg.d, cfg.d, rng)
    init_mlp(store, "tok.ego", len(COMMANDS), cfg.d, cfg.d, rng)


def bev_encode(grid: np.ndarray, store: nk.ParamStore) -> nk.Tensor:
    """Per-cell affine map C -> d_bev followed by tanh; ``grid`` is (H, W, C) or (H*W, C)."""
    g = np.asarray(grid, dtype=np.float64)
    g = g.reshape(-1, g.shape[-1])
    return nk.tanh(linear(store, "tok.bev", nk.Tensor(g)))


def _instances(store, prefix, feats, sample, F_bev, total, d) -> nk.Tensor:
    n = feats.shape[0]
    if n == 0:
        return nk.zeros(total, d)
    tok = mlp(store, prefix, nk.Tensor(feats))
    sampled = nk.matmul(nk.matmul(nk.Tensor(sample), F_bev), store["tok.bev_proj.W"])
    return nk.scatter_rows(nk.add(tok, sampled), range(n), total)


def instance_tokens(F_bev: nk.Tensor, prep: PreparedScene, store: nk.ParamStore,
                    cfg: TokenizerConfig = TokenizerConfig()) -> TokenizedScene:
    q_ego = nk.add(mlp(store, "tok.ego", nk.Tensor(prep.command)),
                   nk.matmul(nk.matmul(nk.Tensor(prep.ego_sample), F_bev), store["tok.bev_proj.W"]))
    Q_agents = _instances(store, "tok.agent", prep.agent_feats, prep.agent_sample, F_bev, cfg.n_agents, cfg.d)
    Q_map = _instances(store, "tok.map", prep.map_feats, prep.map_sample, F_bev, cfg.n_map, cfg.d)
    return TokenizedScene(q_ego, Q_agents, prep.agent_mask.copy(), Q_map, prep.map_mask.copy())


def tokenize(prep: PreparedScene, store: nk.ParamStore, cfg: TokenizerConfig = TokenizerConfig()) -> TokenizedScene:
    return instance_tokens(bev_encode(prep.grid, store), prep, store, cfg)
