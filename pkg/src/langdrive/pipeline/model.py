"""The assembled driving model: tokenizer -> topology graph -> heads, plus language branches."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .. import heads, itg_head, numkit as nk, tokenizer, topology, vl_align
from ..describer import describe
from ..scenegen import Scene
from .config import Config, ConfigError, parse_config


@dataclass
class Encoded:
    tokens: tokenizer.TokenizedScene
    q_ego: nk.Tensor
    Q_agents: nk.Tensor


class DrivingModel:
    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.tok_cfg = tokenizer.TokenizerConfig(
            extent=cfg.gen_extent, H=cfg.model_H, W=cfg.model_W, d=cfg.model_d, d_bev=cfg.model_d_bev,
            n_agents=cfg.gen_max_agents, n_map=cfg.gen_max_map)
        self.store = nk.ParamStore()
        rng = np.random.default_rng(cfg.seed)
        tokenizer.init_params(self.store, self.tok_cfg, rng)
        topology.init_params(self.store, cfg.model_d, cfg.model_layers, rng)
        vl_align.init_params(self.store, cfg.model_d, rng)
        itg_head.init_params(self.store, cfg.model_d, rng)
        heads.init_params(self.store, cfg.model_d, cfg.model_hidden, rng)

    def prepare(self, scene: Scene) -> tokenizer.PreparedScene:
        return tokenizer.prepare(scene, self.tok_cfg)

    def encode(self, prep: tokenizer.PreparedScene) -> Encoded:
        toks = tokenizer.tokenize(prep, self.store, self.tok_cfg)
        if not self.cfg.tgm_enabled:
            return Encoded(toks, toks.q_ego, toks.Q_agents)
        q_cat, cmask = topology.concat_queries(toks.q_ego, toks.Q_agents, toks.agent_mask)
        q_ego, Q_agents = topology.tgm_forward(q_cat, cmask, toks.Q_map, toks.map_mask, self.store,
                                               heads=self.cfg.model_heads)
        return Encoded(toks, q_ego, Q_agents)

    def plan_tensor(self, prep: tokenizer.PreparedScene, enc: Encoded | None = None) -> nk.Tensor:
        enc = enc or self.encode(prep)
        return heads.plan_head(enc.q_ego, prep.scene.command, self.store)

    def plan(self, scene: Scene | tokenizer.PreparedScene) -> np.ndarray:
        """Inference: 6 x 2 waypoints from the scene alone (descriptions are never read)."""
        prep = scene if isinstance(scene, tokenizer.PreparedScene) else self.prepare(scene)
        with nk.no_grad():
            return self.plan_tensor(prep).data.copy()

    def description(self, scene: Scene) -> list[int]:
        stored = scene.ald_tokens if self.cfg.describer_mode == "ald" else scene.gld_tokens
        return list(stored) if stored is not None else describe(scene, self.cfg.describer_mode)

    def decode(self, scene: Scene | tokenizer.PreparedScene) -> list[int]:
        prep = scene if isinstance(scene, tokenizer.PreparedScene) else self.prepare(scene)
        with nk.no_grad():
            enc = self.encode(prep)
            return itg_head.greedy_decode(enc.Q_agents, self.store, mask=enc.tokens.agent_mask)

    # -- checkpoints -------------------------------------------------------

    def checkpoint(self, phase: str) -> "Checkpoint":
        return Checkpoint(self.cfg, self.store.arrays(), phase)

    @classmethod
    def from_checkpoint(cls, ckpt: "Checkpoint") -> "DrivingModel":
        m = cls(ckpt.config)
        m.store.load_arrays(ckpt.arrays)
        return m


@dataclass
class Checkpoint:
    config: Config
    arrays: "OrderedDict[str, np.ndarray]"
    phase: str

    def meta(self) -> bytes:
        return json.dumps({"config": self.config.to_text(), "config_hash": self.config.hash(), "phase": self.phase},
                          sort_keys=True).encode("utf-8")

    def save(self, path) -> None:
        nk.save_params(path, self.arrays, self.meta())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        arrays, raw = nk.load_params(path)
        try:
            meta = json.loads(raw.decode("utf-8"))
            cfg = parse_config(meta["config"], f"{path}:meta")
            phase = meta["phase"]
            recorded = meta["config_hash"]
        except (ValueError, KeyError) as exc:
            raise nk.CheckpointError(f"{path}: unreadable checkpoint metadata ({exc})") from exc
        if cfg.hash() != recorded:
            raise ConfigError(f"{path}: config-hash mismatch ({cfg.hash()} != {recorded})")
        return cls(cfg, arrays, phase)


def check_compatible(cfg: Config, scenes) -> None:
    """Reject datasets whose scenes do not fit the checkpoint's configured dimensions."""
    for i, s in enumerate(scenes):
        if len(s.agents) > cfg.gen_max_agents or len(s.map) > cfg.gen_max_map:
            raise ConfigError(f"config-hash mismatch: scene {i} has {len(s.agents)} agents / {len(s.map)} "
                              f"polylines, checkpoint config {cfg.hash()} holds {cfg.gen_max_agents} / "
                              f"{cfg.gen_max_map}")
        if any(np.hypot(*a.pos) > cfg.gen_extent for a in s.agents):
            raise ConfigError(f"config-hash mismatch: scene {i} exceeds extent {cfg.gen_extent} of config {cfg.hash()}")
