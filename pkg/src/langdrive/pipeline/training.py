"""Two-phase training: language pre-training (ITM + ITG), then end-to-end driving."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import heads, itg_head, numkit as nk, vl_align
from ..describer import describe
from ..evalkit import MetricsReport, evaluate
from ..scenegen import Scene
from .config import Config, ConfigError
from .model import Checkpoint, DrivingModel, check_compatible
from .optim import AdamWState, adamw_step, cosine_lr

log = logging.getLogger(__name__)

PHASE1_PARAMS = ("tok.", "tgm.", "lang.", "itg.")
COMPONENTS = ("plan", "motion", "det", "map", "itg", "itm")


class NumericError(FloatingPointError):
    pass


@dataclass
class TrainLog:
    steps: list[dict] = field(default_factory=list)

    def column(self, key: str) -> list[float]:
        return [s[key] for s in self.steps if key in s]


def _weights(cfg: Config, phase: str) -> dict[str, float]:
    lang = cfg.lgam_enabled
    w = {"itm": cfg.loss_itm if lang else 0.0, "itg": cfg.loss_itg if lang else 0.0}
    if phase == "phase2":
        w.update(plan=cfg.loss_plan, motion=cfg.loss_motion, det=cfg.loss_det, map=cfg.loss_map)
    return {k: v for k, v in w.items() if v > 0}


def _scene_terms(model: DrivingModel, prep, desc, weights) -> tuple[dict[str, nk.Tensor], nk.Tensor]:
    enc = model.encode(prep)
    store, scene = model.store, prep.scene
    terms: dict[str, nk.Tensor] = {}
    scale2 = 1.0 / heads.TRAJ_SCALE ** 2
    if "plan" in weights:
        plan = heads.plan_head(enc.q_ego, scene.command, store)
        terms["plan"] = nk.scale(heads.imitation_loss(plan, scene.ego_future), scale2)
    if "motion" in weights:
        pred = heads.motion_head(enc.Q_agents, enc.tokens.agent_mask, store)
        if pred is None:
            terms["motion"] = nk.zeros(1, 1)
        else:
            gt = np.asarray([scene.agent_future(i).ravel() for i in range(len(scene.agents))])
            terms["motion"] = nk.scale(heads.imitation_loss(pred, gt), scale2)
    if "det" in weights or "map" in weights:
        det, mp = heads.aux_losses(enc.Q_agents, enc.tokens.agent_mask, enc.tokens.Q_map, enc.tokens.map_mask,
                                   scene, store, model.cfg.gen_extent)
        terms["det"], terms["map"] = det, mp
    if "itg" in weights:
        terms["itg"] = itg_head.itg_loss(desc, enc.Q_agents, store, mask=enc.tokens.agent_mask)
    return terms, enc.q_ego


def batch_loss(model: DrivingModel, preps, descs, weights: dict[str, float],
               rng: np.random.Generator) -> tuple[nk.Tensor, dict[str, float]]:
    per: dict[str, list[nk.Tensor]] = {}
    positives, keys = [], []
    for prep, desc in zip(preps, descs):
        terms, q_ego = _scene_terms(model, prep, desc, weights)
        for k, t in terms.items():
            per.setdefault(k, []).append(t)
        if "itm" in weights:
            positives.append((q_ego, vl_align.embed_description(desc, model.store["lang.embed"])))
            keys.append(tuple(desc))
    comps: dict[str, nk.Tensor] = {k: nk.mean(nk.concat_rows(v)) for k, v in per.items() if k in weights}
    if "itm" in weights and len(positives) >= 2:
        pairs = _true_pairs(vl_align.make_negatives(positives, rng), keys)
        if pairs is not None:
            comps["itm"] = vl_align.itm_loss(pairs, degenerate="neutral")
    total = None
    for k in COMPONENTS:
        if k in comps:
            term = nk.scale(comps[k], weights[k])
            total = term if total is None else nk.add(total, term)
    logged = {k: comps[k].item() for k in COMPONENTS if k in comps}
    return (total if total is not None else nk.zeros(1, 1)), logged


def _true_pairs(batch, keys) -> list | None:
    """Drop negatives whose description equals the positive's (they are matches in disguise).

    Returns None when no negative survives, so the batch carries no matching signal.
    """
    n = len(keys)
    pos = batch[:n]
    owner = {id(p.v): k for k, p in enumerate(pos)}
    neg = [p for i, p in enumerate(batch[n:]) if keys[i] != keys[owner[id(p.v)]]]
    return pos + neg if neg else None


def _descriptions(model: DrivingModel, scenes: Sequence[Scene]) -> list[list[int]]:
    return [model.description(s) for s in scenes]


def _fit(model: DrivingModel, scenes: Sequence[Scene], weights: dict[str, float], epochs: int,
         prefixes: tuple[str, ...] | None, phase_id: int, train_log: TrainLog | None) -> None:
    cfg = model.cfg
    preps = [model.prepare(s) for s in scenes]
    descs = _descriptions(model, scenes)
    names = [n for n in model.store if prefixes is None or n.startswith(prefixes)]
    rng = np.random.default_rng([cfg.seed, phase_id])
    bs = cfg.optim_batch_size
    per_epoch = math.ceil(len(scenes) / bs) if scenes else 0
    total = epochs * per_epoch
    if cfg.optim_max_steps > 0:
        total = min(total, cfg.optim_max_steps)
    state = AdamWState()
    step = 0
    while step < total:
        order = rng.permutation(len(scenes))
        for start in range(0, len(order), bs):
            if step >= total:
                break
            idx = order[start : start + bs]
            model.store.zero_grad()
            loss, comps = batch_loss(model, [preps[i] for i in idx], [descs[i] for i in idx], weights, rng)
            value = loss.item()
            if not math.isfinite(value):
                nk.get_tape().clear()
                raise NumericError(f"non-finite loss at step {step}")
            nk.backward(loss)
            lr = cosine_lr(step, total, cfg.optim_lr)
            adamw_step({n: model.store[n].data for n in names}, {n: model.store[n].grad for n in names}, state, lr,
                       (cfg.optim_beta1, cfg.optim_beta2), cfg.optim_eps, cfg.optim_weight_decay)
            if train_log is not None:
                train_log.steps.append({"step": step, "lr": lr, "total": value, **comps})
            if step % 50 == 0:
                log.info("phase%d step %d/%d loss %.5f %s", phase_id, step, total, value,
                         " ".join(f"{k}={v:.4f}" for k, v in comps.items()))
            step += 1


def train_phase1(scenes: Sequence[Scene], cfg: Config, train_log: TrainLog | None = None,
                 model: DrivingModel | None = None) -> Checkpoint:
    if not cfg.lgam_enabled:
        raise ConfigError("phase 1 requires LGAM")
    model = model or DrivingModel(cfg)
    _fit(model, scenes, _weights(cfg, "phase1"), cfg.optim_pretrain_epochs, PHASE1_PARAMS, 1, train_log)
    return model.checkpoint("phase1")


def train_phase2(scenes: Sequence[Scene], cfg: Config, init: Checkpoint | None = None,
                 train_log: TrainLog | None = None) -> Checkpoint:
    model = DrivingModel(cfg)
    if init is not None:
        if init.config.hash() != cfg.hash():
            _require_same_dims(init.config, cfg)
        model.store.load_arrays(init.arrays)
    _fit(model, scenes, _weights(cfg, "phase2"), cfg.optim_epochs, None, 2, train_log)
    return model.checkpoint("phase2")


def _require_same_dims(a: Config, b: Config) -> None:
    keys = ("gen_extent", "gen_max_agents", "gen_max_map", "model_d", "model_H", "model_W", "model_d_bev",
            "model_layers", "model_hidden")
    diff = [k for k in keys if getattr(a, k) != getattr(b, k)]
    if diff:
        raise ConfigError(f"config-hash mismatch: init checkpoint differs in {diff}")


def train(scenes: Sequence[Scene], cfg: Config, train_log: TrainLog | None = None) -> Checkpoint:
    """Phase 1 (when LGAM is on) followed by phase 2."""
    init = train_phase1(scenes, cfg, train_log) if cfg.lgam_enabled else None
    return train_phase2(scenes, cfg, init, train_log)


def plans_for(model: DrivingModel, scenes: Sequence[Scene]) -> list[np.ndarray]:
    plans = [model.plan(s) for s in scenes]
    for p in plans:
        if not np.all(np.isfinite(p)):
            raise NumericError("non-finite planned waypoint")
    return plans


def evaluate_run(ckpt: Checkpoint, scenes: Sequence[Scene], mode: str | None = None) -> MetricsReport:
    check_compatible(ckpt.config, scenes)
    model = DrivingModel.from_checkpoint(ckpt)
    return evaluate(plans_for(model, scenes), scenes, mode or ckpt.config.eval_mode)


def alignment_margin(model: DrivingModel, scenes: Sequence[Scene], seed: int = 0) -> float:
    """Mean cosine of matched (scene, description) pairs minus that of deranged pairs."""
    ws, vs = [], []
    with nk.no_grad():
        for s in scenes:
            ws.append(model.encode(model.prepare(s)).q_ego)
            vs.append(vl_align.embed_description(model.description(s), model.store["lang.embed"]))
        sigma = vl_align.derangement(len(scenes), np.random.default_rng(seed))
        match = [vl_align.cosine_similarity(w, v).item() for w, v in zip(ws, vs)]
        mismatch = [vl_align.cosine_similarity(ws[i], vs[j]).item() for i, j in enumerate(sigma)]
    return float(np.mean(match) - np.mean(mismatch))


def token_accuracy(model: DrivingModel, scenes: Sequence[Scene]) -> float:
    """Fraction of target description tokens reproduced at the same position by greedy decoding."""
    hit = total = 0
    for s in scenes:
        target = model.description(s)
        out = model.decode(s)
        total += len(target)
        hit += sum(1 for i, t in enumerate(target) if i < len(out) and out[i] == t)
    return hit / total if total else 1.0


def describe_missing(scenes: Sequence[Scene]) -> None:
    for s in scenes:
        if s.ald_tokens is None:
            s.ald_tokens = describe(s, "ald")
        if s.gld_tokens is None:
            s.gld_tokens = describe(s, "gld")
