"""Command-line entry point: data generation, training, evaluation, ablation, rendering."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from ..describer import annotate, attention_description, clauses, decode
from ..evalkit import MODES, MetricsReport, metrics_csv
from ..geometry import Rect, corners
from ..numkit import CheckpointError
from ..scenegen import DataError, Scene, generate_scene, read_dataset, write_dataset
from .config import Config, ConfigError, load_config
from .model import Checkpoint, DrivingModel, check_compatible
from .training import NumericError, describe_missing, evaluate_run, plans_for, train_phase1, train_phase2

log = logging.getLogger("langdrive")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ABLATION_GRID = ((False, False), (True, False), (False, True), (True, True))


def scene_seed(seed: int, index: int) -> int:
    return ((seed & 0xFFFFFFFF) << 32) | index


def _write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


def _train_split(scenes: Sequence[Scene], cfg: Config) -> list[Scene]:
    if not scenes:
        raise DataError("dataset is empty")
    check_compatible(cfg, scenes)
    return list(scenes[: cfg.data_train])


def _load_ckpt(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def _read(path) -> list[Scene]:
    try:
        return read_dataset(path)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> None:
    if args.count < 0:
        raise ConfigError("--count must be >= 0")
    scenes = [annotate(generate_scene(scene_seed(args.seed, i))) for i in range(args.count)]
    write_dataset(scenes, args.out)
    log.info("wrote %d scenes to %s", len(scenes), args.out)


def cmd_pretrain(args) -> None:
    cfg = load_config(args.config)
    scenes = _train_split(_read(args.data), cfg)
    describe_missing(scenes)
    train_phase1(scenes, cfg).save(args.out)


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    scenes = _train_split(_read(args.data), cfg)
    describe_missing(scenes)
    init = _load_ckpt(args.init) if args.init else None
    train_phase2(scenes, cfg, init).save(args.out)


def cmd_eval(args) -> None:
    ckpt = _load_ckpt(args.ckpt)
    report = evaluate_run(ckpt, _read(args.data), args.mode)
    _write_text(args.out, metrics_csv([report]))


def run_ablation(cfg: Config, train_scenes: Sequence[Scene], val_scenes: Sequence[Scene]) -> list[MetricsReport]:
    """Train and evaluate the four {tgm, lgam} settings in table order."""
    reports = []
    for tgm, lgam in ABLATION_GRID:
        c = cfg.replace(tgm_enabled=tgm)
        c = c.replace(lgam_enabled=True) if lgam else c.without_lgam()
        init = train_phase1(train_scenes, c) if lgam else None
        ckpt = train_phase2(train_scenes, c, init)
        reports.append(evaluate_run(ckpt, val_scenes, c.eval_mode))
        log.info("ablation tgm=%s lgam=%s: %s", tgm, lgam, ",".join(reports[-1].row()))
    return reports


def run_description_ablation(cfg: Config, train_scenes, val_scenes) -> list[MetricsReport]:
    """Full model trained with global versus attention descriptions."""
    reports = []
    for mode in ("gld", "ald"):
        c = cfg.replace(tgm_enabled=True, lgam_enabled=True, describer_mode=mode)
        ckpt = train_phase2(train_scenes, c, train_phase1(train_scenes, c))
        reports.append(evaluate_run(ckpt, val_scenes, c.eval_mode))
    return reports


def _ablation_split(scenes, cfg):
    need = cfg.data_train + cfg.data_val
    if len(scenes) < need:
        raise DataError(f"ablation needs {need} scenes (data.train + data.val), dataset has {len(scenes)}")
    check_compatible(cfg, scenes[:need])
    describe_missing(scenes[: cfg.data_train])
    return scenes[: cfg.data_train], scenes[cfg.data_train : need]


def cmd_ablate(args) -> None:
    cfg = load_config(args.config)
    train_scenes, val_scenes = _ablation_split(_read(args.data), cfg)
    reports = run_ablation(cfg, train_scenes, val_scenes)
    flags = [["1" if t else "0", "1" if g else "0"] for t, g in ABLATION_GRID]
    _write_text(args.out, metrics_csv(reports, ["tgm", "lgam"], flags))
    if args.gld_out:
        pair = run_description_ablation(cfg, train_scenes, val_scenes)
        _write_text(args.gld_out, metrics_csv(pair, ["description"], [["gld"], ["ald"]]))


def cmd_render(args) -> None:
    scenes = _read(args.data)
    if not 0 <= args.index < len(scenes):
        raise DataError(f"--index {args.index} outside dataset of {len(scenes)} scenes")
    scene = scenes[args.index]
    plan = None
    if args.ckpt:
        ckpt = _load_ckpt(args.ckpt)
        check_compatible(ckpt.config, [scene])
        plan = plans_for(DrivingModel.from_checkpoint(ckpt), [scene])[0]
    _write_text(args.out, render_svg(scene, plan))


# ---------------------------------------------------------------------------
# SVG


_COLOURS = {"car": "#1f77b4", "pedestrian": "#d62728", "cyclist": "#2ca02c",
            "lane_divider": "#bbbbbb", "road_boundary": "#444444", "ped_crossing": "#e6a700"}


def _f(x: float) -> str:
    return f"{x:.3f}"


def render_svg(scene: Scene, plan: np.ndarray | None = None, extent: float = 50.0, px: float = 8.0) -> str:
    """Top-down view, +x to the right, +y up; GT futures dashed, the plan solid, ALD clauses as caption."""
    size = 2 * extent * px
    caption_lines = [" ".join(decode(c)) for c in clauses(scene.ald_tokens or attention_description(scene))]
    caption_lines = caption_lines or ["NONE"]
    height = size + 18 * (len(caption_lines) + 1)

    def pt(x, y):
        return f"{_f((x + extent) * px)},{_f((extent - y) * px)}"

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(size)}" height="{_f(height)}" '
           f'viewBox="0 0 {_f(size)} {_f(height)}">',
           f'<rect x="0" y="0" width="{_f(size)}" height="{_f(size)}" fill="#ffffff" stroke="#000000"/>']
    for p in scene.map:
        dash = ' stroke-dasharray="6,4"' if p.kind == "lane_divider" else ""
        out.append(f'<polyline points="{" ".join(pt(*q) for q in p.points)}" fill="none" '
                   f'stroke="{_COLOURS[p.kind]}" stroke-width="2"{dash}/>')
    agents = [scene.ego] + list(scene.agents)
    for i, a in enumerate(agents):
        colour = "#000000" if i == 0 else _COLOURS[a.cls]
        poly = " ".join(pt(*c) for c in corners(Rect(a.pos[0], a.pos[1], a.heading, *a.size)))
        out.append(f'<polygon points="{poly}" fill="{colour}" fill-opacity="0.35" stroke="{colour}"/>')
        fut = [a.pos] + [tuple(w) for w in scene.gt_future[i]]
        out.append(f'<polyline points="{" ".join(pt(*q) for q in fut)}" fill="none" stroke="{colour}" '
                   f'stroke-width="1.5" stroke-dasharray="4,3"/>')
    if plan is not None:
        path = [(0.0, 0.0)] + [tuple(w) for w in np.asarray(plan)]
        out.append(f'<polyline points="{" ".join(pt(*q) for q in path)}" fill="none" stroke="#9400d3" '
                   f'stroke-width="2.5"/>')
    out.append(f'<text x="6" y="{_f(size + 16)}" font-family="monospace" font-size="13">'
               f'command: {scene.command}</text>')
    for j, line in enumerate(caption_lines):
        out.append(f'<text x="6" y="{_f(size + 16 * (j + 2))}" font-family="monospace" font-size="13">{line}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="langdrive", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an annotated synthetic dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    g = sub.add_parser("pretrain", help="phase 1: language alignment pre-training")
    g.add_argument("--config", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_pretrain)

    g = sub.add_parser("train", help="phase 2: end-to-end driving training")
    g.add_argument("--config", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--init", help="phase-1 checkpoint to start from")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="planning metrics for a checkpoint")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--mode", choices=MODES, default="at_horizon")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("ablate", help="train and evaluate the {tgm, lgam} grid")
    g.add_argument("--config", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--gld-out", help="also write the global-vs-attention description pair here")
    g.set_defaults(func=cmd_ablate)

    g = sub.add_parser("render", help="draw one scene (and optionally a plan) as SVG")
    g.add_argument("--data", required=True)
    g.add_argument("--index", type=int, required=True)
    g.add_argument("--ckpt")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_render)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
