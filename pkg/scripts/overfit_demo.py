#!/usr/bin/env python3
"""Overfit a handful of scenes and report planning error plus description decoding accuracy."""

import argparse
import time

from langdrive.describer import annotate
from langdrive.evalkit import evaluate
from langdrive.pipeline import Config, DrivingModel, evaluate_run, token_accuracy, train_phase2
from langdrive.pipeline.cli import scene_seed
from langdrive.scenegen import generate_scene


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenes", type=int, default=8)
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scenes = [annotate(generate_scene(scene_seed(args.seed, i))) for i in range(args.scenes)]
    cfg = Config(seed=args.seed, optim_batch_size=args.scenes, optim_epochs=args.steps)
    before = evaluate([DrivingModel(cfg).plan(s) for s in scenes], scenes, "at_horizon")
    t = time.perf_counter()
    ckpt = train_phase2(scenes, cfg)
    after = evaluate_run(ckpt, scenes, "at_horizon")
    acc = token_accuracy(DrivingModel.from_checkpoint(ckpt), scenes)
    print(f"trained {args.steps} steps in {time.perf_counter() - t:.1f}s")
    print(f"L2 avg  {before.l2_avg:.4f} -> {after.l2_avg:.4f} m (ratio {after.l2_avg / before.l2_avg:.4f})")
    print(f"decode token accuracy {acc:.3f}")


if __name__ == "__main__":
    main()
