#!/usr/bin/env python3
"""Run the {tgm, lgam} ablation grid for several seeds and print a comparison table."""

import argparse
import time

from langdrive.describer import annotate
from langdrive.pipeline import Config
from langdrive.pipeline.cli import ABLATION_GRID, run_ablation, scene_seed
from langdrive.scenegen import generate_scene


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--train", type=int, default=256)
    ap.add_argument("--val", type=int, default=64)
    args = ap.parse_args()

    print("seed tgm lgam   l2_avg   cr_avg")
    for seed in args.seeds:
        t = time.perf_counter()
        cfg = Config(seed=seed, data_train=args.train, data_val=args.val)
        scenes = [annotate(generate_scene(scene_seed(seed, i))) for i in range(args.train + args.val)]
        reports = run_ablation(cfg, scenes[: args.train], scenes[args.train :])
        for (tgm, lgam), r in zip(ABLATION_GRID, reports):
            print(f"{seed:4d} {int(tgm):3d} {int(lgam):4d} {r.l2_avg:8.4f} {r.cr_avg:8.4f}")
        print(f"# seed {seed} took {time.perf_counter() - t:.0f}s", flush=True)


if __name__ == "__main__":
    main()
