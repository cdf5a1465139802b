#!/usr/bin/env python3
"""Run ablation groups at desk scale and print each group's summary table.

    python3 scripts/run_ablation.py --group flow --seeds 0,1,2 --out runs/ablate
    python3 scripts/run_ablation.py --group scheduler --set train.distill_steps=1000

Same as ``rfsr ablate`` but with progress logging on and the tables echoed.
"""
import argparse
import logging
from pathlib import Path

import torch

from rfsr.ablate import GROUPS, run_ablation
from rfsr.config import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--group", choices=[*GROUPS, "all"], default="all")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="runs/ablate")
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(args.threads)
    cfg = ExperimentConfig.from_file(args.config, args.set) if args.config else ExperimentConfig().with_overrides(args.set)
    groups = list(GROUPS) if args.group == "all" else [args.group]
    out = Path(args.out)
    run_ablation(cfg, groups, [int(s) for s in args.seeds.split(",")], out)
    for g in groups:
        print(f"== {g}")
        print((out / g / "summary.txt").read_text())


if __name__ == "__main__":
    main()
