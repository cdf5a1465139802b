#!/usr/bin/env python3
"""Train the desk-scale runs behind acceptance criteria 6-8 and print medians.

Trains sr_flow, noise_to_hr and noised_lr_to_hr stage-1 models and the
L_cd / L_hrcd distillations of each sr_flow model, for every seed. Per-seed
reports land in ``<out>/seeds``. The pytest acceptance suite does the same
thing and checks the thresholds; this script is for looking at the numbers.
"""
import argparse
import logging
import statistics
import time
from pathlib import Path

import torch

from rfsr.ablate import RunCache, consistency_rows, flow_rows, run_row, slug, write_report
from rfsr.config import ExperimentConfig

LABELS = ["SR Flow (ours)", "Noise->HR", "noised LR->HR", "w/ L_cd", "w/ L_hrcd"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--out", default="artifacts/acceptance")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(1)
    base = ExperimentConfig().with_overrides(args.set)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    rows = {r.label: r for r in flow_rows() + consistency_rows()}
    runs, data = RunCache(out), {}
    reports = {}
    for seed in seeds:
        for label in LABELS:
            start = time.perf_counter()
            rep = run_row(rows[label], base, seed, runs, data)
            write_report(rep, out / "seeds" / f"{slug(label)}_seed{seed}")
            reports[label, seed] = rep
            print(f"seed {seed} {label}: {time.perf_counter() - start:.0f}s")

    print(f"{'method':<18}{'steps':>6}{'psnr_db':>10}{'ssim':>9}{'surrogate':>11}   (medians over seeds {seeds})")
    for label in LABELS:
        for r in reports[label, seeds[0]].rows:
            if r.method != label:
                continue
            vals = [reports[label, s].row(label, r.steps) for s in seeds]
            print(f"{label:<18}{r.steps:>6}{statistics.median(v.psnr_db for v in vals):>10.3f}"
                  f"{statistics.median(v.ssim for v in vals):>9.4f}"
                  f"{statistics.median(v.surrogate_lpips for v in vals):>11.4f}")
    near = reports[LABELS[0], seeds[0]].row("nearest-upsample", 0)
    print(f"{'nearest-upsample':<18}{0:>6}{near.psnr_db:>10.3f}{near.ssim:>9.4f}{near.surrogate_lpips:>11.4f}")


if __name__ == "__main__":
    main()
