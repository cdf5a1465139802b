"""Scripted ablations: flow variants, consistency objectives, pairing schedules
and training-time shift/sampling, each run over several seeds.

Layout under the output directory::

    _runs/<run>/seed<k>/          checkpoints + metrics.jsonl of every training run
    <group>/<row>.txt|.jsonl      per-row report, metrics = median over seeds
    <group>/seeds/<row>_seed<k>.* raw per-seed reports
    <group>/summary.txt           all rows of the group in one table
"""
from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ExperimentConfig
from .degrade import ImagePair, stack_pairs
from .distill import inference_net, run_training
from .io import generate_split
from .metrics import EvalReport, EvalRow, evaluate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Row:
    label: str
    stage: str  # "flow_pretrain" or "consistency"
    overrides: tuple[str, ...] = ()
    steps: tuple[int, ...] = (1,)


@dataclass
class RunCache:
    """Memoises training runs by (stage, resolved config) within one ablation."""

    root: Path
    runs: dict = field(default_factory=dict)


def flow_rows() -> list[Row]:
    return [Row("Noise->HR", "flow_pretrain", ("train.flow_variant=noise_to_hr",), (4, 1)),
            Row("noised LR->HR", "flow_pretrain", ("train.flow_variant=noised_lr_to_hr",), (4, 1)),
            Row("SR Flow (ours)", "flow_pretrain", ("train.flow_variant=sr_flow",), (4, 1))]


def consistency_rows() -> list[Row]:
    return [Row("SR Flow", "flow_pretrain", ("train.flow_variant=sr_flow",), (4, 1)),
            Row("w/ L_cd", "consistency", ("train.objective=cd",), (4, 1)),
            Row("w/ L_hr", "consistency", ("train.objective=hr",), (1,)),
            Row("w/ L_hrcd", "consistency", ("train.objective=hrcd",), (4, 1))]


def scheduler_rows(slow_steps: int = 1000) -> list[Row]:
    rows = [Row(f"N-Interval ({n})", "consistency", ("sched.pairing=n_interval", f"sched.n_interval={n}"))
            for n in (50, 18, 4)]
    rows.append(Row(f"Slow Only ({slow_steps})", "consistency", ("sched.pairing=slow_only",)))
    rows += [Row(f"Fast-Slow ({n})", "consistency", ("sched.pairing=fast_slow", f"sched.fast_steps={n}"))
             for n in (8, 4, 1)]
    return rows


def time_rows() -> list[Row]:
    rows = []
    for shift_label, s in (("SD3", 3.0), ("uniform", 1.0)):
        for samp_label, samp in (("lognorm(0,1)", ("lognorm", 0.0, 1.0)), ("lognorm(-2,2)", ("lognorm", -2.0, 2.0)),
                                 ("uniform", ("uniform", 0.0, 1.0))):
            ov = (f"sched.shift_s={s}", f"sched.time_sampling={samp[0]}",
                  f"sched.lognorm_mu={samp[1]}", f"sched.lognorm_sigma={samp[2]}")
            rows.append(Row(f"{shift_label} shift / {samp_label}", "flow_pretrain", ov, (4, 2, 1)))
    return rows


GROUPS = {"flow": flow_rows, "consistency": consistency_rows, "scheduler": scheduler_rows, "time": time_rows}


def slug(label: str) -> str:
    s = label.replace("->", "_to_").replace("/", " w ")
    return re.sub(r"[^A-Za-z0-9]+", "_", s).strip("_").lower()


def _data(cfg: ExperimentConfig, cache: dict) -> tuple[ImagePair, ImagePair]:
    key = cfg.data
    if key not in cache:
        cache[key] = (stack_pairs(generate_split(cfg, "train")), stack_pairs(generate_split(cfg, "eval")))
    return cache[key]


def _train(cfg: ExperimentConfig, stage: str, runs: RunCache, data_cache: dict, init_cfg=None):
    key = (stage, cfg.digest(), None if init_cfg is None else init_cfg.digest())
    if key in runs.runs:
        return runs.runs[key]
    train, _ = _data(cfg, data_cache)
    out = runs.root / "_runs" / f"{stage}_{key[1][:12]}" / f"seed{cfg.train.seed}"
    init = None
    if stage == "consistency":
        init = load_checkpoint(_train(init_cfg, "flow_pretrain", runs, data_cache), init_cfg.net_config())
    path = run_training(cfg, stage, train, out, init=init)
    runs.runs[key] = path
    return path


def run_row(row: Row, base: ExperimentConfig, seed: int, runs: RunCache, data_cache: dict) -> EvalReport:
    if row.stage == "flow_pretrain":
        cfg = base.with_overrides([f"train.seed={seed}", *row.overrides])
        ckpt = _train(cfg, "flow_pretrain", runs, data_cache)
    else:
        # every consistency row distills the same sr_flow teacher for this seed
        teacher_cfg = base.with_overrides([f"train.seed={seed}", "train.flow_variant=sr_flow"])
        cfg = teacher_cfg.with_overrides(row.overrides)
        ckpt = _train(cfg, "consistency", runs, data_cache, init_cfg=teacher_cfg)
    state = load_checkpoint(ckpt, cfg.net_config())
    _, ev = _data(cfg, data_cache)
    rep = evaluate(inference_net(state, cfg.eval.use_ema), ev.x_hr, ev.x_lr, row.steps, cfg.flow_variant(), cfg.sched.shift_s,
                   seed=cfg.eval.seed, label=row.label)
    rep.config_digest, rep.config_text = cfg.digest(), cfg.to_text()
    rep.seeds = [seed]  # training seed; the eval seed is part of the embedded config
    return rep


def median_report(reports: list[EvalReport]) -> EvalReport:
    first = reports[0]
    out = EvalReport(config_digest=first.config_digest, config_text=first.config_text,
                     seeds=[s for r in reports for s in r.seeds])
    out.notes = first.notes + ["metrics are medians over seeds; per-seed reports under seeds/"]
    for i, row in enumerate(first.rows):
        vals = [r.rows[i] for r in reports]
        out.rows.append(EvalRow(row.method, row.steps, statistics.median(v.psnr_db for v in vals),
                                statistics.median(v.ssim for v in vals),
                                statistics.median(v.surrogate_lpips for v in vals)))
    return out


def write_report(rep: EvalReport, stem: Path):
    stem.parent.mkdir(parents=True, exist_ok=True)
    for suffix, text in ((".txt", rep.to_text()), (".jsonl", rep.to_jsonl())):
        p = stem.with_suffix(suffix)
        tmp = p.with_name(p.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(p)


def run_ablation(base: ExperimentConfig, groups, seeds, out_dir) -> dict[str, dict[str, EvalReport]]:
    out = Path(out_dir)
    runs, data_cache = RunCache(out), {}
    results = {}
    for group in groups:
        rows = GROUPS[group](base.sched.slow_steps) if group == "scheduler" else GROUPS[group]()
        results[group] = {}
        summary = []
        for row in rows:
            per_seed = []
            for seed in seeds:
                log.info("ablate %s / %s / seed %d", group, row.label, seed)
                rep = run_row(row, base, seed, runs, data_cache)
                write_report(rep, out / group / "seeds" / f"{slug(row.label)}_seed{seed}")
                per_seed.append(rep)
            med = median_report(per_seed)
            write_report(med, out / group / slug(row.label))
            results[group][row.label] = med
            summary += [r for r in med.rows if r.method == row.label]
        table = EvalReport(rows=summary, seeds=list(seeds), config_digest=base.digest())
        table.notes = table.notes + [f"ablation group {group}; medians over seeds"]
        (out / group / "summary.txt").write_text(table.to_text())
    return results
