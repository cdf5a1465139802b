"""Command-line harness: gen-data, train-flow, distill, sample, eval, ablate.

Exit codes: 0 ok, 2 config error, 3 missing/unusable prerequisite, 4 numeric
failure. Failures print one JSON line on stderr:
``{"error": kind, "exit": code, "message": ...}``. Relative ``--out`` paths
are resolved under ``$RFSR_OUT`` when that variable is set.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError, DigestError, load_checkpoint, load_meta
from .config import ConfigError, ExperimentConfig
from .degrade import upscale
from .distill import NumericError, PrerequisiteError, inference_net, run_training

log = logging.getLogger("rfsr")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get("RFSR_OUT")
    return path if path.is_absolute() or not root else Path(root) / path


def _load_config(args) -> ExperimentConfig:
    overrides = args.set or []
    if args.config:
        if not Path(args.config).exists():
            raise CliError(2, "config_error", f"config file not found: {args.config}")
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.from_text("", overrides)


def _config_from_checkpoint(path, overrides=()) -> ExperimentConfig:
    text = load_meta(path)["config"]
    return ExperimentConfig.from_text(text, overrides)


def _require(path, what: str) -> Path:
    if path is None or not Path(path).exists():
        raise CliError(3, "prerequisite_missing", f"{what} not found: {path}")
    return Path(path)


def cmd_gen_data(args):
    from .io import generate_corpus

    cfg = _load_config(args)
    out = generate_corpus(cfg, _out_path(args.out), raw=args.raw)
    print(out)


def _train(args, stage: str):
    from .io import load_split

    cfg = _load_config(args)
    data = _require(args.data, "corpus directory")
    train = load_split(data, "train", cfg)
    eval_split = load_split(data, "eval", cfg) if (data / "eval").is_dir() else None
    init = None
    if stage == "consistency":
        init_path = _require(args.init, "stage-1 checkpoint (run train-flow first)")
        init = load_checkpoint(init_path, cfg.net_config())
        if init.stage != "flow_pretrain":
            raise CliError(3, "prerequisite_missing", f"{init_path} is not a stage-1 (train-flow) checkpoint")
    path = run_training(cfg, stage, train, _out_path(args.out), eval_split=eval_split, init=init,
                        resume=args.resume)
    print(path)


def cmd_train_flow(args):
    _train(args, "flow_pretrain")


def cmd_distill(args):
    if args.init is None:
        raise CliError(3, "prerequisite_missing", "distill needs --init <stage-1 checkpoint> (run train-flow first)")
    _train(args, "consistency")


def _inputs(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = sorted(path.glob("*_lr.png")) or sorted(path.glob("*.png"))
    if not files:
        raise CliError(3, "prerequisite_missing", f"no PNG inputs in {path}")
    return files


def cmd_sample(args):
    from .io import read_image, write_png
    from .metrics import inference_grid
    from .sample import sample_ode

    ckpt = _require(args.checkpoint, "checkpoint")
    cfg = _config_from_checkpoint(ckpt, args.set or [])
    state = load_checkpoint(ckpt, cfg.net_config())
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = inference_grid(args.steps, cfg.sched.shift_s)
    gen = torch.Generator().manual_seed(cfg.eval.seed)
    for src in _inputs(_require(args.input, "input")):
        x_lr = upscale(read_image(src).float(), cfg.data.scale, cfg.data.upscale)
        traj = sample_ode(x_lr, inference_net(state, cfg.eval.use_ema), grid, cfg.flow_variant(), gen)
        stem = src.stem.removesuffix("_lr")
        write_png(traj.final, out / f"{stem}_sr.png", raw=args.raw)
        if args.dump_trajectory:
            for k, (t, x) in enumerate(traj.states):
                write_png(x, out / f"{stem}_traj{k:02d}_t{t:.4f}.png", raw=args.raw)
        print(out / f"{stem}_sr.png")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_eval(args):
    from .io import load_split
    from .metrics import evaluate

    ckpt = _require(args.checkpoint, "checkpoint")
    before = _file_digest(ckpt)
    cfg = _config_from_checkpoint(ckpt, args.set or [])
    data = _require(args.data, "corpus directory")
    try:
        split = load_split(data, args.split, cfg)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(3, "prerequisite_missing", str(exc)) from exc
    state = load_checkpoint(ckpt, cfg.net_config())
    steps = tuple(int(s) for s in args.steps.split(",")) if args.steps else cfg.eval.steps
    rep = evaluate(inference_net(state, cfg.eval.use_ema), split.x_hr, split.x_lr, steps, cfg.flow_variant(), cfg.sched.shift_s,
                   seed=cfg.eval.seed)
    rep.config_digest, rep.config_text = cfg.digest(), cfg.to_text()
    if _file_digest(ckpt) != before:
        raise CliError(4, "numeric_failure", "checkpoint changed during evaluation")
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(rep.to_text())
    (out / "report.jsonl").write_text(rep.to_jsonl())
    print(rep.to_text(), end="")


def cmd_ablate(args):
    from .ablate import GROUPS, run_ablation

    cfg = _load_config(args)
    groups = list(GROUPS) if args.group == "all" else [args.group]
    seeds = [int(s) for s in args.seeds.split(",")]
    run_ablation(cfg, groups, seeds, _out_path(args.out))
    print(_out_path(args.out))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rfsr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="key=value experiment config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="config override (repeatable)")

    sp = sub.add_parser("gen-data", help="synthesise an HR/LR corpus")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--raw", action="store_true", help="also write exact float32 .npy sidecars")
    sp.set_defaults(fn=cmd_gen_data)

    for name, fn in (("train-flow", cmd_train_flow), ("distill", cmd_distill)):
        sp = sub.add_parser(name, help=f"{name} stage")
        common(sp)
        sp.add_argument("--data", required=True, help="corpus directory from gen-data")
        sp.add_argument("--out", required=True, help="run directory")
        sp.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
        if name == "distill":
            sp.add_argument("--init", help="stage-1 checkpoint")
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("sample", help="super-resolve LR PNGs")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="LR PNG or directory of them")
    sp.add_argument("--steps", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.add_argument("--dump-trajectory", action="store_true")
    sp.add_argument("--raw", action="store_true")
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("eval", help="PSNR/SSIM/surrogate report for a checkpoint")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="eval")
    sp.add_argument("--steps", help="comma list, default from config")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="run ablation tables")
    common(sp)
    sp.add_argument("--group", choices=["flow", "consistency", "scheduler", "time", "all"], default="all")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ablate)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        args.fn(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except (ConfigError, DigestError) as exc:
        return _fail(2, "config_error", str(exc))
    except (PrerequisiteError, CheckpointError, FileNotFoundError) as exc:
        return _fail(3, "prerequisite_missing", str(exc))
    except NumericError as exc:
        return _fail(4, "numeric_failure", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
