"""Two-stage training: SR-flow pretraining, then HR-regularised consistency
distillation against a frozen teacher and an EMA target."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, SchedConfig
from .degrade import ImagePair
from .flow import (FlowVariant, LossWeights, consistency_fn, flow_loss, hinge_losses, hrcd_loss, interp,
                   start_point, total_loss)
from .nets import Discriminator, NetConfig, VelocityField
from .ndgrad import backward
from .sample import teacher_step
from .sched import make_pairing, sample_time

log = logging.getLogger(__name__)
Tensor = torch.Tensor

STAGES = ("flow_pretrain", "consistency")


class NumericError(RuntimeError):
    pass


class PrerequisiteError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "flow_pretrain"
    steps: int = 2000
    batch: int = 16
    lr: float = 1e-3
    ema_mu: float = 0.999
    weights: LossWeights = LossWeights()
    flow_variant: FlowVariant = FlowVariant()
    sched: SchedConfig = SchedConfig()
    adv_enabled: bool = True
    seed: int = 0
    objective: str = "hrcd"
    hr_metric: str = "mse_surrogate"
    flow_fraction: float = 0.5
    checkpoint_every: int = 500
    eval_every: int = 500
    eval_steps: tuple[int, ...] = (4, 1)
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.steps < 0 or self.batch < 1 or self.lr <= 0:
            raise ValueError("need steps >= 0, batch >= 1, lr > 0")

    @classmethod
    def from_experiment(cls, cfg: ExperimentConfig, stage: str) -> "TrainConfig":
        t = cfg.train
        return cls(stage=stage, steps=t.flow_steps if stage == "flow_pretrain" else t.distill_steps,
                   batch=t.batch, lr=t.lr, ema_mu=t.ema_mu, weights=cfg.loss_weights(),
                   flow_variant=cfg.flow_variant(), sched=cfg.sched, adv_enabled=t.adv_enabled,
                   seed=t.seed, objective=t.objective, hr_metric=t.hr_metric,
                   flow_fraction=t.flow_fraction, checkpoint_every=t.checkpoint_every,
                   eval_every=t.eval_every, eval_steps=cfg.eval.steps)


@dataclass
class TrainState:
    """Student theta, EMA target theta_minus, frozen teacher phi, optional
    discriminator, Adam moments keyed ``group -> name -> (m, v)``."""

    theta: VelocityField
    theta_minus: VelocityField | None = None
    phi: VelocityField | None = None
    disc: Discriminator | None = None
    moments: dict[str, dict[str, tuple[Tensor, Tensor]]] = field(default_factory=dict)
    step: int = 0
    stage: str = "flow_pretrain"
    seed: int = 0

    @property
    def net_config(self) -> NetConfig:
        return self.theta.config


def _frozen_copy(net):
    out = copy.deepcopy(net)
    for p in out.parameters():
        p.requires_grad_(False)
    return out


def init_state(net_config: NetConfig, seed: int = 0, dtype=torch.float32) -> TrainState:
    theta = VelocityField(net_config, seed=seed).to(dtype)
    return TrainState(theta=theta, seed=seed)


def start_consistency(stage1: TrainState, cfg: TrainConfig, dtype=None) -> TrainState:
    """Student and EMA target both start from the stage-1 weights; the
    teacher is a frozen copy of the same weights."""
    theta = copy.deepcopy(stage1.theta)
    if dtype is not None:
        theta = theta.to(dtype)
    for p in theta.parameters():
        p.requires_grad_(True)
    disc = None
    if cfg.adv_enabled:
        disc = Discriminator(theta.config, seed=cfg.seed + 1).to(next(theta.parameters()).dtype)
    return TrainState(theta=theta, theta_minus=_frozen_copy(theta), phi=_frozen_copy(theta),
                      disc=disc, stage="consistency", seed=cfg.seed)


def inference_net(state: TrainState, use_ema: bool = True) -> VelocityField:
    """Weights to sample from: the EMA copy once it exists, else the student."""
    if use_ema and state.theta_minus is not None:
        return state.theta_minus
    return state.theta


@torch.no_grad()
def ema_update(theta_minus: dict[str, Tensor], theta: dict[str, Tensor], mu: float) -> dict[str, Tensor]:
    """In place: theta_minus <- mu * theta_minus + (1 - mu) * theta."""
    for name, tm in theta_minus.items():
        th = theta[name]
        if tm.shape != th.shape:
            raise ValueError(f"EMA shape mismatch for {name}")
        tm.copy_(mu * tm + (1 - mu) * th)
    return theta_minus


@torch.no_grad()
def adam_step(params: dict[str, Tensor], grads: dict[str, Tensor], moments: dict[str, tuple[Tensor, Tensor]],
              step: int, lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> dict[str, Tensor]:
    """Bias-corrected Adam update in place; ``step`` counts from 1.

    Parameters without a gradient are left alone, moments included.
    """
    b1, b2 = betas
    c1, c2 = 1 - b1**step, 1 - b2**step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m, v = moments.get(name, (torch.zeros_like(p), torch.zeros_like(p)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        moments[name] = (m, v)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return params


def step_rng(seed: int, stage: str, step: int) -> tuple[np.random.Generator, torch.Generator]:
    """RNG streams for one step, derived from (seed, stage, step) alone so a
    resumed run replays the same draws."""
    rng = np.random.default_rng([seed % 2**63, STAGES.index(stage), step])
    gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
    return rng, gen


def _velocity(net, x, t, x_lr):
    return net(x, t, x_lr) if net.config.condition_lr else net(x, t)


def _check_finite(losses: dict[str, float], state: TrainState):
    bad = {k: v for k, v in losses.items() if not math.isfinite(v)}
    if bad:
        raise NumericError(f"non-finite loss {bad} at step {state.step} (seed {state.seed}, stage {state.stage})")


def flow_terms(net: VelocityField, batch: ImagePair, cfg: TrainConfig, rng, gen) -> Tensor:
    """Flow-matching loss on a batch: draw t, form x_t, estimate the origin, score it."""
    x_hr, x_lr = batch.x_hr, batch.x_lr
    s = cfg.sched
    t = sample_time(rng, s.time_sampling, s.lognorm_mu, s.lognorm_sigma, s.shift_s, size=x_hr.shape[0])
    t = torch.as_tensor(t, dtype=x_hr.dtype)
    x1 = start_point(cfg.flow_variant, x_lr, gen)
    x_t = interp(x_hr, x1, t)
    v = _velocity(net, x_t, t, x_lr)
    return flow_loss(consistency_fn(x_t, t, v), x_hr, cfg.weights.lambda_p)


def _apply(state: TrainState, group: str, module, loss: Tensor, cfg: TrainConfig):
    params = dict(module.named_parameters())
    grads = backward(loss, params, retain_graph=False)
    adam_step(params, grads, state.moments.setdefault(group, {}), state.step + 1, cfg.lr, cfg.betas, cfg.adam_eps)


def flow_pretrain_step(state: TrainState, batch: ImagePair, cfg: TrainConfig, rng, gen) -> dict[str, float]:
    if cfg.stage != "flow_pretrain":
        raise ValueError("flow_pretrain_step needs stage flow_pretrain")
    loss = flow_terms(state.theta, batch, cfg, rng, gen)
    report = {"flow": loss.item(), "total": loss.item()}
    _check_finite(report, state)
    _apply(state, "theta", state.theta, loss, cfg)
    state.step += 1
    return report


def split_batch(batch: ImagePair, flow_fraction: float = 0.5) -> tuple[ImagePair, ImagePair]:
    n = batch.x_hr.shape[0]
    n_a = int(round(n * flow_fraction))
    if n_a < 1 or n - n_a < 1:
        raise ValueError(f"batch of {n} cannot be split into two non-empty groups")
    return (ImagePair(batch.x_hr[:n_a], batch.x_lr[:n_a]), ImagePair(batch.x_hr[n_a:], batch.x_lr[n_a:]))


def consistency_losses(state: TrainState, batch: ImagePair, cfg: TrainConfig, rng, gen) -> dict:
    """All stage-2 loss terms for one batch (no parameter update).

    Group A gets the flow loss; group B the consistency objective around a
    (t, t') pair per sample plus, if enabled, the generator hinge term.
    Returns tensors under ``parts`` and diagnostic tensors alongside.
    """
    group_a, group_b = split_batch(batch, cfg.flow_fraction)
    s = cfg.sched
    parts = {"flow": flow_terms(state.theta, group_a, cfg, rng, gen)}

    x_hr, x_lr = group_b.x_hr, group_b.x_lr
    n = x_hr.shape[0]
    pairing = make_pairing(s.pairing, s.fast_steps, s.slow_steps, s.n_interval, s.shift_s)
    pairs = [pairing(rng) for _ in range(n)]
    t = torch.tensor([p.t for p in pairs], dtype=x_hr.dtype)
    tp = torch.tensor([p.t_prime for p in pairs], dtype=x_hr.dtype)
    x1 = start_point(cfg.flow_variant, x_lr, gen)
    x_tp = interp(x_hr, x1, tp)
    x_hat_t = teacher_step(x_tp, t, tp, lambda x, tt: _velocity(state.phi, x, tt, x_lr))

    use_cd = cfg.objective in ("hrcd", "cd")
    use_hr = cfg.objective in ("hrcd", "hr")
    student_tp = consistency_fn(x_tp, tp, _velocity(state.theta, x_tp, tp, x_lr))
    with torch.no_grad():
        target_t = consistency_fn(x_hat_t, t, _velocity(state.theta_minus, x_hat_t, t, x_lr))
    if use_hr:
        student_t = consistency_fn(x_hat_t, t, _velocity(state.theta, x_hat_t, t, x_lr))
    else:
        student_t = target_t
    parts["hrcd"] = hrcd_loss(student_tp, target_t, student_t, x_hr, cfg.weights.lambda_p, cfg.hr_metric,
                              use_cd=use_cd, use_hr=use_hr)
    out = {"parts": parts, "student_tp": student_tp, "x_hr_b": x_hr, "x1_b": x1, "t": t, "t_prime": tp}
    if cfg.adv_enabled and state.disc is not None:
        td = torch.as_tensor(sample_time(rng, "uniform", size=n), dtype=x_hr.dtype)
        out["t_disc"] = td
        _, gen_loss = hinge_losses(torch.zeros(1), state.disc(interp(student_tp, x1, td), td))
        parts["adv"] = gen_loss
    return out


def consistency_step(state: TrainState, batch: ImagePair, cfg: TrainConfig, rng, gen) -> dict[str, float]:
    if cfg.stage != "consistency" or state.phi is None or state.theta_minus is None:
        raise ValueError("consistency_step needs a consistency-stage state with teacher and target")
    terms = consistency_losses(state, batch, cfg, rng, gen)
    parts = terms["parts"]
    loss = total_loss(parts, cfg.weights)
    report = {k: v.item() for k, v in parts.items()}
    report["total"] = loss.item()
    _check_finite(report, state)
    _apply(state, "theta", state.theta, loss, cfg)
    ema_update(dict(state.theta_minus.named_parameters()), dict(state.theta.named_parameters()), cfg.ema_mu)
    if "adv" in parts:
        td, x1 = terms["t_disc"], terms["x1_b"]
        real = interp(terms["x_hr_b"], x1, td)
        fake = interp(terms["student_tp"].detach(), x1, td)
        disc_loss, _ = hinge_losses(state.disc(real, td), state.disc(fake, td))
        report["disc"] = disc_loss.item()
        _check_finite(report, state)
        _apply(state, "disc", state.disc, disc_loss, cfg)
    state.step += 1
    return report


def _draw_batch(pairs: ImagePair, size: int, rng) -> ImagePair:
    n = pairs.x_hr.shape[0]
    idx = torch.as_tensor(rng.choice(n, size=size, replace=n < size))
    return ImagePair(pairs.x_hr[idx], pairs.x_lr[idx])


def _atomic_write_text(path: Path, text: str, mode: str = "w"):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, mode) as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_training(cfg: ExperimentConfig, stage: str, train: ImagePair, out_dir, eval_split: ImagePair | None = None,
                 init: TrainState | None = None, resume: bool = False, dtype=torch.float32) -> Path:
    """Run one stage to completion, checkpointing as it goes.

    Writes ``step_XXXXXX.ckpt`` every ``checkpoint_every`` steps, ``last.ckpt``
    (always the newest) and ``metrics.jsonl`` into ``out_dir``. Stage
    ``consistency`` needs ``init`` (the stage-1 state) unless resuming.
    Returns the path of ``last.ckpt``.
    """
    from .checkpoint import load_checkpoint, save_checkpoint
    from .metrics import evaluate

    tcfg = TrainConfig.from_experiment(cfg, stage)
    if train.x_hr.shape[0] == 0:
        raise ValueError("training corpus is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    last = out / "last.ckpt"
    net_cfg = cfg.net_config()
    metrics_path = out / "metrics.jsonl"
    if resume and last.exists():
        state = load_checkpoint(last, net_cfg)
        if state.stage != stage:
            raise PrerequisiteError(f"{last} holds stage {state.stage!r}, not {stage!r}")
        log.info("resumed %s at step %d", last, state.step)
        if metrics_path.exists():
            kept = [ln for ln in metrics_path.read_text().splitlines(keepends=True)
                    if json.loads(ln)["step"] <= state.step]
            _atomic_write_text(metrics_path, "".join(kept))
    elif stage == "flow_pretrain":
        state = init_state(net_cfg, tcfg.seed, dtype)
        if metrics_path.exists():
            metrics_path.unlink()
    else:
        if init is None:
            raise PrerequisiteError("consistency stage needs a stage-1 (flow_pretrain) checkpoint")
        if init.net_config != net_cfg:
            raise PrerequisiteError("stage-1 checkpoint was trained with a different network config")
        state = start_consistency(init, tcfg, dtype)
        if metrics_path.exists():
            metrics_path.unlink()
    train = ImagePair(train.x_hr.to(dtype), train.x_lr.to(dtype))
    step_fn = flow_pretrain_step if stage == "flow_pretrain" else consistency_step
    cfg_text = cfg.to_text()

    def save():
        save_checkpoint(state, last, cfg_text)
        if tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
            save_checkpoint(state, out / f"step_{state.step:06d}.ckpt", cfg_text)

    if state.step == 0:
        save()
    t0 = time.perf_counter()
    with open(metrics_path, "a") as mlog:
        while state.step < tcfg.steps:
            rng, gen = step_rng(tcfg.seed, stage, state.step)
            batch = _draw_batch(train, tcfg.batch, rng)
            report = step_fn(state, batch, tcfg, rng, gen)
            rec = {"step": state.step, **report}
            if eval_split is not None and tcfg.eval_every and (
                    state.step % tcfg.eval_every == 0 or state.step == tcfg.steps):
                rep = evaluate(inference_net(state, cfg.eval.use_ema), eval_split.x_hr, eval_split.x_lr, tcfg.eval_steps,
                               tcfg.flow_variant, tcfg.sched.shift_s, seed=cfg.eval.seed)
                for row in rep.rows:
                    if row.method == "model":
                        rec[f"eval_psnr_{row.steps}"] = row.psnr_db
                        rec[f"eval_ssim_{row.steps}"] = row.ssim
            mlog.write(json.dumps(rec) + "\n")
            if state.step % 100 == 0:
                mlog.flush()
                log.info("%s step %d %s (%.1fs)", stage, state.step,
                         {k: round(v, 5) for k, v in report.items()}, time.perf_counter() - t0)
            if tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0:
                save()
    save()
    return last
