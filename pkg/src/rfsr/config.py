"""Sectioned ``key = value`` experiment configuration.

One file fully determines a run. Sections and keys (defaults shown by
``ExperimentConfig().to_text()``)::

    [data]   hr_size channels train_size eval_size scale blur_sigma_lo
             blur_sigma_hi noise_sigma_lo noise_sigma_hi seed upscale
    [net]    base_channels depth time_embed_dim disc_channels
    [train]  flow_steps distill_steps batch lr ema_mu lambda_p lambda_cd
             lambda_adv flow_variant kappa adv_enabled seed objective
             hr_metric flow_fraction checkpoint_every eval_every
    [sched]  fast_steps slow_steps shift_s time_sampling lognorm_mu
             lognorm_sigma pairing n_interval
    [eval]   steps seed

Unknown sections or keys are rejected. Booleans accept true/false/1/0/yes/no;
``eval.steps`` is a comma list.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields, replace

from .degrade import DegradeConfig
from .flow import FlowVariant, LossWeights
from .nets import NetConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    hr_size: int = 32
    channels: int = 3
    train_size: int = 1024
    eval_size: int = 32
    scale: int = 2
    blur_sigma_lo: float = 0.4
    blur_sigma_hi: float = 1.6
    noise_sigma_lo: float = 0.0
    noise_sigma_hi: float = 0.06
    seed: int = 0
    upscale: str = "nearest"

    def degrade_config(self) -> DegradeConfig:
        return DegradeConfig(self.scale, (self.blur_sigma_lo, self.blur_sigma_hi),
                             (self.noise_sigma_lo, self.noise_sigma_hi), "area", self.seed)


@dataclass(frozen=True)
class NetSection:
    base_channels: int = 32
    depth: int = 2
    time_embed_dim: int = 64
    disc_channels: int = 16


@dataclass(frozen=True)
class TrainSection:
    flow_steps: int = 2000
    distill_steps: int = 3000
    batch: int = 16
    lr: float = 1e-3
    ema_mu: float = 0.999
    lambda_p: float = 2.0
    lambda_cd: float = 0.1
    lambda_adv: float = 0.05
    flow_variant: str = "sr_flow"
    kappa: float = 0.2
    adv_enabled: bool = True
    seed: int = 0
    objective: str = "hrcd"
    hr_metric: str = "mse_surrogate"
    flow_fraction: float = 0.5
    checkpoint_every: int = 500
    eval_every: int = 500


@dataclass(frozen=True)
class SchedConfig:
    fast_steps: int = 4
    slow_steps: int = 1000
    shift_s: float = 3.0
    time_sampling: str = "lognorm"
    lognorm_mu: float = -2.0
    lognorm_sigma: float = 2.0
    pairing: str = "fast_slow"
    n_interval: int = 50


@dataclass(frozen=True)
class EvalConfig:
    steps: tuple[int, ...] = (4, 1)
    seed: int = 0
    use_ema: bool = True  # consistency-stage checkpoints sample from theta_minus


_SECTIONS = {"data": DataConfig, "net": NetSection, "train": TrainSection,
             "sched": SchedConfig, "eval": EvalConfig}


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    net: NetSection = field(default_factory=NetSection)
    train: TrainSection = field(default_factory=TrainSection)
    sched: SchedConfig = field(default_factory=SchedConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_text(cls, text: str, overrides: list[str] | tuple[str, ...] = ()) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc).replace("\n", " ")) from exc
        values = {name: {} for name in _SECTIONS}
        for sec in cp.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            values[sec].update(cp[sec])
        for item in overrides:
            key, sep, val = item.partition("=")
            sec, dot, name = key.strip().partition(".")
            if not sep or not dot or sec not in _SECTIONS:
                raise ConfigError(f"bad override {item!r}; expected section.key=value")
            values[sec][name] = val
        built = {}
        for sec, klass in _SECTIONS.items():
            defaults = {f.name: f.default for f in fields(klass)}
            kw = {}
            for k, raw in values[sec].items():
                if k not in defaults:
                    raise ConfigError(f"unknown key {sec}.{k}")
                try:
                    kw[k] = _parse_value(raw, defaults[k])
                except ValueError as exc:
                    raise ConfigError(f"{sec}.{k}: {exc}") from exc
            built[sec] = klass(**kw)
        cfg = cls(**built)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, overrides=()) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), overrides)

    def with_overrides(self, overrides) -> "ExperimentConfig":
        return ExperimentConfig.from_text(self.to_text(), overrides)

    def to_text(self) -> str:
        out = []
        for sec in _SECTIONS:
            out.append(f"[{sec}]")
            obj = getattr(self, sec)
            out += [f"{f.name} = {_format_value(getattr(obj, f.name))}" for f in fields(obj)]
            out.append("")
        return "\n".join(out)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def validate(self):
        try:
            self.degrade_config()
            self.net_config()
            self.flow_variant()
            self.loss_weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.data.hr_size % self.data.scale:
            raise ConfigError("data.hr_size must be divisible by data.scale")
        if self.train.objective not in ("hrcd", "cd", "hr"):
            raise ConfigError(f"train.objective must be hrcd, cd or hr, got {self.train.objective!r}")
        if self.sched.pairing not in ("fast_slow", "n_interval", "slow_only"):
            raise ConfigError(f"unknown sched.pairing {self.sched.pairing!r}")
        if self.sched.time_sampling not in ("uniform", "lognorm"):
            raise ConfigError(f"unknown sched.time_sampling {self.sched.time_sampling!r}")
        if self.train.batch < 1 or self.train.lr <= 0 or not 0 < self.train.ema_mu < 1:
            raise ConfigError("need batch >= 1, lr > 0 and 0 < ema_mu < 1")
        if not self.eval.steps:
            raise ConfigError("eval.steps is empty")

    def degrade_config(self) -> DegradeConfig:
        return self.data.degrade_config()

    def flow_variant(self) -> FlowVariant:
        return FlowVariant(self.train.flow_variant, self.train.kappa)

    def net_config(self) -> NetConfig:
        n = self.net
        return NetConfig(n.base_channels, n.depth, n.time_embed_dim,
                         condition_lr=self.flow_variant().conditions_on_lr,
                         image_channels=self.data.channels, disc_channels=n.disc_channels)

    def loss_weights(self) -> LossWeights:
        t = self.train
        return LossWeights(t.lambda_p, t.lambda_cd, t.lambda_adv)

    def replace(self, **sections) -> "ExperimentConfig":
        """Swap whole sections or patch fields: ``cfg.replace(train={"batch": 8})``."""
        kw = {}
        for sec, val in sections.items():
            kw[sec] = replace(getattr(self, sec), **val) if isinstance(val, dict) else val
        return replace(self, **kw)
