"""Velocity field v(x_t, t[, x_lr]) and the patch discriminator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

from .ndgrad import channel_add, conv2d, elementwise, linear, resample2x

Tensor = torch.Tensor


@dataclass(frozen=True)
class NetConfig:
    base_channels: int = 32
    depth: int = 2
    time_embed_dim: int = 64
    condition_lr: bool = False
    image_channels: int = 3
    disc_channels: int = 16

    def __post_init__(self):
        for k, v in asdict(self).items():
            if k != "condition_lr" and v <= 0:
                raise ValueError(f"{k} must be positive, got {v}")
        if self.depth > 3:
            raise ValueError("depth > 3 is out of range for this network")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")


def time_embed(t, dim: int, max_freq: float = 1000.0) -> Tensor:
    """Sinusoidal features [sin(w_k t), cos(w_k t)], w_k geometric in [1, max_freq].

    ``t`` is a float or a length-N vector; returns N x dim (N=1 for a float).
    """
    if dim % 2:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t = torch.as_tensor(t, dtype=torch.get_default_dtype() if not isinstance(t, Tensor) else t.dtype)
    t = t.reshape(-1, 1)
    half = dim // 2
    k = torch.arange(half, dtype=t.dtype)
    freqs = max_freq ** (k / max(half - 1, 1))
    ang = t * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


def _conv_param(gen, cout, cin, k=3, gain=1.0):
    std = gain / math.sqrt(cin * k * k)
    return nn.Parameter(torch.randn(cout, cin, k, k, generator=gen) * std)


def _times(t, x: Tensor) -> Tensor:
    t = torch.as_tensor(t, dtype=x.dtype).reshape(-1)
    if t.numel() == 1:
        t = t.expand(x.shape[0])
    if t.numel() != x.shape[0]:
        raise ValueError(f"{t.numel()} times for a batch of {x.shape[0]}")
    return t


class VelocityField(nn.Module):
    """Small U-shaped conv net: per level two 3x3 conv+silu blocks, 2x area
    down / nearest up between levels, additive skips, time injected after the
    first conv of every block. The output conv starts at zero."""

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        g = torch.Generator().manual_seed(seed)
        c, d, e = config.base_channels, config.depth, config.time_embed_dim
        cin = config.image_channels * (2 if config.condition_lr else 1)
        chans = [c * 2**i for i in range(d)]
        self.chans = chans
        self.t_w = nn.Parameter(torch.randn(e, e, generator=g) / math.sqrt(e))
        self.t_b = nn.Parameter(torch.zeros(e))
        self.enc = nn.ParameterList()
        self.enc_b = nn.ParameterList()
        self.enc_t = nn.ParameterList()
        prev = cin
        for ch in chans:
            self.enc.extend([_conv_param(g, ch, prev, gain=1.4), _conv_param(g, ch, ch, gain=1.4)])
            self.enc_b.extend([nn.Parameter(torch.zeros(ch)), nn.Parameter(torch.zeros(ch))])
            self.enc_t.append(nn.Parameter(torch.randn(ch, e, generator=g) / math.sqrt(e)))
            prev = ch
        self.dec = nn.ParameterList()
        self.dec_b = nn.ParameterList()
        self.dec_t = nn.ParameterList()
        for i in reversed(range(d - 1)):
            ch = chans[i]
            self.dec.extend([_conv_param(g, ch, chans[i + 1]), _conv_param(g, ch, ch, gain=1.4),
                             _conv_param(g, ch, ch, gain=1.4)])
            self.dec_b.extend([nn.Parameter(torch.zeros(ch)) for _ in range(3)])
            self.dec_t.append(nn.Parameter(torch.randn(ch, e, generator=g) / math.sqrt(e)))
        self.out_w = nn.Parameter(torch.zeros(config.image_channels, c, 3, 3))
        self.out_b = nn.Parameter(torch.zeros(config.image_channels))

    def forward(self, x_t: Tensor, t, x_lr: Tensor | None = None) -> Tensor:
        cfg = self.config
        if cfg.condition_lr != (x_lr is not None):
            raise ValueError("x_lr must be given exactly when the net is LR-conditioned")
        h = x_t if x_lr is None else torch.cat([x_t, x_lr], dim=1)
        emb = time_embed(_times(t, x_t), cfg.time_embed_dim)
        emb = elementwise("silu", linear(emb, self.t_w, self.t_b))
        skips = []
        for i in range(cfg.depth):
            if i:
                h = resample2x(h, "down")
            h = conv2d(h, self.enc[2 * i], pad=1, bias=self.enc_b[2 * i])
            h = elementwise("silu", channel_add(h, linear(emb, self.enc_t[i])))
            h = elementwise("silu", conv2d(h, self.enc[2 * i + 1], pad=1, bias=self.enc_b[2 * i + 1]))
            skips.append(h)
        skips.pop()
        for j, skip in enumerate(reversed(skips)):
            h = conv2d(resample2x(h, "up"), self.dec[3 * j], pad=1, bias=self.dec_b[3 * j])
            h = elementwise("add", h, skip)
            h = conv2d(h, self.dec[3 * j + 1], pad=1, bias=self.dec_b[3 * j + 1])
            h = elementwise("silu", channel_add(h, linear(emb, self.dec_t[j])))
            h = elementwise("silu", conv2d(h, self.dec[3 * j + 2], pad=1, bias=self.dec_b[3 * j + 2]))
        return conv2d(h, self.out_w, pad=1, bias=self.out_b)


class Discriminator(nn.Module):
    """Three stride-2 conv+silu layers and a 3x3 score head; one score per patch."""

    def __init__(self, config: NetConfig = NetConfig(), seed: int = 1):
        super().__init__()
        self.config = config
        g = torch.Generator().manual_seed(seed)
        c, e, ic = config.disc_channels, config.time_embed_dim, config.image_channels
        self.ws = nn.ParameterList([_conv_param(g, c, ic, gain=1.4), _conv_param(g, 2 * c, c, gain=1.4),
                                    _conv_param(g, 2 * c, 2 * c, gain=1.4)])
        self.bs = nn.ParameterList([nn.Parameter(torch.zeros(n)) for n in (c, 2 * c, 2 * c)])
        self.t_proj = nn.Parameter(torch.randn(c, e, generator=g) / math.sqrt(e))
        self.head_w = _conv_param(g, 1, 2 * c)
        self.head_b = nn.Parameter(torch.zeros(1))

    def forward(self, x: Tensor, t) -> Tensor:
        emb = time_embed(_times(t, x), self.config.time_embed_dim)
        h = conv2d(x, self.ws[0], stride=2, pad=1, bias=self.bs[0])
        h = elementwise("silu", channel_add(h, linear(emb, self.t_proj)))
        for w, b in zip(self.ws[1:], self.bs[1:]):
            h = elementwise("silu", conv2d(h, w, stride=2, pad=1, bias=b))
        return conv2d(h, self.head_w, pad=1, bias=self.head_b)


def disc_forward(d: Discriminator, x: Tensor, t) -> Tensor:
    return d(x, t)


def named_params(module: nn.Module) -> dict[str, Tensor]:
    return dict(module.named_parameters())
