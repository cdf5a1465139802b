"""Dense-array numerics with reverse-mode gradients.

Tensors are ``torch.Tensor`` values; the graph is torch's autograd tape, rebuilt
fresh on every forward pass. The functions here add the shape validation and
the narrow op set the rest of the package is written against, plus an
independent central-difference gradient checker.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

Tensor = torch.Tensor
GradMap = dict[str, Tensor]

_BINARY = {"add", "sub", "mul"}
_UNARY = {"silu", "square"}


def tensor(data, dtype=torch.float32, requires_grad: bool = False) -> Tensor:
    t = torch.as_tensor(np.asarray(data), dtype=dtype).clone()
    t.requires_grad_(requires_grad)
    return t


def conv2d(input: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0,
           bias: Tensor | None = None) -> Tensor:
    """Cross-correlation of an NCHW input with an OIHW kernel.

    Zero padding of ``pad`` on every side. Output spatial extent is
    ``(H + 2*pad - kh) // stride + 1``.
    """
    if input.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {tuple(input.shape)} and {tuple(kernel.shape)}")
    if input.shape[1] != kernel.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {tuple(input.shape)} vs kernel {tuple(kernel.shape)}")
    if stride < 1 or pad < 0:
        raise ValueError(f"bad stride/pad {stride}/{pad}")
    oh = (input.shape[2] + 2 * pad - kernel.shape[2]) // stride + 1
    ow = (input.shape[3] + 2 * pad - kernel.shape[3]) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(
            f"conv2d output would be empty: input {tuple(input.shape)} vs kernel {tuple(kernel.shape)}")
    return F.conv2d(input, kernel, bias=bias, stride=stride, padding=pad)


def elementwise(op: str, a: Tensor, b: Tensor | float | None = None) -> Tensor:
    """Pointwise ``add``, ``sub``, ``mul``, ``scale``, ``silu`` or ``square``.

    Binary ops take a tensor of identical shape or a python scalar; no
    broadcasting beyond that.
    """
    if op in _UNARY:
        return F.silu(a) if op == "silu" else a * a
    if op == "scale":
        if isinstance(b, Tensor) and b.numel() != 1:
            raise ValueError("scale takes a scalar factor")
        return a * b
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if isinstance(b, Tensor) and b.shape != a.shape:
        raise ValueError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    return a * b


def channel_add(x: Tensor, v: Tensor) -> Tensor:
    """Add a per-sample, per-channel vector (N x C) to an NCHW map."""
    if v.shape != x.shape[:2]:
        raise ValueError(f"channel_add: {tuple(v.shape)} does not match {tuple(x.shape[:2])}")
    return x + v[:, :, None, None]


def resample2x(input: Tensor, direction: str, mode: str = "nearest") -> Tensor:
    """Double (``up``) or halve (``down``) the spatial extents.

    ``down`` is a 2x2 area average and needs even extents; ``up`` duplicates
    pixels (``nearest``) or interpolates (``bilinear``).
    """
    if direction == "down":
        h, w = input.shape[-2:]
        if h % 2 or w % 2:
            raise ValueError(f"resample2x down needs even extents, got {h}x{w}")
        return F.avg_pool2d(input, 2)
    if direction == "up":
        if mode == "nearest":
            return input.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
        if mode == "bilinear":
            return F.interpolate(input, scale_factor=2, mode="bilinear", align_corners=False)
        raise ValueError(f"unknown upsample mode {mode!r}")
    raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")


def backward(loss: Tensor, params: Mapping[str, Tensor], retain_graph: bool = True) -> GradMap:
    """Gradients of a scalar loss w.r.t. every reachable ``requires_grad`` leaf.

    Leaves the loss does not depend on are omitted, so a constant loss yields
    an empty map.
    """
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    names = [k for k, p in params.items() if p.requires_grad]
    if not loss.requires_grad or not names:
        return {}
    grads = torch.autograd.grad(loss.reshape(()), [params[k] for k in names],
                                retain_graph=retain_graph, allow_unused=True)
    return {k: g for k, g in zip(names, grads) if g is not None}


def grad_check(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-5,
               n_coords: int = 24, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` is re-evaluated with single coordinates of ``params`` nudged in
    place by +/- ``eps``; up to ``n_coords`` coordinates are sampled per tensor.
    """
    loss = loss_fn()
    grads = backward(loss, params, retain_graph=False)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = grads.get(name)
        flat = p.detach().view(-1)
        n = flat.numel()
        idx = np.arange(n) if n <= n_coords else rng.choice(n, n_coords, replace=False)
        for i in idx:
            i = int(i)
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = 0.0 if g is None else g.reshape(-1)[i].item()
            err = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            worst = max(worst, err)
    return worst


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N x I) times weight (O x I) transposed, plus bias."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch {tuple(x.shape)} vs {tuple(weight.shape)}")
    return F.linear(x, weight, bias)
