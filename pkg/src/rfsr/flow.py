"""Straight-path interpolation between HR and LR images, and the loss terms."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .ndgrad import elementwise

Tensor = torch.Tensor

FLOW_KINDS = ("sr_flow", "noise_to_hr", "noised_lr_to_hr")


@dataclass(frozen=True)
class FlowVariant:
    """Which distribution the path starts from at t=1.

    ``sr_flow`` starts at the (upscaled) LR image, ``noise_to_hr`` at pure
    Gaussian noise and ``noised_lr_to_hr`` at ``x_lr + kappa * eps``. The last
    two need the network to see ``x_lr`` as an extra input.
    """

    kind: str = "sr_flow"
    kappa: float = 0.2

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ValueError(f"unknown flow variant {self.kind!r}")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")

    @property
    def conditions_on_lr(self) -> bool:
        return self.kind != "sr_flow"


@dataclass(frozen=True)
class LossWeights:
    lambda_p: float = 2.0
    lambda_cd: float = 0.1
    lambda_adv: float = 0.05

    def __post_init__(self):
        if min(self.lambda_p, self.lambda_cd, self.lambda_adv) < 0:
            raise ValueError(f"loss weights must be >= 0: {self}")


def _as_time(t, x: Tensor) -> Tensor | float:
    """Scalar or per-sample times, shaped to broadcast over an NCHW batch."""
    if isinstance(t, Tensor):
        if t.ndim == 0:
            t = t.reshape(1)
        if t.shape[0] not in (1, x.shape[0]):
            raise ValueError(f"time vector of length {t.shape[0]} for batch {x.shape[0]}")
        return t.to(x.dtype).reshape(-1, *([1] * (x.ndim - 1)))
    return float(t)


def _check_unit_time(t):
    if isinstance(t, Tensor):
        bad = (t < 0) | (t > 1)
        if bool(bad.any()):
            raise ValueError("time outside [0, 1]")
    elif not 0.0 <= t <= 1.0:
        raise ValueError(f"time {t} outside [0, 1]")


def start_point(variant: FlowVariant, x_lr: Tensor, generator: torch.Generator | None = None) -> Tensor:
    """Draw the t=1 endpoint for ``variant`` given the upscaled LR batch."""
    if variant.kind == "sr_flow":
        return x_lr
    eps = torch.randn(x_lr.shape, generator=generator, dtype=x_lr.dtype)
    if variant.kind == "noise_to_hr":
        return eps
    return x_lr + variant.kappa * eps


def interp(x_hr: Tensor, x1: Tensor, t) -> Tensor:
    """x_t = (1 - t) * x_hr + t * x1, endpoints reproduced exactly."""
    if x_hr.shape != x1.shape:
        raise ValueError(f"interp shape mismatch {tuple(x_hr.shape)} vs {tuple(x1.shape)}")
    _check_unit_time(t)
    tt = _as_time(t, x_hr)
    if not isinstance(tt, Tensor):
        if tt == 0.0:
            return x_hr.clone()
        if tt == 1.0:
            return x1.clone()
        return (1 - tt) * x_hr + tt * x1
    out = (1 - tt) * x_hr + tt * x1
    # keep endpoints bit-exact for per-sample times
    out = torch.where(tt == 0, x_hr, out)
    return torch.where(tt == 1, x1, out)


def velocity_target(x_hr: Tensor, x1: Tensor) -> Tensor:
    if x_hr.shape != x1.shape:
        raise ValueError(f"velocity_target shape mismatch {tuple(x_hr.shape)} vs {tuple(x1.shape)}")
    return x1 - x_hr


def consistency_fn(x_t: Tensor, t, v: Tensor) -> Tensor:
    """Origin estimate f = x_t - t * v."""
    if v.shape != x_t.shape:
        raise ValueError(f"velocity shape {tuple(v.shape)} != state shape {tuple(x_t.shape)}")
    tt = _as_time(t, x_t)
    if not isinstance(tt, Tensor) and tt == 0.0:
        return x_t
    return x_t - tt * v


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel(x: Tensor) -> Tensor:
    """Horizontal and vertical Sobel responses per channel (valid padding).

    Returns N x 2C x (H-2) x (W-2): first C maps are d/dx, the rest d/dy.
    """
    c = x.shape[1]
    kx = _SOBEL_X.to(x.dtype)
    k = torch.stack([kx, kx.T])[:, None].repeat(c, 1, 1, 1)  # (2C, 1, 3, 3)
    g = torch.nn.functional.conv2d(x, k, groups=c)  # interleaved (c0x, c0y, c1x, ...)
    return torch.cat([g[:, 0::2], g[:, 1::2]], dim=1)


def perceptual_surrogate(x_hat: Tensor, x_ref: Tensor) -> Tensor:
    """Mean |Sobel(x_hat) - Sobel(x_ref)|: a structural stand-in for LPIPS."""
    return (sobel(x_hat) - sobel(x_ref)).abs().mean()


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return elementwise("square", elementwise("sub", a, b)).mean()


def flow_loss(x_hat: Tensor, x_hr: Tensor, lambda_p: float = 2.0) -> Tensor:
    """Image-space fidelity: MSE + lambda_p * gradient-difference surrogate."""
    loss = mse(x_hat, x_hr)
    if lambda_p:
        loss = loss + lambda_p * perceptual_surrogate(x_hat, x_hr)
    return loss


def cd_loss(student_pred: Tensor, target_pred: Tensor, metric: str = "l2") -> Tensor:
    """Consistency distance; the target side is always detached."""
    if metric != "l2":
        raise ValueError(f"unsupported metric {metric!r}")
    return mse(student_pred, target_pred.detach())


def hrcd_loss(student_at_tprime: Tensor, target_at_t: Tensor, student_at_t: Tensor, x_hr: Tensor,
              lambda_p: float = 2.0, hr_metric: str = "mse_surrogate",
              use_cd: bool = True, use_hr: bool = True) -> Tensor:
    """Consistency term plus an HR anchor on the student's estimate at t.

    ``hr_metric`` selects the anchor distance: ``mse_surrogate`` (the flow_loss
    form) or plain ``mse``. ``use_cd``/``use_hr`` switch the two halves off for
    the "cd only" / "hr only" ablations.
    """
    if not (student_at_tprime.shape == target_at_t.shape == student_at_t.shape == x_hr.shape):
        raise ValueError("hrcd_loss: all four tensors must share a shape")
    if hr_metric not in ("mse_surrogate", "mse"):
        raise ValueError(f"unknown hr_metric {hr_metric!r}")
    zero = student_at_t.sum() * 0.0
    cd = cd_loss(student_at_tprime, target_at_t) if use_cd else zero
    if not use_hr:
        return cd
    hr = flow_loss(student_at_t, x_hr, lambda_p if hr_metric == "mse_surrogate" else 0.0)
    return cd + hr


def hinge_losses(d_real: Tensor, d_fake: Tensor) -> tuple[Tensor, Tensor]:
    """Discriminator hinge loss and the generator's -E[D(fake)]."""
    disc = torch.relu(1 - d_real).mean() + torch.relu(1 + d_fake).mean()
    gen = -d_fake.mean()
    return disc, gen


def total_loss(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """flow + lambda_cd * hrcd + lambda_adv * adv; absent parts count as zero."""
    out = parts["flow"]
    if "hrcd" in parts:
        out = out + weights.lambda_cd * parts["hrcd"]
    if "adv" in parts:
        out = out + weights.lambda_adv * parts["adv"]
    return out
