"""Euler integration of the learned flow from t=1 (LR side) down to t=0."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch

from .flow import FlowVariant, _as_time, start_point
from .sched import Scheduler

Tensor = torch.Tensor


@dataclass
class Trajectory:
    states: list[tuple[float, Tensor]] = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.states]

    @property
    def final(self) -> Tensor:
        return self.states[-1][1]


def euler_step(x: Tensor, t_from, t_to, v: Tensor) -> Tensor:
    """x + (t_to - t_from) * v."""
    if v.shape != x.shape:
        raise ValueError(f"velocity shape {tuple(v.shape)} != state shape {tuple(x.shape)}")
    if not isinstance(t_from, Tensor) and not isinstance(t_to, Tensor) and t_from == t_to:
        return x
    dt = _as_time(t_to, x) - _as_time(t_from, x)
    return x + dt * v


def velocity_fn(net, x_lr: Tensor | None = None) -> Callable[[Tensor, object], Tensor]:
    """Bind the LR condition (if the net takes one) so callers see v(x, t)."""
    if getattr(getattr(net, "config", None), "condition_lr", False):
        return lambda x, t: net(x, t, x_lr)
    return net


@torch.no_grad()
def sample_ode(x_lr: Tensor, net, grid: Scheduler, variant: FlowVariant | None = None,
               generator: torch.Generator | None = None, clamp: bool = True) -> Trajectory:
    """Run Euler steps down ``grid`` (reversed) and finish at t=0.

    ``net`` is a velocity field module or any ``v(x, t)`` callable. For the
    noise-started variants the t=1 state is drawn with ``generator``. Only the
    final state is clamped to [0, 1].
    """
    variant = variant or FlowVariant()
    v = velocity_fn(net, x_lr)
    x = start_point(variant, x_lr, generator)
    times = list(reversed(grid.grid)) + [0.0]
    traj = Trajectory([(times[0], x)])
    for t_from, t_to in zip(times, times[1:]):
        x = euler_step(x, t_from, t_to, v(x, t_from))
        traj.states.append((t_to, x))
    if clamp:
        traj.states[-1] = (0.0, x.clamp(0.0, 1.0))
    return traj


@torch.no_grad()
def teacher_step(x_tprime: Tensor, t, t_prime, teacher) -> Tensor:
    """One reverse Euler step x_t' - (t' - t) * v(x_t', t'); never tracks gradients."""
    if isinstance(t, Tensor) or isinstance(t_prime, Tensor):
        if bool((torch.as_tensor(t) >= torch.as_tensor(t_prime)).any()):
            raise ValueError("teacher_step needs t < t'")
    elif not t < t_prime:
        raise ValueError(f"teacher_step needs t < t', got {t} >= {t_prime}")
    return euler_step(x_tprime, t_prime, t, teacher(x_tprime, t_prime))
