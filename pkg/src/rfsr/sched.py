"""Timestep grids, the resolution shift, time sampling and (t, t') pairing."""
from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Scheduler:
    grid: tuple[float, ...]
    label: str = "uniform"

    def __post_init__(self):
        g = self.grid
        if not g:
            raise ValueError("empty timestep grid")
        if not g[0] > 0 or g[-1] != 1.0:
            raise ValueError(f"grid must lie in (0, 1] and end at 1.0, got {g[0]}..{g[-1]}")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("grid must be strictly increasing")

    def __len__(self):
        return len(self.grid)

    def predecessor(self, t: float) -> float:
        """Largest grid point strictly below ``t``, or 0."""
        i = bisect.bisect_left(self.grid, t)
        return self.grid[i - 1] if i > 0 else 0.0


@dataclass(frozen=True)
class TimePair:
    t: float
    t_prime: float

    def __post_init__(self):
        if not 0.0 <= self.t < self.t_prime <= 1.0:
            raise ValueError(f"invalid time pair t={self.t}, t'={self.t_prime}")

    @property
    def delta_t(self) -> float:
        return self.t_prime - self.t


def uniform_grid(n: int, label: str = "uniform") -> Scheduler:
    if n < 1:
        raise ValueError(f"need at least one step, got {n}")
    grid = [k / n for k in range(1, n + 1)]
    grid[-1] = 1.0
    return Scheduler(tuple(grid), label)


def shift_time(t, s: float):
    """t -> s*t / (1 + (s - 1)*t): monotone, fixes 0 and 1, pushes mass toward 1 for s > 1."""
    if s <= 0:
        raise ValueError(f"shift must be > 0, got {s}")
    if s == 1:
        return t
    return s * t / (1 + (s - 1) * t)


def shift_grid(g: Scheduler, s: float) -> Scheduler:
    if s <= 0:
        raise ValueError(f"shift must be > 0, got {s}")
    grid = [float(shift_time(t, s)) for t in g.grid]
    grid[-1] = 1.0
    return Scheduler(tuple(grid), g.label)


def sample_lognorm(mu: float, sigma: float, rng: np.random.Generator, size=None):
    """Logit-normal draw: logistic(z), z ~ N(mu, sigma^2); lands in the open unit interval."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    z = rng.normal(mu, sigma, size=size)
    t = 1.0 / (1.0 + np.exp(-z))
    # logistic saturates to exactly 0/1 in float64 for |z| > ~37
    return np.clip(t, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def sample_time(rng: np.random.Generator, mode: str = "lognorm", mu: float = -2.0,
                sigma: float = 2.0, shift: float = 1.0, size=None):
    """Training-time draw in (0, 1): ``uniform`` or ``lognorm``, then shifted."""
    if mode == "uniform":
        t = rng.uniform(0.0, 1.0, size=size)
    elif mode == "lognorm":
        t = sample_lognorm(mu, sigma, rng, size=size)
    else:
        raise ValueError(f"unknown time sampling {mode!r}")
    return shift_time(t, shift)


def n_interval_pair(n: int, rng: np.random.Generator) -> TimePair:
    """Adjacent boundaries k/n, (k+1)/n of a uniform n-partition."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    k = int(rng.integers(0, n))
    return TimePair(k / n, 1.0 if k + 1 == n else (k + 1) / n)


def slow_only_pair(slow: Scheduler, rng: np.random.Generator) -> TimePair:
    """t' uniform on the slow grid, t its slow-grid predecessor (0 if none)."""
    tp = slow.grid[int(rng.integers(0, len(slow)))]
    return TimePair(slow.predecessor(tp), tp)


def fast_slow_pair(fast: Scheduler, slow: Scheduler, rng: np.random.Generator,
                   max_retries: int = 64) -> TimePair:
    """Draw t' from one grid and t from the other, in t''s neighbourhood.

    Fast first (prob 1/2): t' uniform on the fast grid, t uniform over slow
    points in [pred_fast(t'), t'), redrawing if that set is empty. Slow first: t' uniform on the slow
    grid, t the largest fast point below t', else t''s slow predecessor. A
    one-point fast grid always goes fast first, so t' is pinned to 1.
    """
    if len(fast) >= len(slow):
        raise ValueError("fast grid must be shorter than slow grid")
    slow_grid = slow.grid
    for _ in range(max_retries):
        if len(fast) == 1 or rng.random() < 0.5:
            tp = fast.grid[int(rng.integers(0, len(fast)))]
            lo = fast.predecessor(tp)
            i0 = bisect.bisect_left(slow_grid, lo)
            i1 = bisect.bisect_left(slow_grid, tp)
            if i1 == i0:
                continue
            t = slow_grid[int(rng.integers(i0, i1))]
        else:
            tp = slow_grid[int(rng.integers(0, len(slow)))]
            t = fast.predecessor(tp)
            if t == 0.0:
                t = slow.predecessor(tp)
        if 0.0 <= t < tp:
            return TimePair(t, tp)
    raise RuntimeError("fast_slow_pair: could not draw a valid pair")


def make_pairing(kind: str, fast_steps: int = 4, slow_steps: int = 1000, n: int = 50, shift: float = 1.0):
    """Return ``rng -> TimePair`` for a named pairing policy.

    ``fast_slow`` and ``slow_only`` sample on shifted grids; ``n_interval``
    draws on the unshifted partition and maps both ends through the shift,
    which is the same thing because the shift is a monotone bijection.
    """
    if kind == "fast_slow":
        fast = shift_grid(uniform_grid(fast_steps, "fast"), shift)
        slow = shift_grid(uniform_grid(slow_steps, "slow"), shift)
        return lambda rng: fast_slow_pair(fast, slow, rng)
    if kind == "slow_only":
        slow = shift_grid(uniform_grid(slow_steps, "slow"), shift)
        return lambda rng: slow_only_pair(slow, rng)
    if kind == "n_interval":
        def draw(rng):
            p = n_interval_pair(n, rng)
            return TimePair(float(shift_time(p.t, shift)), 1.0 if p.t_prime == 1.0 else float(shift_time(p.t_prime, shift)))
        return draw
    raise ValueError(f"unknown pairing {kind!r}")
