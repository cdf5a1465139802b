import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from rfsr.flow import FlowVariant, interp, velocity_target
from rfsr.nets import NetConfig, VelocityField
from rfsr.sample import Trajectory, euler_step, sample_ode, teacher_step
from rfsr.sched import uniform_grid

D = torch.float64


def rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=D)


def constant_field(v):
    return lambda x, t: v


def midpoint_step(x, t_from, t_to, f):
    """Second-order reference solver, used only as an oracle."""
    h = t_to - t_from
    return x + h * f(x + 0.5 * h * f(x, t_from), t_from + 0.5 * h)


class TestEuler:
    def test_no_move(self):
        x = rand(1, 3, 4, 4)
        assert torch.equal(euler_step(x, 0.4, 0.4, rand(1, 3, 4, 4, seed=1)), x)

    def test_straight_one_step(self):
        hr, lr = rand(2, 3, 4, 4, seed=1), rand(2, 3, 4, 4, seed=2)
        out = euler_step(lr, 1.0, 0.0, velocity_target(hr, lr))
        assert (out - hr).abs().max() <= 1e-15

    @pytest.mark.parametrize("n", [8, 16, 32])
    def test_exponential_first_order(self, n):
        # dx/dt = -x run from t=1 back to t=0: exact x(0) = e * x(1)
        def err(steps):
            x = torch.tensor([1.0], dtype=D)
            ts = [1 - k / steps for k in range(steps + 1)]
            for a, b in zip(ts, ts[1:]):
                x = euler_step(x, a, b, -x)
            return abs(x.item() - math.e)

        assert err(n) / err(2 * n) == pytest.approx(2.0, abs=0.3)

    def test_midpoint_oracle_is_second_order(self):
        def err(steps):
            x = torch.tensor([1.0], dtype=D)
            ts = [1 - k / steps for k in range(steps + 1)]
            for a, b in zip(ts, ts[1:]):
                x = midpoint_step(x, a, b, lambda y, t: -y)
            return abs(x.item() - math.e)

        assert err(16) / err(32) == pytest.approx(4.0, abs=0.4)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            euler_step(rand(1, 3, 4, 4), 1.0, 0.0, rand(1, 3, 4, 5))


class TestSampleODE:
    @given(st.integers(1, 60), st.integers(0, 2**32))
    def test_oracle_field_any_grid(self, n, seed):
        hr, lr = rand(1, 3, 5, 5, seed=seed), rand(1, 3, 5, 5, seed=seed + 1)
        traj = sample_ode(lr, constant_field(lr - hr), uniform_grid(n))
        assert (traj.final - hr).abs().max() <= 1e-12

    def test_single_step_formula(self):
        lr = rand(2, 3, 6, 6)
        net = lambda x, t: 0.1 * x * t
        traj = sample_ode(lr, net, uniform_grid(1), clamp=False)
        assert torch.equal(traj.final, lr - 1.0 * net(lr, 1.0))

    def test_zero_net_returns_lr(self):
        lr = rand(1, 3, 8, 8)
        net = VelocityField(NetConfig(base_channels=4, time_embed_dim=8)).double()
        assert torch.equal(sample_ode(lr, net, uniform_grid(4)).final, lr)

    def test_trajectory_times(self):
        traj = sample_ode(rand(1, 1, 4, 4), constant_field(torch.zeros(1, 1, 4, 4, dtype=D)), uniform_grid(4))
        assert isinstance(traj, Trajectory)
        assert traj.times == [1.0, 0.75, 0.5, 0.25, 0.0] and len(traj.states) == 5

    def test_clamps_only_final(self):
        lr = torch.full((1, 1, 4, 4), 0.5, dtype=D)
        traj = sample_ode(lr, constant_field(torch.full_like(lr, -1.6)), uniform_grid(2))
        assert traj.states[1][1].max() > 1.0  # mid-trajectory left alone
        assert traj.final.max() == 1.0

    def test_noise_variant_seeded(self):
        lr = rand(1, 3, 4, 4)
        f = constant_field(torch.zeros_like(lr))
        run = lambda: sample_ode(lr, f, uniform_grid(2), FlowVariant("noise_to_hr"),
                                 torch.Generator().manual_seed(3), clamp=False).final
        assert torch.equal(run(), run()) and not torch.equal(run(), lr)


class TestTeacherStep:
    def test_tiny_step(self):
        x = rand(1, 3, 4, 4)
        out = teacher_step(x, 0.5, 0.5 + 1e-9, constant_field(torch.ones_like(x)))
        assert (out - x).abs().max() <= 2e-9

    @given(st.floats(0.0, 0.99), st.floats(0.001, 1.0), st.integers(0, 2**32))
    def test_exact_teacher_lands_on_path(self, t, frac, seed):
        tp = t + (1 - t) * frac
        if not tp > t:
            return
        hr, lr = rand(1, 3, 4, 4, seed=seed), rand(1, 3, 4, 4, seed=seed + 1)
        out = teacher_step(interp(hr, lr, tp), t, tp, constant_field(lr - hr))
        assert torch.allclose(out, interp(hr, lr, t), atol=1e-14)

    def test_zero_teacher(self):
        x = rand(1, 3, 4, 4)
        assert torch.equal(teacher_step(x, 0.2, 0.7, constant_field(torch.zeros_like(x))), x)

    @given(st.floats(0.0, 0.9), st.floats(0.01, 0.1), st.integers(0, 2**32))
    def test_equals_reordered_euler(self, t, dt, seed):
        x, v = rand(2, 3, 4, 4, seed=seed), rand(2, 3, 4, 4, seed=seed + 1) - 0.5
        assert torch.equal(teacher_step(x, t, t + dt, constant_field(v)), euler_step(x, t + dt, t, v))

    def test_no_grad_to_teacher(self):
        net = VelocityField(NetConfig(base_channels=4, time_embed_dim=8)).double()
        out = teacher_step(rand(1, 3, 8, 8), 0.2, 0.6, net)
        assert not out.requires_grad

    def test_order_enforced(self):
        with pytest.raises(ValueError):
            teacher_step(rand(1, 1, 2, 2), 0.6, 0.6, constant_field(0))
        with pytest.raises(ValueError):
            teacher_step(rand(2, 1, 2, 2), torch.tensor([0.1, 0.7]), torch.tensor([0.5, 0.5]), constant_field(0))
