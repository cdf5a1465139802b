import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from rfsr.nets import Discriminator, NetConfig, VelocityField, disc_forward, named_params, time_embed
from rfsr.ndgrad import grad_check

D = torch.float64
SMALL = NetConfig(base_channels=4, depth=2, time_embed_dim=8, disc_channels=4)


def rand(*shape, seed=0):
    return torch.rand(*shape, generator=torch.Generator().manual_seed(seed), dtype=D)


def net64(cfg=SMALL, seed=0, randomize_head=True):
    net = VelocityField(cfg, seed).double()
    if randomize_head:  # zero head would make every upstream gradient vanish
        with torch.no_grad():
            net.out_w.normal_(0, 0.3, generator=torch.Generator().manual_seed(seed + 7))
    return net


class TestTimeEmbed:
    def test_t0(self):
        e = time_embed(0.0, 16)
        assert e.shape == (1, 16)
        assert torch.count_nonzero(e[:, :8]) == 0 and torch.equal(e[:, 8:], torch.ones(1, 8))

    def test_same_t(self):
        assert torch.equal(time_embed(0.37, 8), time_embed(0.37, 8))

    def test_endpoints_differ(self):
        assert (time_embed(0.0, 8) - time_embed(1.0, 8)).norm() > 0

    def test_odd_rejected(self):
        with pytest.raises(ValueError):
            time_embed(0.5, 7)

    def test_vector(self):
        t = torch.tensor([0.1, 0.9], dtype=D)
        e = time_embed(t, 6)
        assert e.shape == (2, 6) and torch.equal(e[1], time_embed(torch.tensor(0.9, dtype=D), 6)[0])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(base_channels=0), dict(depth=4), dict(time_embed_dim=7),
                                    dict(depth=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NetConfig(**kw)

    def test_shapes_determined_by_config(self):
        a, b = VelocityField(SMALL, seed=0), VelocityField(SMALL, seed=5)
        assert {k: v.shape for k, v in named_params(a).items()} == {k: v.shape for k, v in named_params(b).items()}


class TestVelocityField:
    def test_zero_init_output(self):
        net = VelocityField(SMALL).double()
        assert torch.count_nonzero(net(rand(2, 3, 8, 8), 0.3)) == 0

    def test_identity_start(self):
        x_lr = rand(1, 3, 8, 8)
        net = VelocityField(SMALL).double()
        assert torch.equal(x_lr - 1.0 * net(x_lr, 1.0), x_lr)

    @given(st.integers(1, 3), st.sampled_from([4, 8, 12, 16]), st.integers(1, 3), st.floats(0, 1))
    def test_shape_preserved(self, n, size, depth, t):
        if size % 2 ** (depth - 1):
            return
        cfg = NetConfig(base_channels=4, depth=depth, time_embed_dim=8)
        x = rand(n, 3, size, size)
        assert net64(cfg)(x, t).shape == x.shape

    def test_deterministic(self):
        x = rand(2, 3, 8, 8)
        assert torch.equal(net64()(x, 0.5), net64()(x, 0.5))

    def test_per_sample_time(self):
        net, x = net64(), rand(2, 3, 8, 8)
        out = net(x, torch.tensor([0.2, 0.8], dtype=D))
        assert torch.allclose(out[1:], net(x[1:], 0.8), atol=1e-14)

    def test_lr_condition_contract(self):
        cond = VelocityField(NetConfig(base_channels=4, time_embed_dim=8, condition_lr=True)).double()
        x = rand(1, 3, 8, 8)
        assert cond(x, 0.5, x).shape == x.shape
        with pytest.raises(ValueError):
            cond(x, 0.5)
        with pytest.raises(ValueError):
            VelocityField(SMALL).double()(x, 0.5, x)

    def test_gradcheck_params(self):
        net = net64()
        x = rand(2, 3, 8, 8)
        assert grad_check(lambda: net(x, 0.4).pow(2).mean(), named_params(net), n_coords=6) <= 1e-4

    def test_gradcheck_input(self):
        net = net64()
        x = rand(1, 3, 8, 8).requires_grad_()
        assert grad_check(lambda: net(x, 0.6).pow(2).mean(), {"x": x}) <= 1e-4


class TestDiscriminator:
    def test_finite_on_zeros(self):
        d = Discriminator(SMALL).double()
        s = disc_forward(d, torch.zeros(2, 3, 16, 16, dtype=D), 0.5)
        assert torch.isfinite(s).all() and s.shape == (2, 1, 2, 2)

    def test_deterministic(self):
        x = rand(1, 3, 16, 16)
        assert torch.equal(Discriminator(SMALL).double()(x, 0.3), Discriminator(SMALL).double()(x, 0.3))

    def test_gradcheck(self):
        d = Discriminator(SMALL).double()
        x = rand(2, 3, 16, 16)
        assert grad_check(lambda: d(x, torch.tensor([0.2, 0.7], dtype=D)).mean(), named_params(d), n_coords=6) <= 1e-4

    def test_time_changes_scores(self):
        d = Discriminator(SMALL).double()
        x = rand(1, 3, 16, 16)
        assert not torch.equal(d(x, 0.0), d(x, 1.0))
