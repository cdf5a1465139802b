from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rfsr.sched import (Scheduler, TimePair, fast_slow_pair, make_pairing, n_interval_pair, sample_lognorm,
                        sample_time, shift_grid, shift_time, slow_only_pair, uniform_grid)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestGrids:
    def test_uniform_4(self):
        assert uniform_grid(4).grid == (0.25, 0.5, 0.75, 1.0)

    def test_uniform_1(self):
        assert uniform_grid(1).grid == (1.0,)

    def test_uniform_1000(self):
        g = np.array(uniform_grid(1000).grid)
        assert len(g) == 1000 and np.allclose(np.diff(g), 0.001) and g[-1] == 1.0

    def test_uniform_0_rejected(self):
        with pytest.raises(ValueError):
            uniform_grid(0)

    @pytest.mark.parametrize("grid", [(), (0.0, 1.0), (0.5, 0.9), (0.5, 0.5, 1.0)])
    def test_invalid_grids(self, grid):
        with pytest.raises(ValueError):
            Scheduler(grid)

    def test_predecessor(self):
        g = uniform_grid(4)
        assert g.predecessor(0.25) == 0.0 and g.predecessor(0.75) == 0.5 and g.predecessor(0.6) == 0.5


class TestShift:
    def test_identity(self):
        g = uniform_grid(7)
        assert shift_grid(g, 1.0) == g

    @given(st.floats(0.01, 100))
    def test_one_fixed(self, s):
        assert shift_time(1.0, s) == pytest.approx(1.0, abs=1e-15)
        assert shift_grid(uniform_grid(3), s).grid[-1] == 1.0

    def test_sd3_midpoint(self):
        assert shift_time(0.5, 3.0) == 0.75

    # points on a 1e-6 lattice: closer spacing can collapse to one float after the map
    @given(st.lists(st.integers(1, 10**6 - 1), min_size=1, max_size=30, unique=True), st.floats(0.1, 10.0))
    def test_monotone_and_endpoints(self, pts, s):
        grid = tuple(k / 10**6 for k in sorted(pts)) + (1.0,)
        out = shift_grid(Scheduler(grid), s).grid
        assert out[-1] == 1.0 and out[0] > 0
        assert all(b > a for a, b in zip(out, out[1:]))
        assert shift_time(0.0, s) == 0.0

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            shift_grid(uniform_grid(2), 0.0)


class TestTimeSampling:
    def test_lognorm_centered(self):
        t = sample_lognorm(0.0, 1.0, rng(), 100_000)
        assert abs(np.median(t) - 0.5) < 0.01

    def test_lognorm_skewed_low(self):
        assert (sample_lognorm(-2.0, 2.0, rng(), 100_000) < 0.5).mean() > 0.6

    @given(st.floats(-40, 40), st.floats(0.01, 20), st.integers(0, 2**32))
    def test_open_interval(self, mu, sigma, seed):
        t = sample_lognorm(mu, sigma, rng(seed), 256)
        assert ((t > 0) & (t < 1)).all()

    def test_sigma_rejected(self):
        with pytest.raises(ValueError):
            sample_lognorm(0.0, 0.0, rng())

    def test_sample_time_modes(self):
        assert sample_time(rng(1), "uniform", shift=3.0, size=5).shape == (5,)
        a = sample_time(rng(2), "lognorm", 0.0, 1.0, shift=3.0, size=1000)
        b = shift_time(sample_lognorm(0.0, 1.0, rng(2), 1000), 3.0)
        assert np.array_equal(a, b)
        with pytest.raises(ValueError):
            sample_time(rng(), "beta")


class TestPairs:
    def test_time_pair_invariant(self):
        assert TimePair(0.25, 0.5).delta_t == 0.25
        for t, tp in [(0.5, 0.5), (-0.1, 0.2), (0.2, 1.1)]:
            with pytest.raises(ValueError):
                TimePair(t, tp)

    def test_n_interval_one(self):
        r = rng()
        assert all(n_interval_pair(1, r) == TimePair(0.0, 1.0) for _ in range(20))

    def test_n_interval_four_uniform(self):
        r = rng(3)
        pairs = [n_interval_pair(4, r) for _ in range(100_000)]
        assert all(p.delta_t == 0.25 for p in pairs)
        freq = Counter(p.t for p in pairs)
        assert set(freq) == {0.0, 0.25, 0.5, 0.75}
        assert all(abs(c / 1e5 - 0.25) <= 0.01 for c in freq.values())

    def test_one_step_fast_pins_t_prime(self):
        fast, slow = uniform_grid(1), uniform_grid(1000)
        r = rng(4)
        pairs = [fast_slow_pair(fast, slow, r) for _ in range(5000)]
        assert all(p.t_prime == 1.0 for p in pairs)
        assert all(p.t in slow.grid or p.t == 0.0 for p in pairs)
        assert len({p.t for p in pairs}) > 900

    def test_fast4_slow1000_coverage(self):
        fast, slow = uniform_grid(4), uniform_grid(1000)
        r = rng(5)
        pairs = [fast_slow_pair(fast, slow, r) for _ in range(100_000)]
        assert all(0 <= p.t < p.t_prime <= 1 for p in pairs)
        assert set(fast.grid) <= {p.t_prime for p in pairs}
        assert max(p.delta_t for p in pairs) <= 0.25 + 1e-12

    def test_slow_first_prefers_fast_point(self):
        fast, slow = uniform_grid(4), uniform_grid(8)
        seen = set()
        r = rng(6)
        for _ in range(2000):
            p = fast_slow_pair(fast, slow, r)
            if p.t_prime not in fast.grid:  # only the slow-first branch yields off-fast t'
                seen.add((p.t, p.t_prime))
        assert (0.25, 0.375) in seen and (0.0, 0.125) in seen
        assert all(t == fast.predecessor(tp) or t == slow.predecessor(tp) for t, tp in seen)

    def test_fast_not_shorter_rejected(self):
        with pytest.raises(ValueError):
            fast_slow_pair(uniform_grid(4), uniform_grid(4), rng())

    def test_slow_only(self):
        slow = uniform_grid(10)
        r = rng(7)
        for _ in range(200):
            p = slow_only_pair(slow, r)
            assert p.t_prime in slow.grid and p.t == slow.predecessor(p.t_prime)

    @pytest.mark.parametrize("kind", ["fast_slow", "slow_only", "n_interval"])
    def test_seeded_reproducibility(self, kind):
        draw = make_pairing(kind, 4, 100, 18, shift=3.0)
        a = [draw(r) for r in [rng(9)] for _ in range(100)]
        b = [draw(r) for r in [rng(9)] for _ in range(100)]
        assert a == b

    @given(st.sampled_from(["fast_slow", "slow_only", "n_interval"]), st.integers(1, 8), st.floats(0.2, 5.0),
           st.integers(0, 2**32))
    def test_shifted_pairings_valid(self, kind, fast, s, seed):
        draw = make_pairing(kind, fast, 64, fast * 3, shift=s)
        r = rng(seed)
        for _ in range(200):
            p = draw(r)
            assert 0 <= p.t < p.t_prime <= 1

    def test_shifted_one_step_still_pins(self):
        draw = make_pairing("fast_slow", 1, 1000, shift=3.0)
        r = rng(8)
        assert all(draw(r).t_prime == 1.0 for _ in range(500))

    def test_unknown_pairing(self):
        with pytest.raises(ValueError):
            make_pairing("karras")
