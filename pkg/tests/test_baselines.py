"""Sparse-recovery oracles: greedy pursuit vs exhaustive enumeration, and the
reweighting-rate arithmetic."""

import numpy as np
import pytest

from spartran import baselines as bl
from spartran import channels as ch
from spartran import dictionary as dc
from spartran.errors import ConfigError


def planted_sample(w, m, entries):
    """Noiseless channel with complex coefficients planted on grid taps."""
    paths = [
        ch.PathSpec(tau=tap / w, magnitude=abs(a), phase=-float(np.angle(a)))
        for tap, a in entries
    ]
    return ch.synth_cir(paths, m, w, 0.0, np.random.default_rng(0))


class TestOmp:
    W = 1e8

    def test_single_on_grid_path(self):
        d = dc.build_sinc_dictionary(16, 16, self.W)
        s = planted_sample(self.W, 16, [(5, 1.0 + 0.0j)])
        sol = bl.omp_solve(s, d, max_k=4, eps=1e-12)
        assert sol.support == (5,)
        assert sol.residual_norm < 1e-10

    def test_zero_channel_gives_empty_support(self):
        d = dc.build_sinc_dictionary(16, 16, self.W)
        s = ch.ChannelSample(np.zeros(16), np.zeros(16), self.W)
        sol = bl.omp_solve(s, d, max_k=4, eps=0.0)
        assert sol.support == ()
        assert sol.residual_norm == 0.0

    def test_recovers_separated_planted_support(self):
        d = dc.build_sinc_dictionary(24, 24, self.W)
        entries = [(4, 1.0 - 0.5j), (11, -0.7 + 0.2j), (19, 0.4 + 0.9j)]
        s = planted_sample(self.W, 24, entries)
        sol = bl.omp_solve(s, d, max_k=3, eps=1e-12)
        assert set(sol.support) == {4, 11, 19}
        assert sol.residual_norm < 1e-9
        # recovered complex coefficients match the planted ones
        planted = {tap: a for tap, a in entries}
        for idx, cre, cim in zip(sol.support, sol.coeffs_re, sol.coeffs_im):
            assert cre + 1j * cim == pytest.approx(planted[idx], abs=1e-9)

    def test_residual_nonincreasing_in_max_k(self):
        rng = np.random.default_rng(9)
        d = dc.build_sinc_dictionary(16, 32, self.W)
        s = ch.ChannelSample(rng.normal(size=16), rng.normal(size=16), self.W)
        residuals = [bl.omp_solve(s, d, max_k=k, eps=0.0).residual_norm for k in range(6)]
        assert all(a >= b - 1e-12 for a, b in zip(residuals, residuals[1:]))

    def test_eps_stops_early(self):
        d = dc.build_sinc_dictionary(16, 16, self.W)
        s = planted_sample(self.W, 16, [(3, 2.0 + 0j), (9, 0.001 + 0j)])
        sol = bl.omp_solve(s, d, max_k=8, eps=0.01)
        assert sol.support == (3,)


class TestExhaustiveOracle:
    W = 1e8

    def test_k_zero_residual_is_signal_norm(self):
        rng = np.random.default_rng(1)
        d = dc.build_sinc_dictionary(8, 8, self.W)
        s = ch.ChannelSample(rng.normal(size=8), rng.normal(size=8), self.W)
        sol = bl.exhaustive_sparse_oracle(s, d, 0)
        expect = np.sqrt((s.re**2 + s.im**2).sum())
        assert sol.residual_norm == pytest.approx(expect, rel=1e-12)
        assert sol.support == ()

    def test_recovers_planted_one_sparse(self):
        d = dc.build_sinc_dictionary(12, 12, self.W)
        s = planted_sample(self.W, 12, [(7, 0.3 - 1.1j)])
        sol = bl.exhaustive_sparse_oracle(s, d, 1)
        assert sol.support == (7,)
        assert sol.residual_norm < 1e-10

    def test_never_worse_than_omp(self):
        d = dc.build_sinc_dictionary(16, 16, self.W)
        for seed in range(12):
            rng = np.random.default_rng(seed)
            taps = rng.choice(np.arange(1, 16), size=2, replace=False)
            coeffs = rng.normal(size=2) + 1j * rng.normal(size=2)
            s = planted_sample(self.W, 16, list(zip(taps, coeffs)))
            greedy = bl.omp_solve(s, d, max_k=2, eps=0.0)
            oracle = bl.exhaustive_sparse_oracle(s, d, 2)
            assert oracle.residual_norm <= greedy.residual_norm + 1e-12

    def test_guard_rejects_huge_enumerations(self):
        d = dc.build_sinc_dictionary(64, 64, self.W)
        s = ch.ChannelSample(np.ones(64), np.zeros(64), self.W)
        with pytest.raises(ValueError, match="guard"):
            bl.exhaustive_sparse_oracle(s, d, 5)


class TestTheoremArithmetic:
    def test_worked_example(self):
        rep = bl.theorem2_check([np.array([5.0, 0.1, 0.1])], {0}, 2.0)
        assert rep.R == pytest.approx(5.2)
        assert rep.R_S == pytest.approx(5.0)
        assert rep.B == pytest.approx(0.2)
        assert rep.preconditioned_norm == pytest.approx(2.7)
        assert rep.improved

    def test_full_index_set_degenerates_to_r_over_c(self):
        rep = bl.theorem2_check([np.array([1.0, 2.0, 3.0])], {0, 1, 2}, 4.0)
        assert rep.B == 0.0
        assert rep.preconditioned_norm == pytest.approx(rep.R / 4.0)
        assert rep.improved

    def test_hypothesis_violation_names_inequality(self):
        with pytest.raises(ConfigError, match="B < R_S"):
            bl.theorem2_check([np.array([0.1, 5.0, 5.0])], {0}, 100.0)
        with pytest.raises(ConfigError, match="c > R_S"):
            bl.theorem2_check([np.array([5.0, 0.1, 0.1])], {0}, 1.0)

    def test_improved_for_random_admissible_draws(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n = int(rng.integers(3, 12))
            rows = int(rng.integers(1, 5))
            coeffs = rng.uniform(0.0, 1.0, size=(rows, n))
            s_size = int(rng.integers(1, n))
            s_idx = rng.choice(n, size=s_size, replace=False)
            mask0 = np.ones(n, dtype=bool)
            mask0[s_idx] = False
            b0 = coeffs[:, mask0].sum(axis=1).max() if mask0.any() else 0.0
            # lift every S column so each row's S mass strictly exceeds B
            coeffs[:, s_idx] += (b0 + rng.uniform(0.5, 2.0)) / s_size
            r = coeffs.sum(axis=1).max()
            r_s = coeffs[:, s_idx].sum(axis=1).max()
            mask = np.ones(n, dtype=bool)
            mask[s_idx] = False
            b = coeffs[:, mask].sum(axis=1).max() if mask.any() else 0.0
            c = (r_s / (r - b)) * float(rng.uniform(1.001, 10.0))
            rep = bl.theorem2_check(coeffs, set(s_idx.tolist()), c)
            assert rep.improved
            assert rep.preconditioned_norm == pytest.approx(rep.B + rep.R_S / rep.c, abs=1e-12)
