import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calibeat import (
    InvalidEta,
    LossSpec,
    bound_lipschitz,
    bound_tsallis,
    btrl_equality,
    decompose,
    headline_rate,
    multi_loss_regret,
    regret,
    run,
)
from calibeat.validation import relative_residual

from strategies import ALL_SPECS

SQ, LOG = LossSpec.squared(), LossSpec.log()


class TestRegret:
    def test_perfect_hindsight(self):
        ys = np.array([0, 1, 1])
        ps = np.eye(2)[ys]
        best = np.array([1 / 3, 2 / 3])
        expected = -sum(np.sum((best - np.eye(2)[y]) ** 2) for y in ys)
        assert regret(SQ, ps, ys) == pytest.approx(expected)

    def test_constant_outcomes(self):
        assert regret(SQ, np.tile([1.0, 0.0], (4, 1)), [0] * 4) == 0.0

    def test_hand_value(self):
        assert regret(SQ, [[0.5, 0.5], [0.5, 0.5]], [0, 1]) == pytest.approx(0.0)

    def test_multi_loss(self):
        ps = np.full((3, 2), 0.5)
        out = multi_loss_regret([SQ, SQ, LOG], ps, [0, 0, 1])
        assert out[0] == out[1] and len(out) == 3


class TestDecompose:
    def test_empty(self):
        report = decompose(SQ, run(SQ, [], 1.0, 2))
        assert (report.total, report.stability, report.btrl_vs_pT1, report.smoothing) == (0, 0, 0, 0)

    def test_sums(self, rng):
        spec = LossSpec.tsallis(1.5)
        report = decompose(spec, run(spec, rng.integers(0, 3, 100), 1.0, 3))
        assert report.residual <= 1e-8

    def test_ftl_smoothing_zero(self, rng):
        report = decompose(SQ, run(SQ, rng.integers(0, 2, 100), math.inf, 2))
        assert report.smoothing == 0.0

    def test_rescoring(self, rng):
        tr = run(LOG, rng.integers(0, 3, 50), 1.0, 3)
        assert decompose(SQ, tr) == decompose(SQ, run(SQ, tr.ys, 1.0, 3))


class TestBtrl:
    @pytest.mark.parametrize("eta", [0.25, 1.0, 4.0])
    @pytest.mark.parametrize("d", [2, 3, 5])
    def test_empty_bookkeeping(self, eta, d):
        report = btrl_equality(LOG, run(LOG, [], eta, d))
        assert report.lhs == 0.0
        assert abs(report.term_pos + report.term_prefix + report.term_grid) <= 1e-12
        assert report.term_path == 0.0

    def test_log_random(self, rng):
        report = btrl_equality(LOG, run(LOG, rng.integers(0, 3, 200), 1.0, 3))
        assert report.residual <= 1e-8

    def test_needs_finite_eta(self):
        with pytest.raises(InvalidEta):
            btrl_equality(LOG, run(LOG, [0, 1], math.inf, 2))

    def test_hand_value(self):
        # Squared, d=2, eta=1, one outcome e_1: p_2 = (2/3, 1/3).
        report = btrl_equality(SQ, run(SQ, [0], 1.0, 2))
        assert report.lhs == 0.0
        assert report.term_pos == pytest.approx(2 / 9 + 8 / 9)
        assert report.term_prefix == pytest.approx(-0.5)
        assert report.term_grid == pytest.approx(-0.5)
        assert report.term_path == pytest.approx(-2 * 2 / 36)


@given(
    st.sampled_from(ALL_SPECS),
    st.sampled_from([2, 3, 5]),
    st.integers(0, 400),
    st.sampled_from([0.25, 1.0, 4.0]),
    st.integers(0, 2**32 - 1),
)
def test_identities_random(spec, d, T, eta, seed):
    ys = np.random.default_rng(seed).integers(0, d, T)
    tr = run(spec, ys, eta, d)
    assert decompose(spec, tr).residual <= 1e-8
    report = btrl_equality(spec, tr)
    assert report.residual <= 1e-8
    assert report.max_trailing_term <= 1e-12


class TestBounds:
    def test_alpha_one(self):
        b = bound_tsallis(1.0, 3, 1000, 1.0)
        assert b.penalty_fallback == math.inf
        assert b.penalty == pytest.approx(3 + 3 * (1 + math.log(1000)))
        assert b.smoothing == 9.0

    def test_degenerate_dimension(self):
        b = bound_tsallis(2.0, 1, 1000, 1.0)
        assert math.isfinite(b.total)

    def test_formula(self):
        alpha, d, T = 1.5, 4, 1e4
        L = math.log(T / d + 1)
        stab = alpha * (math.log(T) + d**0.5 * (L + L**0.5))
        b = bound_tsallis(alpha, d, T, 1.0)
        assert b.stability == pytest.approx(stab)
        assert b.penalty == pytest.approx(min(d + d**0.5 * (1 + math.log(T)), d * 3))
        assert b.smoothing == pytest.approx(18.0)

    def test_smoothing_needs_unit_eta(self):
        with pytest.raises(InvalidEta):
            bound_tsallis(1.5, 3, 100, 2.0)
        assert bound_tsallis(1.5, 3, 100, 2.0, smoothing=False).smoothing is None

    def test_empirical_compliance(self):
        spec = LossSpec.tsallis(1.5)
        b = bound_tsallis(1.5, 4, 10_000, 1.0)
        for seed in range(100):
            rng = np.random.default_rng(seed)
            ys = rng.choice(4, size=10_000, p=rng.dirichlet(np.ones(4)))
            r = decompose(spec, run(spec, ys, 1.0, 4))
            assert r.stability <= b.stability
            assert r.btrl_vs_pT1 <= b.penalty
            assert r.smoothing <= b.smoothing

    def test_lipschitz(self):
        assert bound_lipschitz(2, 2, 100, math.inf) == pytest.approx(4 * (1 + math.log(100)))
        assert bound_lipschitz(2, 2, 100, math.inf) == pytest.approx(22.42, abs=0.01)
        assert bound_lipschitz(4, 2, 100, math.inf) == pytest.approx(8 * (1 + math.log(100)))
        assert bound_lipschitz(2, 2, 100, 1.0, d=3) == pytest.approx(4 * (3 + math.log(100)))
        with pytest.raises(InvalidEta):
            bound_lipschitz(2, 2, 100, 0.5, d=3)

    @pytest.mark.parametrize("d", [2, 3, 5, 10])
    @pytest.mark.parametrize("T", [10, 1000, 100_000])
    def test_headline_monotone(self, d, T):
        rates = [headline_rate(a, d, T) for a in np.linspace(1, 2, 11)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_sweep_on_one_transcript(self, rng):
        ys = rng.integers(0, 3, 2000)
        tr = run(LOG, ys, 1.0, 3)
        alphas = [1.0, 1.25, 1.5, 1.75, 2.0]
        specs = [LossSpec.tsallis(a) for a in alphas]
        regrets = multi_loss_regret(specs, tr.predictions[:-1], ys)
        for a, r in zip(alphas, regrets):
            assert r <= bound_tsallis(a, 3, 2000, 1.0).total

    def test_log_and_squared_ftrl(self, rng):
        ys = rng.integers(0, 3, 2000)
        ps = run(LOG, ys, 1.0, 3).predictions[:-1]
        r_log, r_sq = multi_loss_regret([LOG, SQ], ps, ys)
        assert r_log <= bound_tsallis(1.0, 3, 2000).total
        assert r_sq <= bound_tsallis(2.0, 3, 2000).total


def test_relative_residual():
    assert relative_residual(math.inf, math.inf) == 0.0
    assert relative_residual(1.0, 1.0 + 1e-12) <= 1.1e-12
    assert relative_residual(0.0, 1e-3) == pytest.approx(1e-3)
