import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from calibeat import (
    Calibeater,
    HorizonTooSmall,
    InvalidEpsilon,
    LossSpec,
    OutOfGrid,
    Unsupported,
    approx_error_bound,
    assign,
    binned_decomposition,
    bound_tsallis,
    build_binning,
    calibeat,
    calibeat_certificate,
    calibration_regret_identity,
    clamp_forecast,
    decomposition_by_forecast,
    loss_eval,
)
from calibeat.losses import _loss_matrix
from calibeat.validation import relative_residual

from strategies import ALL_SPECS, FAIR_SPECS

SQ, LOG = LossSpec.squared(), LossSpec.log()


def floored_stream(rng, T, d, floor):
    q = rng.dirichlet(np.ones(d), size=T)
    return (1 - d * floor) * q + floor


class TestBinning:
    def test_grid_size(self):
        b = build_binning(0.5, 100, 2)
        assert b.N == 12
        assert 1.5**12 / 100 >= 1 > 1.5**11 / 100
        assert b.bin_count_bound == pytest.approx((math.log(100) / math.log(1.5) + 1) ** 2)
        assert math.sqrt(b.bin_count_bound) == pytest.approx(12.36, abs=0.01)

    def test_assign_uniform(self):
        b = build_binning(0.5, 100, 2)
        assert assign(b, [0.5, 0.5]) == (9, 9)
        assert math.floor(math.log(50) / math.log(1.5)) == 9

    def test_assign_vertex(self):
        b = build_binning(0.5, 100, 2)
        assert assign(b, [1.0, 0.0]) == (b.N - 1, 0)
        with pytest.raises(OutOfGrid):
            assign(b, [1.0, 0.0], clamp=False)

    def test_cells_cover_grid(self):
        b = build_binning(0.25, 1000, 2)
        for k in range(b.N):
            assert b.cell_of(b.edges[k]) == k
            if k + 1 < b.N:
                assert b.cell_of(np.nextafter(b.edges[k + 1], 0)) == k
        assert b.cell_of(1.0) == b.N - 1

    def test_bad_epsilon(self):
        for eps in (0.0, 0.6, -1):
            with pytest.raises(InvalidEpsilon):
                build_binning(eps, 100, 2)

    def test_clamp(self):
        out, flag = clamp_forecast(np.array([1.0, 0.0, 0.0]), 100)
        assert flag and out.min() >= 0.01 and out.sum() == pytest.approx(1.0)
        out, flag = clamp_forecast(np.array([0.5, 0.5]), 100)
        assert not flag and np.array_equal(out, [0.5, 0.5])
        with pytest.raises(OutOfGrid):
            clamp_forecast(np.array([1.0, 0.0, 0.0]), 2)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 0.25, 0.5]), st.sampled_from([2, 3]))
    def test_multiplicative_guarantee(self, seed, eps, d):
        T = 500
        rng = np.random.default_rng(seed)
        qs = floored_stream(rng, T, d, 1.0 / T)
        b = build_binning(eps, T, d)
        for q in qs:
            rep = b.bins.setdefault(assign(b, q, clamp=False), q)
            ratio = q / rep
            assert np.all(ratio <= 1 + eps + 1e-12) and np.all(ratio >= 1 / (1 + eps) - 1e-12)


class TestApproxBound:
    def test_values(self):
        assert approx_error_bound(LOG, 0.1) == 0.1
        assert approx_error_bound(LossSpec.tsallis(1.0), 0.1) == pytest.approx(0.4)
        assert approx_error_bound(LossSpec.tsallis(2.0), 0.1) == pytest.approx(0.4)

    def test_unsupported(self):
        with pytest.raises(Unsupported):
            approx_error_bound(SQ, 0.1)
        with pytest.raises(InvalidEpsilon):
            approx_error_bound(LOG, 0.6)


class TestDecomposition:
    def test_single_bin_constant(self, rng):
        ys = rng.integers(0, 2, 60)
        qs = np.tile([0.3, 0.7], (60, 1))
        report = binned_decomposition(SQ, qs, ys, build_binning(0.1, 60, 2))
        assert len(report.bins) == 1 and report.approx_error == 0.0
        trivial = decomposition_by_forecast(SQ, qs, ys)
        assert report.calibration == pytest.approx(trivial.calibration)
        assert report.refinement == pytest.approx(trivial.refinement)

    def test_two_bins(self, rng):
        ys = rng.integers(0, 3, 100)
        qs = np.where(rng.random(100)[:, None] < 0.5, [0.2, 0.3, 0.5], [0.6, 0.3, 0.1])
        qs = qs + rng.uniform(0, 0.002, (100, 3))
        qs /= qs.sum(axis=1, keepdims=True)
        report = binned_decomposition(LOG, qs, ys, build_binning(0.1, 100, 3))
        assert len(report.bins) == 2
        assert report.residual <= 1e-9

    @pytest.mark.parametrize("spec", FAIR_SPECS, ids=str)
    @pytest.mark.parametrize("d", [2, 3])
    @pytest.mark.parametrize("T", [50, 500])
    @pytest.mark.parametrize("eps", [0.1, 0.5])
    def test_binned_identity(self, spec, d, T, eps):
        rng = np.random.default_rng(T * d)
        ys = rng.integers(0, d, T)
        qs = rng.dirichlet(np.ones(d), size=T)
        report = binned_decomposition(spec, qs, ys, build_binning(eps, T, d))
        assert report.residual <= 1e-8

    def test_calibrated_bin(self):
        ys = np.array([0, 0, 0, 1])
        qs = np.tile([0.75, 0.25], (4, 1))
        lhs, rhs = calibration_regret_identity(SQ, qs, ys)
        report = decomposition_by_forecast(SQ, qs, ys)
        assert report.calibration == pytest.approx(0.0, abs=1e-15)
        assert lhs[0] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
    def test_trivial_binning_regret_is_calibration(self, spec, rng):
        palette = rng.dirichlet(np.ones(3), size=4)
        qs = palette[rng.integers(0, 4, 200)]
        ys = rng.integers(0, 3, 200)
        lhs, rhs = calibration_regret_identity(spec, qs, ys)
        report = decomposition_by_forecast(spec, qs, ys)
        assert report.approx_error == 0.0
        np.testing.assert_allclose(lhs, [b.calibration for b in report.bins], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
    def test_binned_regret_identity(self, spec, rng):
        qs = rng.dirichlet(np.ones(3), size=300)
        ys = rng.integers(0, 3, 300)
        lhs, rhs = calibration_regret_identity(spec, qs, ys, build_binning(0.25, 300, 3))
        assert max(relative_residual(a, b) for a, b in zip(lhs, rhs)) <= 1e-8


class TestCalibeat:
    def test_biased_coin(self):
        rng = np.random.default_rng(7)
        T = 10_000
        ys = (rng.random(T) < 0.8).astype(int)
        qs = np.tile([0.5, 0.5], (T, 1))
        _, report = calibeat(SQ, qs, 1 - ys, 0.1)
        assert 0.16 <= report.gain / T <= 0.20

    def test_causal(self, rng):
        T = 300
        qs = rng.dirichlet(np.ones(2), size=T)
        ys = rng.integers(0, 2, T)
        ps, _ = calibeat(SQ, qs, ys, 0.25)
        flipped = ys.copy()
        flipped[150:] = 1 - flipped[150:]
        ps2, _ = calibeat(SQ, qs, flipped, 0.25)
        np.testing.assert_array_equal(ps[:151], ps2[:151])

    @given(st.integers(0, 2**32 - 1), st.sampled_from([LOG, SQ, LossSpec.tsallis(1.5)]))
    def test_gain_certificate(self, seed, spec):
        rng = np.random.default_rng(seed)
        T = 400
        qs = rng.dirichlet(np.ones(2) * 0.5, size=T)
        ys = rng.integers(0, 2, T)
        _, report = calibeat(spec, qs, ys, 0.25)
        assert report.gain >= report.certificate - 1e-6
        assert report.certified
        # gain = calibration + approx - regrets exactly.
        exact = report.calibration + report.approx_error - sum(report.subgame_regrets)
        assert relative_residual(report.gain, exact) <= 1e-8

    @pytest.mark.parametrize("alpha", [1.0, 1.5, 2.0])
    def test_subgame_regrets_certified(self, alpha):
        spec = LossSpec.tsallis(alpha)
        rng = np.random.default_rng(3)
        T = 3000
        qs = rng.dirichlet(np.ones(3), size=T)
        ys = rng.integers(0, 3, T)
        _, report = calibeat(spec, qs, ys, 0.5)
        for b in report.bins:
            assert b.subgame_regret <= bound_tsallis(alpha, 3, b.n_rounds, 1.0).total

    @pytest.mark.parametrize("spec", [LOG, LossSpec.tsallis(1.5)], ids=str)
    @pytest.mark.parametrize("eps", [0.1, 0.5])
    def test_per_round_approximation(self, spec, eps):
        rng = np.random.default_rng(11)
        T = 2000
        qs = floored_stream(rng, T, 3, 1.0 / T)
        ys = rng.integers(0, 3, T)
        binning = build_binning(eps, T, 3)
        calibeat(spec, qs, ys, eps, clamp=False, binning=binning)
        bound = approx_error_bound(spec, eps)
        for q, y in zip(qs, ys):
            rep = binning.bins[assign(binning, q, clamp=False)].representative
            assert abs(loss_eval(spec, q, y) - loss_eval(spec, rep, y)) <= bound + 1e-9

    def test_clamped_count(self):
        qs = np.tile([1.0, 0.0], (50, 1))
        _, report = calibeat(LOG, qs, np.zeros(50, int), 0.5)
        assert report.n_clamped == 50
        assert report.base_loss == 0.0

    def test_infinite_base_loss(self):
        qs = np.tile([1.0, 0.0], (50, 1))
        ys = np.array([0, 1] * 25)
        ps, report = calibeat(LOG, qs, ys, 0.5)
        assert report.base_loss == math.inf
        assert np.all(np.isfinite(_loss_matrix(LOG, ps)))
        assert report.certified


class TestCertificate:
    def test_single_bin(self):
        value = calibeat_certificate(1.5, 2, 1000, 0.1, 1)
        expected = 1000 * approx_error_bound(LossSpec.tsallis(1.5), 0.1) + bound_tsallis(1.5, 2, 1000).total
        assert value == pytest.approx(expected)

    def test_horizon_too_small(self):
        with pytest.raises(HorizonTooSmall):
            calibeat_certificate(1.5, 2, 10, 0.1, 5)

    def test_rate(self):
        Ts = np.array([1e4, 1e5, 1e6])
        slack = []
        for T in Ts:
            eps = T ** (-1 / 3) * math.log(T)
            n_bins = math.ceil((math.log(T) / math.log1p(eps) + 1) ** 2)
            slack.append(calibeat_certificate(1.5, 2, T, eps, n_bins))
        slope = np.polyfit(np.log(Ts), np.log(np.array(slack) / np.log(Ts)), 1)[0]
        assert abs(slope - 2 / 3) <= 0.1


class TestEstimator:
    def test_fit_transform(self, rng):
        T = 500
        qs = rng.dirichlet(np.ones(2), size=T)
        ys = rng.integers(0, 2, T)
        est = Calibeater(loss="log", epsilon=0.25)
        ps = est.fit_transform(qs, ys)
        ps_ref, report = calibeat(LOG, qs, ys, 0.25)
        np.testing.assert_array_equal(ps, ps_ref)
        assert est.report_.gain == pytest.approx(report.gain)

    def test_transform_unseen(self, rng):
        est = Calibeater(epsilon=0.5).fit(np.tile([0.5, 0.5], (20, 1)), np.zeros(20, int))
        out = est.transform([[0.5, 0.5], [0.99, 0.01]])
        assert out[0][0] > 0.9
        np.testing.assert_allclose(out[1], [0.5, 0.5])

    def test_params(self):
        params = Calibeater(loss="tsallis:1.5").get_params()
        assert params["loss"] == "tsallis:1.5" and params["epsilon"] == 0.1
