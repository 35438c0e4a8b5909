import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qmgraph import analysis as an
from qmgraph.errors import ConfigError, DomainError, FitError, InsufficientDataError
from qmgraph.protocol.tally import MeasurementTally
from qmgraph.quantum import born_distribution, fidelity_to_pure, ghz_state, ghz_vector, werner_ghz

from conftest import random_density

M_SETTINGS = [f"M{n}" * 4 for n in range(4)]


def exact(rho, settings):
    return [MeasurementTally.exact_from_state(rho, s) for s in settings]


def sampled(rho, settings, shots, rng):
    return [MeasurementTally.from_array(s, rng.multinomial(shots, born_distribution(rho, an.parse_setting(s)))) for s in settings]


def fidelity_exact(rho):
    hv, *ms = exact(rho, ["ZZZZ", *M_SETTINGS])
    return an.fidelity_from_tallies(hv, ms)


class TestFidelity:
    def test_ideal(self):
        f = fidelity_exact(ghz_state(4))
        assert f.value == pytest.approx(1.0, abs=1e-12) and f.std_error == 0

    @pytest.mark.parametrize("v", [0.0, 0.5, 0.75, 1.0])
    def test_werner(self, v):
        assert fidelity_exact(werner_ghz(4, v)).value == pytest.approx(v + (1 - v) / 16, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 16]))
    def test_matches_dense_fidelity(self, seed, rank):
        rho = random_density(4, np.random.default_rng(seed), rank)
        assert abs(fidelity_exact(rho).value - fidelity_to_pure(rho, ghz_vector(4))) < 1e-10

    def test_wrong_basis(self):
        hv, *ms = exact(ghz_state(4), ["XXXX", *M_SETTINGS])
        with pytest.raises(ConfigError):
            an.fidelity_from_tallies(hv, ms)
        hv, *ms = exact(ghz_state(4), ["ZZZZ", *M_SETTINGS])
        with pytest.raises(ConfigError):
            an.fidelity_from_tallies(hv, ms[::-1])

    def test_empty_tally(self):
        hv, *ms = exact(ghz_state(4), ["ZZZZ", *M_SETTINGS])
        with pytest.raises(InsufficientDataError):
            an.fidelity_from_tallies(MeasurementTally("ZZZZ", {}), ms)

    def test_error_scales_as_inverse_sqrt(self):
        rho = werner_ghz(4, 0.75)
        rng = np.random.default_rng(1)
        errs = []
        for n in (1_000, 10_000, 100_000):
            hv, *ms = sampled(rho, ["ZZZZ", *M_SETTINGS], n, rng)
            f = an.fidelity_from_tallies(hv, ms)
            assert abs(f.value - 0.765625) < 4 * f.std_error
            errs.append(f.std_error)
        assert errs[0] / errs[1] == pytest.approx(math.sqrt(10), rel=0.1)
        assert errs[1] / errs[2] == pytest.approx(math.sqrt(10), rel=0.1)

    def test_bootstrap_agrees_with_propagation(self):
        rng = np.random.default_rng(2)
        ts = sampled(werner_ghz(4, 0.75), ["ZZZZ", *M_SETTINGS], 5000, rng)
        f = an.fidelity_from_tallies(ts[0], ts[1:])
        b = an.bootstrap_std(ts, lambda x: an.fidelity_from_tallies(x[0], x[1:]).value, rng, 400)
        assert b == pytest.approx(f.std_error, rel=0.15)


class TestMabk:
    def test_ideal(self):
        r = an.mabk_value(exact(ghz_state(4), an.xy_settings()))
        assert r.estimate.value == pytest.approx(8.0, abs=1e-12)
        assert r.z_score == math.inf

    def test_werner(self):
        assert an.mabk_value(exact(werner_ghz(4, 0.75), an.xy_settings())).estimate.value == pytest.approx(6.0, abs=1e-12)

    def test_zscore(self):
        assert an.violation_zscore(6.01, 0.11) == pytest.approx((6.01 - 2 * math.sqrt(2)) / 0.11)
        assert an.violation_zscore(6.01, 0.11) > 28

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_operator_norm_bound(self, seed):
        rho = random_density(4, np.random.default_rng(seed), rank=1)
        assert an.mabk_value(exact(rho, an.mabk_settings())).estimate.value <= 8 + 1e-9

    def test_missing_setting(self):
        with pytest.raises(ConfigError, match="XXXX"):
            an.mabk_value(exact(ghz_state(4), an.mabk_settings()[1:]))

    def test_signs(self):
        assert [an.expected_sign(s) for s in ("XXXX", "YYYY", "XYXY")] == [1, 1, -1]
        with pytest.raises(ConfigError):
            an.expected_sign("XXXY")


class TestQber:
    def test_ideal(self):
        r = an.qber(exact(ghz_state(4), an.mabk_settings()))
        assert r.estimate.value == pytest.approx(0.0, abs=1e-12)
        assert r.passes_individual and r.passes_coherent

    @pytest.mark.parametrize("v", [0.0, 0.3, 0.75, 1.0])
    def test_werner(self, v):
        r = an.qber(exact(werner_ghz(4, v), an.mabk_settings()))
        assert r.estimate.value == pytest.approx((1 - v) / 2, abs=1e-12)

    @pytest.mark.parametrize(
        "wrong,individual,coherent",
        [(15, False, False), (14, True, False), (11, True, False), (10, True, True)],
    )
    def test_threshold_boundaries(self, wrong, individual, coherent):
        """QBER exactly at a threshold does not pass it."""
        ts = []
        for s in an.mabk_settings():
            good, bad = ("0000", "0001") if an.expected_sign(s) > 0 else ("0001", "0000")
            ts.append(MeasurementTally(s, {good: 100 - wrong, bad: wrong}))
        r = an.qber(ts)
        assert r.estimate.value == pytest.approx(wrong / 100, abs=1e-15)
        assert (r.passes_individual, r.passes_coherent) == (individual, coherent)

    def test_disallowed_setting(self):
        with pytest.raises(ConfigError):
            an.qber(exact(ghz_state(4), an.mabk_settings() + ["XXXY"]))


class TestPhaseCalibration:
    thetas = np.arange(12) * (math.pi / 2) / 12

    def test_noiseless_recovery(self):
        fit = an.phase_calibration(self.thetas, 100 + 40 * np.cos(4 * self.thetas - 1.0))
        assert abs(fit.phi - 1.0) < 1e-9

    def test_reported_calibration_point(self):
        phi = 4 * math.radians(75.8)
        fit = an.phase_calibration(self.thetas, 100 + 40 * np.cos(4 * self.thetas - phi))
        assert math.degrees(fit.theta_max) == pytest.approx(75.8, abs=1e-9)

    def test_model_periodicity(self):
        fit = an.phase_calibration(self.thetas, 100 + 40 * np.cos(4 * self.thetas - 2.0))
        th = np.linspace(0, 3, 20)
        np.testing.assert_allclose(fit.model(th), fit.model(th + math.pi / 2), atol=1e-9)

    @pytest.mark.parametrize("weighted", [False, True])
    def test_poisson_recovery(self, weighted):
        rng = np.random.default_rng(7)
        hits = 0
        for _ in range(200):
            counts = rng.poisson(150 * (1 + 0.5 * np.cos(4 * self.thetas - 2.5)))
            fit = an.phase_calibration(self.thetas, counts, weighted=weighted)
            hits += abs(fit.phi - 2.5) < 3 * fit.phi_std_error
        assert hits >= 190

    def test_degenerate(self):
        with pytest.raises(FitError):
            an.phase_calibration(self.thetas, np.full(12, 50.0))

    def test_too_few_or_narrow(self):
        with pytest.raises(ConfigError):
            an.phase_calibration(self.thetas[:4], [1, 2, 3, 4])
        with pytest.raises(ConfigError):
            an.phase_calibration(np.linspace(0, 0.5, 8), np.arange(8))


class TestScaling:
    def test_two_qubits(self):
        p = an.ScalingParams(1e-6, 0.3, 1.0, 1.0, 2)
        assert an.scaling_time(p) == pytest.approx(1e-6 / 0.6, rel=1e-12)
        assert an.scaling_time(p, True) == pytest.approx(1e-6 / 0.6, rel=1e-12)

    def test_identity_at_unit_retrieval(self):
        rng = np.random.default_rng(0)
        for es, ed in rng.uniform(0.01, 1.0, size=(20, 2)):
            for L in range(1, 13):
                p = an.ScalingParams(1e-6, es, ed, 1.0, 2**L)
                a, b = an.scaling_time(p), an.scaling_time(p, True)
                assert abs(a - b) / a < 1e-12

    def test_quadratic_coefficient(self):
        L = np.arange(1, 13)
        for ed in (0.2, 0.6, 1.0):
            t = [an.scaling_time(an.ScalingParams(1e-6, 0.5, ed, 1.0, 2**k)) for k in L]
            assert np.polyfit(L, np.log(t), 2)[0] == pytest.approx(math.log(2) / 2, rel=1e-9)

    def test_decreasing_in_efficiencies(self):
        base = dict(t0=1e-6, eta_s=0.5, eta_d=0.5, eta_r=0.5, n=64)
        t0 = an.scaling_time(an.ScalingParams(**base), True)
        for k in ("eta_s", "eta_d", "eta_r"):
            assert an.scaling_time(an.ScalingParams(**{**base, k: 0.6}), True) < t0

    @pytest.mark.parametrize("kw", [dict(n=6), dict(n=1), dict(eta_d=0), dict(eta_r=1.2), dict(t0=0)])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            an.ScalingParams(**{**dict(t0=1e-6, eta_s=0.5, eta_d=0.5, eta_r=0.5, n=8), **kw})


class TestSlopeFit:
    def test_power_laws(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert an.slope_fit([(v, v**2) for v in x], log_log=True).value == pytest.approx(2.0, abs=1e-9)
        assert an.slope_fit([(v, 3 * v) for v in x], log_log=True).value == pytest.approx(1.0, abs=1e-9)

    def test_errors(self):
        with pytest.raises(ConfigError):
            an.slope_fit([(1, 1), (2, 2)])
        with pytest.raises(FitError):
            an.slope_fit([(1, 1), (1, 2), (1, 3)])
        with pytest.raises(DomainError):
            an.slope_fit([(1, 1), (2, -2), (3, 3)], log_log=True)


class TestReports:
    def test_report_entry_fields(self):
        e = an.report_entry("qber", an.EstimateWithError(0.1, 0.01, 100), {"individual_attack_0.15": True})
        assert set(e) == {"metric", "value", "std_error", "n_samples", "thresholds"}
        assert json.loads(an.report_json({"m": [e], "z": math.inf}))["z"] == "inf"

    def test_expectation_table(self):
        text = an.expectation_table_csv(exact(ghz_state(4), an.xy_settings()))
        rows = text.splitlines()
        assert rows[0] == "setting,expectation,std" and len(rows) == 17
        assert rows[1].startswith("XXXX,1.0")
