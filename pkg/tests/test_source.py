import itertools
import math

import numpy as np
import pytest

from qmgraph.errors import DiagnosticError, DomainError, FitError
from qmgraph.quantum import bell_vector, fidelity_to_pure
from qmgraph.source import (
    QM1_DEFAULT,
    QM2_DEFAULT,
    ClickProbabilities,
    PairSourceModel,
    alpha_from_counts,
    anticorrelation,
    click_joint,
    click_model,
    cross_correlation,
    excitation_distribution,
    fit_gc_decay,
    gc_from_counts,
    noise_for_gc,
    noise_parameters,
    pair_state,
    retrieval_efficiency,
    simulate_click_counts,
)


def enumerate_clicks(p, eta_s, eta_i, noise=0.0):
    """Photon-by-photon enumeration of every detection history."""
    out = np.zeros(8)
    for n, w in enumerate(excitation_distribution(p)):
        # each signal: detected or not; each idler: D2, D3 or lost
        for sig in itertools.product((0, 1), repeat=n):
            ps = math.prod(eta_s if s else 1 - eta_s for s in sig)
            for idl in itertools.product((2, 3, None), repeat=n):
                pi = math.prod(eta_i / 2 if d else 1 - eta_i for d in idl)
                for n2, n3 in itertools.product((0, 1), repeat=2):
                    pn = (noise if n2 else 1 - noise) * (noise if n3 else 1 - noise)
                    d1 = int(any(sig))
                    d2 = int(2 in idl or n2)
                    d3 = int(3 in idl or n3)
                    out[4 * d1 + 2 * d2 + d3] += w * ps * pi * pn
    return out


class TestPairModel:
    def test_fidelity_anchor_points(self):
        assert QM1_DEFAULT.fidelity(0.0) == pytest.approx(0.962)
        assert QM1_DEFAULT.fidelity(1e-3) == pytest.approx(0.929)
        assert QM1_DEFAULT.fidelity(5e-3) == pytest.approx(0.929)
        assert QM2_DEFAULT.fidelity(1.0) == pytest.approx(0.906)

    def test_retrieval_halves_per_millisecond(self):
        assert retrieval_efficiency(QM1_DEFAULT, 0.0) == pytest.approx(0.08)
        assert retrieval_efficiency(QM1_DEFAULT, 1e-3) == pytest.approx(0.04)
        assert retrieval_efficiency(QM2_DEFAULT, 1e-3) == pytest.approx(0.04)

    @pytest.mark.parametrize("t", [0.0, 0.3e-3, 1e-3, 2e-3])
    def test_pair_state_reaches_model_fidelity(self, t):
        rho = pair_state(QM1_DEFAULT, t)
        assert fidelity_to_pure(rho, bell_vector()) == pytest.approx(QM1_DEFAULT.fidelity(t), abs=1e-12)

    def test_exponential_decay_passes_anchors(self):
        m = PairSourceModel(fidelity_decay="exponential")
        assert m.fidelity(0) == pytest.approx(0.962)
        assert m.fidelity(1e-3) == pytest.approx(0.929)
        assert 0.25 < m.fidelity(10e-3) < 0.929

    def test_noise_split(self):
        lam, vis = noise_parameters(0.9, 0.0)
        assert lam == 0 and vis == pytest.approx((0.75 - 0.1) / 0.75)
        lam, vis = noise_parameters(0.9, 1.0)
        assert lam == pytest.approx(0.2) and vis == pytest.approx(1.0)

    @pytest.mark.parametrize(
        "kw", [dict(p=0), dict(eta_r0=1.5), dict(f0=0.9, f1=0.95), dict(gc0=1.5), dict(dark_count_rate=1.0)]
    )
    def test_invalid_parameters(self, kw):
        with pytest.raises(DomainError):
            PairSourceModel(**kw)

    def test_negative_time(self):
        with pytest.raises(DomainError):
            QM1_DEFAULT.fidelity(-1.0)


class TestClicks:
    @pytest.mark.parametrize("p,es,ei,nu", [(0.01, 0.5, 0.3, 0.0), (0.05, 0.9, 0.02, 1e-3), (0.2, 1.0, 1.0, 0.1)])
    def test_joint_matches_enumeration(self, p, es, ei, nu):
        np.testing.assert_allclose(click_joint(p, es, ei, nu), enumerate_clicks(p, es, ei, nu), atol=1e-15)

    def test_joint_is_normalized(self):
        assert click_joint(0.01, 0.5, 0.04, 0.01).sum() == pytest.approx(1.0, abs=1e-15)

    def test_hand_arithmetic(self):
        """Dyadic inputs so that every operation is exact in binary floating point."""
        c = ClickProbabilities(p1=0.5, p2=0.25, p3=0.125, p12=0.0625, p13=0.03125, p123=0.015625)
        assert cross_correlation(c) == 0.5
        assert anticorrelation(c) == 4.0

    def test_undefined_diagnostics(self):
        c = ClickProbabilities(0.1, 0.1, 0.1, 0.0, 0.0, 0.0)
        with pytest.raises(DiagnosticError):
            anticorrelation(c)
        with pytest.raises(ZeroDivisionError):
            cross_correlation(ClickProbabilities(0.0, 0.1, 0.1, 0.0, 0.0, 0.0))

    def test_inconsistent_probabilities(self):
        with pytest.raises(DomainError):
            ClickProbabilities(0.1, 0.1, 0.1, 0.2, 0.0, 0.0)

    def test_noise_free_gc_is_about_one_over_p(self):
        g = cross_correlation(click_model(QM1_DEFAULT, 1.0, 0.0))
        assert g == pytest.approx(1 / QM1_DEFAULT.p, rel=0.01)

    def test_noise_brings_gc_to_target(self):
        for t in (0.0, 1e-3, 3e-3):
            nu = noise_for_gc(QM1_DEFAULT, 0.5, t)
            g = cross_correlation(click_model(QM1_DEFAULT, 0.5, t, nu))
            assert g == pytest.approx(QM1_DEFAULT.gc(t), rel=1e-9)

    def test_single_photon_character(self):
        alpha = anticorrelation(click_model(QM1_DEFAULT, 0.5, 0.0, noise_for_gc(QM1_DEFAULT, 0.5, 0.0)))
        assert alpha < 1


class TestEstimatorsAndFit:
    def test_counts_estimators_converge(self):
        joint = click_joint(0.01, 0.5, 0.3, 0.001)
        exact = ClickProbabilities.from_joint(joint)
        counts = simulate_click_counts(joint, 50_000_000, np.random.default_rng(3))
        gc = gc_from_counts(counts)
        al = alpha_from_counts(counts)
        assert abs(gc.value - cross_correlation(exact)) < 4 * gc.std_error
        assert abs(al.value - anticorrelation(exact)) < 4 * al.std_error

    def test_empty_counts(self):
        with pytest.raises(DiagnosticError):
            gc_from_counts(np.zeros(8))

    def test_fit_recovers_noiseless_decay(self):
        t = np.linspace(0, 4e-3, 9)
        y = 2 + 18 * np.exp(-t / 1.44e-3)
        fit = fit_gc_decay(t, y, np.full_like(t, 0.1))
        assert fit.tau.value == pytest.approx(1.44e-3, rel=1e-6)

    def test_fit_needs_spread(self):
        with pytest.raises(FitError):
            fit_gc_decay([1e-3] * 4, [5, 5, 5, 5], [1, 1, 1, 1])
        with pytest.raises(FitError):
            fit_gc_decay([0, 1e-3], [5, 4], [1, 1])
