"""Parametric model of a DLCZ memory node.

Covers the emitted signal-idler pair state (with storage decay), the
retrieval efficiency, and the photon-click statistics behind the memory
diagnostics ``g_c`` and ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .estimate import EstimateWithError
from .errors import DiagnosticError, DomainError, FitError
from .quantum import DensityMatrix, bell_vector, dephase, depolarize

# classical bound on the signal-idler cross-correlation
GC_CLASSICAL = 2.0


@dataclass(frozen=True)
class PairSourceModel:
    """Physical parameters of one memory node.

    ``static=True`` freezes fidelity and retrieval efficiency at ``f0`` and
    ``eta_r0`` for every storage time; QM2 is read out after a fixed short
    delay and is modelled this way.
    """

    p: float = 0.001
    eta_r0: float = 0.08
    eta_r_halflife: float = 1e-3
    f0: float = 0.962
    f1: float = 0.929
    t_ref: float = 1e-3
    phi_residual: float = 0.0
    gc0: float = 20.0
    gc_tau: float = 1.44e-3
    static: bool = False
    dephase_weight: float = 0.5
    fidelity_decay: str = "linear"
    dark_count_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise DomainError(f"p={self.p} outside (0, 1]")
        if not 0.0 < self.eta_r0 <= 1.0:
            raise DomainError(f"eta_r0={self.eta_r0} outside (0, 1]")
        if not self.eta_r_halflife > 0:
            raise DomainError("eta_r_halflife must be positive")
        if not (0.25 <= self.f1 <= self.f0 <= 1.0):
            raise DomainError(f"need 0.25 <= f1 <= f0 <= 1, got f0={self.f0}, f1={self.f1}")
        if not self.t_ref > 0:
            raise DomainError("t_ref must be positive")
        if not self.gc0 > GC_CLASSICAL:
            raise DomainError(f"gc0={self.gc0} must exceed the classical bound 2")
        if not self.gc_tau > 0:
            raise DomainError("gc_tau must be positive")
        if not 0.0 <= self.dephase_weight <= 1.0:
            raise DomainError("dephase_weight outside [0, 1]")
        if self.fidelity_decay not in ("linear", "exponential"):
            raise DomainError(f"unknown fidelity_decay {self.fidelity_decay!r}")
        if self.dark_count_rate != 0.0:
            raise DomainError("dark counts are not modelled; dark_count_rate must be 0")

    def with_p(self, p: float) -> "PairSourceModel":
        return replace(self, p=p)

    def fidelity(self, storage_time: float) -> float:
        _check_time(storage_time)
        if self.static or self.f0 == self.f1:
            return self.f0
        if self.fidelity_decay == "linear":
            if storage_time >= self.t_ref:
                return self.f1
            return self.f0 + (self.f1 - self.f0) * storage_time / self.t_ref
        # exponential approach to the fully mixed value 1/4 through both endpoints
        ratio = (self.f1 - 0.25) / (self.f0 - 0.25)
        return 0.25 + (self.f0 - 0.25) * ratio ** (storage_time / self.t_ref)

    def gc(self, storage_time: float) -> float:
        """Model cross-correlation ``2 + (gc0 - 2) exp(-t / gc_tau)``."""
        _check_time(storage_time)
        return GC_CLASSICAL + (self.gc0 - GC_CLASSICAL) * math.exp(-storage_time / self.gc_tau)


# QM1: long storage, retrieval 8% -> 4% and pair fidelity 96.2% -> 92.9% over 1 ms.
QM1_DEFAULT = PairSourceModel()
# QM2: read out 10 us after heralding; 4% retrieval, 90.6% pair fidelity.
QM2_DEFAULT = PairSourceModel(
    eta_r0=0.04, eta_r_halflife=math.inf, f0=0.906, f1=0.906, t_ref=10e-6, static=True
)


def _check_time(t: float) -> None:
    if not t >= 0:
        raise DomainError(f"storage time {t} must be >= 0")


def noise_parameters(fidelity: float, dephase_weight: float) -> tuple[float, float]:
    """Dephasing strength and depolarizing visibility that reach ``fidelity``.

    A share ``dephase_weight`` of the infidelity comes from dephasing one
    qubit of the Bell pair, the rest from depolarizing the whole pair.
    """
    eps = 1.0 - fidelity
    lam = 2.0 * dephase_weight * eps
    if lam > 1.0:
        raise DomainError(
            f"dephasing alone cannot supply infidelity {dephase_weight * eps:.3g}; lower dephase_weight"
        )
    denom = 0.75 - dephase_weight * eps
    vis = 1.0 if denom <= 0 else (0.75 - eps) / denom
    return lam, min(max(vis, 0.0), 1.0)


def pair_state(model: PairSourceModel, storage_time: float) -> DensityMatrix:
    """Signal-idler state after ``storage_time`` in memory.

    Built from the Bell state with relative phase ``phi_residual``; its
    fidelity to that Bell state equals ``model.fidelity(storage_time)``.
    Qubit 0 is the signal photon, qubit 1 the idler.
    """
    f = model.fidelity(storage_time)
    lam, vis = noise_parameters(f, model.dephase_weight)
    rho = DensityMatrix.from_statevector(bell_vector(model.phi_residual))
    return depolarize(dephase(rho, lam, 1), vis)


def retrieval_efficiency(model: PairSourceModel, storage_time: float) -> float:
    """``eta_r0 * 2**(-t / halflife)``; extrapolation past the measured
    window is a property of the exponential model, not of data."""
    _check_time(storage_time)
    if model.static:
        return model.eta_r0
    return model.eta_r0 * 2.0 ** (-storage_time / model.eta_r_halflife)


# ---------------------------------------------------------------------------
# click diagnostics


@dataclass(frozen=True)
class ClickProbabilities:
    """Per-trial detection probabilities of D1 (signal) and D2, D3 (idler arms)."""

    p1: float
    p2: float
    p3: float
    p12: float
    p13: float
    p123: float

    def __post_init__(self):
        slack = 1e-12
        for name in ("p1", "p2", "p3", "p12", "p13", "p123"):
            v = getattr(self, name)
            if not -slack <= v <= 1 + slack:
                raise DomainError(f"{name}={v} outside [0, 1]")
        if self.p12 > min(self.p1, self.p2) + slack or self.p13 > min(self.p1, self.p3) + slack:
            raise DomainError("pairwise coincidence exceeds a single-detector probability")
        if self.p123 > min(self.p12, self.p13) + slack:
            raise DomainError("triple coincidence exceeds a pairwise coincidence")

    @classmethod
    def from_joint(cls, joint) -> "ClickProbabilities":
        """From an 8-cell distribution (or counts) indexed ``4*d1 + 2*d2 + d3``."""
        j = np.asarray(joint, dtype=float).reshape(2, 2, 2)
        j = j / j.sum()
        return cls(
            p1=float(j[1].sum()),
            p2=float(j[:, 1, :].sum()),
            p3=float(j[:, :, 1].sum()),
            p12=float(j[1, 1, :].sum()),
            p13=float(j[1, :, 1].sum()),
            p123=float(j[1, 1, 1]),
        )


def cross_correlation(c: ClickProbabilities) -> float:
    """``g_c = (p12 + p13) / (p1 (p2 + p3))``."""
    denom = c.p1 * (c.p2 + c.p3)
    if denom <= 0:
        raise DiagnosticError("g_c undefined: p1 or p2 + p3 is zero")
    return (c.p12 + c.p13) / denom


def anticorrelation(c: ClickProbabilities) -> float:
    """``alpha = p1 p123 / (p12 p13)``."""
    denom = c.p12 * c.p13
    if denom <= 0:
        raise DiagnosticError("alpha undefined: a pairwise coincidence is zero")
    return c.p1 * c.p123 / denom


def excitation_distribution(p: float) -> np.ndarray:
    """Pair-number weights ``(1 - p - p^2, p, p^2)`` truncated at two pairs."""
    if not 0.0 < p < 1.0 or p + p * p >= 1.0:
        raise DomainError(f"p={p} too large for the two-excitation truncation")
    return np.array([1.0 - p - p * p, p, p * p])


def click_joint(
    p: float, eta_signal: float, eta_idler: float, idler_noise: float = 0.0
) -> np.ndarray:
    """Joint distribution of (D1, D2, D3) clicks, indexed ``4*d1 + 2*d2 + d3``.

    With ``n`` pairs emitted, D1 fires unless all ``n`` signal photons are
    missed; each idler independently reaches D2 or D3 with probability
    ``eta_idler / 2`` each.  ``idler_noise`` adds an independent spurious
    click probability to each idler detector.
    """
    weights = excitation_distribution(p)
    keep = 1.0 - idler_noise
    out = np.zeros((2, 2, 2))
    for n, w in enumerate(weights):
        s = 1.0 - (1.0 - eta_signal) ** n
        no2 = keep * (1.0 - eta_idler / 2) ** n
        none = keep * keep * (1.0 - eta_idler) ** n
        idler = np.array(
            [[none, no2 - none], [no2 - none, 1.0 - 2.0 * no2 + none]]
        )
        out[0] += w * (1.0 - s) * idler
        out[1] += w * s * idler
    return out.ravel()


def click_model(
    model: PairSourceModel, eta_d: float, storage_time: float, idler_noise: float = 0.0
) -> ClickProbabilities:
    """Click probabilities for a write at excitation ``model.p`` read out
    after ``storage_time``; the idler path efficiency is ``eta_r(t) * eta_d``."""
    if not 0.0 < eta_d <= 1.0:
        raise DomainError(f"eta_d={eta_d} outside (0, 1]")
    eta_i = retrieval_efficiency(model, storage_time) * eta_d
    return ClickProbabilities.from_joint(click_joint(model.p, eta_d, eta_i, idler_noise))


def noise_for_gc(model: PairSourceModel, eta_d: float, storage_time: float) -> float:
    """Idler noise probability that brings ``g_c`` down to ``model.gc(t)``."""
    target = model.gc(storage_time)
    eta_i = retrieval_efficiency(model, storage_time) * eta_d

    def gap(nu):
        c = ClickProbabilities.from_joint(click_joint(model.p, eta_d, eta_i, nu))
        return cross_correlation(c) - target

    if gap(0.0) < 0:
        raise DomainError(
            f"g_c target {target:.3g} exceeds the noise-free value {gap(0.0) + target:.3g}"
        )
    return float(optimize.brentq(gap, 0.0, 0.5, xtol=1e-15, rtol=1e-13))


def simulate_click_counts(joint, n_trials: int, rng: np.random.Generator) -> np.ndarray:
    return rng.multinomial(n_trials, np.asarray(joint) / np.sum(joint))


def gc_from_counts(counts) -> EstimateWithError:
    """``g_c`` estimated from 8-cell click counts with Poisson error propagation."""
    c = np.asarray(counts, dtype=float).reshape(2, 2, 2)
    n = c.sum()
    n1 = c[1].sum()
    n_idler = c[:, 1, :].sum() + c[:, :, 1].sum()
    n_coinc = c[1, 1, :].sum() + c[1, :, 1].sum()
    if n1 == 0 or n_idler == 0 or n_coinc == 0:
        raise DiagnosticError("no coincidences recorded; g_c undefined")
    value = n_coinc * n / (n1 * n_idler)
    rel = math.sqrt(1.0 / n_coinc + 1.0 / n1 + 1.0 / n_idler)
    return EstimateWithError(value, value * rel, int(n))


def alpha_from_counts(counts) -> EstimateWithError:
    c = np.asarray(counts, dtype=float).reshape(2, 2, 2)
    n1, n12, n13, n123 = c[1].sum(), c[1, 1, :].sum(), c[1, :, 1].sum(), c[1, 1, 1]
    if n12 == 0 or n13 == 0:
        raise DiagnosticError("no pairwise coincidences recorded; alpha undefined")
    value = n1 * n123 / (n12 * n13)
    rel = math.sqrt((1.0 / n123 if n123 else 1.0) + 1.0 / n12 + 1.0 / n13)
    return EstimateWithError(value, value * rel, int(c.sum()))


@dataclass(frozen=True)
class DecayFit:
    tau: EstimateWithError
    amplitude: EstimateWithError
    chi2: float
    dof: int


def fit_gc_decay(times, values, errors) -> DecayFit:
    """Weighted fit of ``2 + A exp(-t / tau)`` to measured ``g_c(t)``."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    s = np.asarray(errors, dtype=float)
    if t.size < 3:
        raise FitError("need at least 3 storage times")
    if np.ptp(t) <= 0:
        raise FitError("storage times are all equal")

    def model(tt, a, tau):
        return GC_CLASSICAL + a * np.exp(-tt / tau)

    a0 = max(y[np.argmin(t)] - GC_CLASSICAL, 1e-3)
    tail = max(y[np.argmax(t)] - GC_CLASSICAL, 1e-3 * a0)
    tau0 = np.ptp(t) / max(math.log(a0 / tail), 0.1)
    try:
        popt, pcov = optimize.curve_fit(
            model, t, y, p0=(a0, tau0), sigma=s, absolute_sigma=True, maxfev=10000
        )
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"g_c decay fit failed: {exc}") from exc
    resid = (y - model(t, *popt)) / s
    err = np.sqrt(np.diag(pcov))
    return DecayFit(
        tau=EstimateWithError(float(popt[1]), float(err[1]), int(t.size)),
        amplitude=EstimateWithError(float(popt[0]), float(err[0]), int(t.size)),
        chi2=float(resid @ resid),
        dof=int(t.size - 2),
    )
