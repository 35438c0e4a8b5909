"""Estimators on coincidence tallies and closed-form scaling laws.

Estimators accept integer tallies (finite samples, multinomial error
propagation) or exact Born tallies (infinite-sample limit, zero error).
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, DomainError, FitError, InsufficientDataError
from .estimate import EstimateWithError
from .protocol.tally import MeasurementTally, parse_setting

__all__ = [
    "EstimateWithError",
    "ScalingParams",
    "MabkResult",
    "QberResult",
    "PhaseFit",
    "CLASSICAL_MABK_BOUND",
    "QBER_INDIVIDUAL",
    "QBER_COHERENT",
    "WITNESS_THRESHOLD",
    "xy_settings",
    "mabk_settings",
    "expected_sign",
    "tally_expectation",
    "fidelity_from_tallies",
    "mabk_value",
    "violation_zscore",
    "qber",
    "phase_calibration",
    "scaling_time",
    "slope_fit",
    "bootstrap_std",
    "report_entry",
    "report_json",
    "expectation_table_csv",
]

CLASSICAL_MABK_BOUND = 2.0 * math.sqrt(2.0)
QBER_INDIVIDUAL = 0.15
QBER_COHERENT = 0.11
WITNESS_THRESHOLD = 0.5


def xy_settings() -> list[str]:
    """All 16 four-qubit settings over X/Y, X before Y, qubit 0 slowest."""
    return ["".join(s) for s in itertools.product("XY", repeat=4)]


def mabk_settings() -> list[str]:
    """XXXX, YYYY and the six settings with two X and two Y."""
    return [s for s in xy_settings() if s.count("Y") % 2 == 0]


def expected_sign(setting: str) -> int:
    """GHZ correlation sign: +1 with zero or four Y factors, -1 with two."""
    s = parse_setting(setting).label
    n_y = s.count("Y")
    if set(s) - {"X", "Y"} or len(s) != 4 or n_y % 2:
        raise ConfigError(f"setting {setting!r} carries no GHZ correlation")
    return 1 if n_y in (0, 4) else -1


def _total(t: MeasurementTally) -> float:
    tot = t.total
    if tot <= 0:
        raise InsufficientDataError(f"tally for {t.basis} has no counts")
    return tot


def _n_samples(tallies: Iterable[MeasurementTally]) -> int:
    tallies = list(tallies)
    if any(t.exact for t in tallies):
        return 1
    return max(1, int(sum(t.total for t in tallies)))


def tally_expectation(t: MeasurementTally) -> EstimateWithError:
    """``(M+ - M-) / (M+ + M-)`` with binomial error."""
    tot = _total(t)
    plus, minus = t.parity_counts()
    e = (plus - minus) / tot
    se = 0.0 if t.exact else math.sqrt(max(0.0, 1.0 - e * e) / tot)
    return EstimateWithError(float(e), se, _n_samples([t]))


def _by_basis(tallies: Iterable[MeasurementTally]) -> dict[str, MeasurementTally]:
    out: dict[str, MeasurementTally] = {}
    for t in tallies:
        out[t.basis] = out[t.basis].merged(t) if t.basis in out else t
    return out


# ---------------------------------------------------------------------------
# fidelity


def fidelity_from_tallies(hv: MeasurementTally, m_tallies: Sequence[MeasurementTally]) -> EstimateWithError:
    """GHZ4 fidelity from populations plus four ``M_n`` coherence settings.

    ``F = (P_HHHH + P_VVVV)/2 + (1/8) sum_n (-1)^n <M_n^(x)4>`` with the
    populations taken as normalized frequencies of the H/V tally.
    """
    if hv.basis != "ZZZZ":
        raise ConfigError(f"population tally must be in the H/V basis, got {hv.basis}")
    if len(m_tallies) != 4:
        raise ConfigError(f"expected 4 coherence tallies, got {len(m_tallies)}")
    n_hv = _total(hv)
    s = (hv.counts.get("0000", 0) + hv.counts.get("1111", 0)) / n_hv
    value = 0.5 * s
    var = 0.0 if hv.exact else 0.25 * s * (1.0 - s) / n_hv
    for n, t in enumerate(m_tallies):
        if t.basis != f"M{n}" * 4:
            raise ConfigError(f"coherence tally {n} must be M{n}M{n}M{n}M{n}, got {t.basis}")
        e = tally_expectation(t)
        value += (-1) ** n * e.value / 8.0
        var += (e.std_error / 8.0) ** 2
    return EstimateWithError(float(value), math.sqrt(var), _n_samples([hv, *m_tallies]))


# ---------------------------------------------------------------------------
# MABK


@dataclass(frozen=True)
class MabkResult:
    estimate: EstimateWithError
    z_score: float
    expectations: dict[str, EstimateWithError]

    @property
    def violates(self) -> bool:
        return self.estimate.value > CLASSICAL_MABK_BOUND


def violation_zscore(value: float, std_error: float, bound: float = CLASSICAL_MABK_BOUND) -> float:
    """Standard deviations by which ``value`` exceeds the classical bound."""
    if std_error < 0:
        raise DomainError("std_error must be >= 0")
    if std_error == 0:
        return math.copysign(math.inf, value - bound) if value != bound else 0.0
    return (value - bound) / std_error


def mabk_value(tallies: Iterable[MeasurementTally]) -> MabkResult:
    """Four-qubit MABK operator ``<F>`` = XXXX + YYYY - (six two-X-two-Y terms).

    Settings beyond the eight required ones are ignored.  Errors of the
    settings are added in quadrature.
    """
    table = _by_basis(tallies)
    missing = [s for s in mabk_settings() if s not in table]
    if missing:
        raise ConfigError(f"missing MABK settings: {', '.join(missing)}")
    value = 0.0
    var = 0.0
    exps = {}
    for s in mabk_settings():
        e = tally_expectation(table[s])
        exps[s] = e
        value += expected_sign(s) * e.value
        var += e.std_error**2
    est = EstimateWithError(float(value), math.sqrt(var), _n_samples(table[s] for s in mabk_settings()))
    return MabkResult(est, violation_zscore(est.value, est.std_error), exps)


# ---------------------------------------------------------------------------
# QBER


@dataclass(frozen=True)
class QberResult:
    estimate: EstimateWithError
    right: float
    wrong: float

    @property
    def passes_individual(self) -> bool:
        return self.estimate.value < QBER_INDIVIDUAL

    @property
    def passes_coherent(self) -> bool:
        return self.estimate.value < QBER_COHERENT


def qber(tallies: Iterable[MeasurementTally]) -> QberResult:
    """Pooled key error rate of the four-party secret-sharing settings.

    A coincidence is a wrong key bit when its outcome product disagrees with
    the GHZ correlation sign of its setting.
    """
    table = _by_basis(tallies)
    allowed = set(mabk_settings())
    bad = [s for s in table if s not in allowed]
    if bad:
        raise ConfigError(f"settings without a GHZ correlation: {', '.join(bad)}")
    missing = [s for s in mabk_settings() if s not in table]
    if missing:
        raise ConfigError(f"missing QSS settings: {', '.join(missing)}")
    right = wrong = 0.0
    for s in mabk_settings():
        t = table[s]
        _total(t)
        plus, minus = t.parity_counts()
        if expected_sign(s) > 0:
            right, wrong = right + plus, wrong + minus
        else:
            right, wrong = right + minus, wrong + plus
    tot = right + wrong
    q = wrong / tot
    exact = any(t.exact for t in table.values())
    se = 0.0 if exact else math.sqrt(q * (1.0 - q) / tot)
    return QberResult(EstimateWithError(float(q), se, _n_samples(table.values())), right, wrong)


# ---------------------------------------------------------------------------
# phase calibration


@dataclass(frozen=True)
class PhaseFit:
    """``counts(theta) = A cos(4 theta - phi) + C``."""

    phi: float
    phi_std_error: float
    theta_max: float
    theta_max_std_error: float
    amplitude: float
    offset: float
    residual_rms: float

    def model(self, theta):
        return self.amplitude * np.cos(4.0 * np.asarray(theta) - self.phi) + self.offset


def phase_calibration(
    thetas: Sequence[float], counts: Sequence[float], *, weighted: bool = False
) -> PhaseFit:
    """Linear least-squares fringe fit in ``cos 4 theta`` and ``sin 4 theta``.

    Needs at least five distinct angles covering one period (pi/2 in theta);
    equally spaced angles ``k pi/(2m)`` count as covering it.  ``weighted``
    uses Poisson weights ``1/max(count, 1)``.
    """
    th = np.asarray(thetas, dtype=float)
    y = np.asarray(counts, dtype=float)
    if th.shape != y.shape or th.ndim != 1:
        raise ConfigError("thetas and counts must be 1-D and of equal length")
    distinct = np.unique(th)
    m = distinct.size
    if m < 5:
        raise ConfigError(f"need at least 5 distinct angles, got {m}")
    period = math.pi / 2
    if distinct[-1] - distinct[0] < period * (m - 1) / m - 1e-12:
        raise ConfigError("angles do not span one period (pi/2)")
    if np.ptp(y) == 0:
        raise FitError("all counts are equal; the fringe phase is undefined")
    x = np.column_stack([np.cos(4 * th), np.sin(4 * th), np.ones_like(th)])
    w = 1.0 / np.sqrt(np.maximum(y, 1.0)) if weighted else np.ones_like(y)
    xw, yw = x * w[:, None], y * w
    coef, *_ = np.linalg.lstsq(xw, yw, rcond=None)
    a, b, c = coef
    amp = math.hypot(a, b)
    if amp <= 1e-12 * max(1.0, abs(c)):
        raise FitError("fitted fringe amplitude is zero")
    resid = yw - xw @ coef
    dof = th.size - 3
    cov_base = np.linalg.inv(xw.T @ xw)
    if weighted:
        cov = cov_base
    elif dof > 0:
        cov = cov_base * float(resid @ resid) / dof
    else:
        cov = np.zeros((3, 3))
    phi = math.atan2(b, a) % (2 * math.pi)
    var_phi = (b * b * cov[0, 0] + a * a * cov[1, 1] - 2 * a * b * cov[0, 1]) / amp**4
    phi_se = math.sqrt(max(var_phi, 0.0))
    theta_max = (phi / 4.0) % period
    raw = y - x @ coef
    return PhaseFit(
        phi=phi,
        phi_std_error=phi_se,
        theta_max=theta_max,
        theta_max_std_error=phi_se / 4.0,
        amplitude=amp,
        offset=float(c),
        residual_rms=float(math.sqrt(np.mean(raw**2))),
    )


# ---------------------------------------------------------------------------
# preparation-time scaling


@dataclass(frozen=True)
class ScalingParams:
    t0: float
    eta_s: float
    eta_d: float
    eta_r: float = 1.0
    n: int = 2

    def __post_init__(self):
        if not self.t0 > 0:
            raise DomainError("t0 must be positive")
        for name in ("eta_s", "eta_d", "eta_r"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name}={v} outside (0, 1]")
        n = int(self.n)
        if n != self.n or n < 2 or n & (n - 1):
            raise DomainError(f"n={self.n} must be a power of 2 and >= 2")

    @property
    def levels(self) -> int:
        return int(self.n).bit_length() - 1


def scaling_time(params: ScalingParams, with_retrieval: bool = False) -> float:
    """Expected time to build an ``n``-qubit tree graph state by PBS doubling.

    Without retrieval loss:
    ``T = t0/(eta_s eta_d) * n^((L-1)/2 + log2(1/eta_d - 1/2))``, ``L = log2 n``.
    With retrieval efficiency ``eta_r``:
    ``T = t0 eta_r/(eta_s eta_d) * r^L * (2/eta_r)^(L(L-1)/2)`` where
    ``r = (1 - eta_r/2 - eta_r eta_d/4) / (eta_r eta_d (1 - eta_r/2))``.
    """
    L = params.levels
    es, ed, er = params.eta_s, params.eta_d, params.eta_r
    if not with_retrieval:
        expo = (L - 1) / 2 + math.log2(1.0 / ed - 0.5)
        return params.t0 / (es * ed) * float(params.n) ** expo
    r = (1.0 - er / 2 - er * ed / 4) / (er * ed * (1.0 - er / 2))
    return params.t0 * er / (es * ed) * r**L * (2.0 / er) ** (L * (L - 1) / 2)


# ---------------------------------------------------------------------------
# fits and resampling


def slope_fit(points: Sequence[tuple[float, float]], log_log: bool = False) -> EstimateWithError:
    """Ordinary least-squares slope with its standard error."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ConfigError("slope_fit needs at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if log_log:
        if np.any(x <= 0) or np.any(y <= 0):
            raise DomainError("log-log fit needs positive values")
        x, y = np.log(x), np.log(y)
    if np.ptp(x) == 0:
        raise FitError("degenerate abscissae")
    res = stats.linregress(x, y)
    return EstimateWithError(float(res.slope), float(res.stderr), int(x.size))


def bootstrap_std(
    tallies: Sequence[MeasurementTally],
    estimator: Callable[[list[MeasurementTally]], float],
    rng: np.random.Generator,
    n_resamples: int = 1000,
) -> float:
    """Standard deviation of ``estimator`` under multinomial resampling of every tally."""
    if n_resamples < 2:
        raise ConfigError("n_resamples must be >= 2")
    base = []
    for t in tallies:
        if t.exact:
            raise ConfigError("cannot bootstrap exact tallies")
        arr = t.as_array()
        tot = int(arr.sum())
        if tot == 0:
            raise InsufficientDataError(f"tally for {t.basis} has no counts")
        base.append((t.setting, tot, arr / tot))
    vals = np.empty(n_resamples)
    for i in range(n_resamples):
        sample = [MeasurementTally.from_array(s, rng.multinomial(n, p)) for s, n, p in base]
        vals[i] = estimator(sample)
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------------------
# report emission


def report_entry(
    metric: str, estimate: EstimateWithError, thresholds: Mapping[str, bool] | None = None
) -> dict:
    return {
        "metric": metric,
        "value": estimate.value,
        "std_error": estimate.std_error,
        "n_samples": estimate.n_samples,
        "thresholds": dict(thresholds or {}),
    }


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else "-inf" if obj < 0 else "nan"
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def report_json(report: Mapping) -> str:
    return json.dumps(_json_safe(dict(report)), indent=2, sort_keys=True) + "\n"


def expectation_table_csv(tallies: Iterable[MeasurementTally], settings: Sequence[str] | None = None) -> str:
    """Rows ``setting, expectation, std`` (the 16 X/Y settings by default)."""
    table = _by_basis(tallies)
    settings = list(settings) if settings is not None else xy_settings()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("setting", "expectation", "std"))
    for s in settings:
        if s not in table:
            raise ConfigError(f"no tally for setting {s}")
        e = tally_expectation(table[s])
        w.writerow((s, repr(e.value), repr(e.std_error)))
    return buf.getvalue()
