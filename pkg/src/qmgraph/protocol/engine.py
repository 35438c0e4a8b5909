"""Discrete-event Monte Carlo of the two-memory GHZ preparation sequence.

Memory-enhanced strategy: QM1 is written every cycle until its signal photon
heralds; QM1 then holds its spin wave while QM2 is written, for at most
``max_qm2_trials`` cycles.  On a QM2 herald both memories are read out at
once and the idlers meet on the PBS.  A QM2 timeout restarts from QM1.
Simultaneous strategy: both memories are written in the same cycle and read
out only when both herald together.

Anything that depends on the storage time of QM1 (idler survival, PBS
success probability, Born distribution of the postselected four-photon
state) is tabulated once per integer storage index ``k`` (cycles) so the
session kernel only does table lookups.

The signal-photon detection efficiency is folded into each memory's ``p``;
``eta_d`` applies to the idlers only.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from ..errors import ConfigError, DomainError
from ..quantum import (
    DensityMatrix,
    Projector,
    factor_eigenbasis,
    permute_qubits,
    project,
    tensor,
)
from ..source import QM1_DEFAULT, QM2_DEFAULT, PairSourceModel, pair_state, retrieval_efficiency
from . import kernel
from ._codes import (
    BASIS_FIXED,
    BASIS_ROUND_ROBIN,
    OUT_COINCIDENCE,
    OUT_SESSION_END,
    OUT_TIMEOUT,
    OUTCOME_NAMES,
    PATTERN_HELD,
    STRATEGY_MEMORY,
    STRATEGY_SIMULTANEOUS,
)
from .tally import MeasurementTally, hv_label, parse_setting, pattern_label

STRATEGIES = {"memory_enhanced": STRATEGY_MEMORY, "simultaneous": STRATEGY_SIMULTANEOUS}
BASIS_MODES = {"round_robin": BASIS_ROUND_ROBIN, "fixed": BASIS_FIXED}

# photon order in the four-qubit register: signal 1, idler 2', idler 3', signal 4
PBS_QUBITS = (1, 2)


@dataclass(frozen=True)
class ProtocolConfig:
    rng_seed: int
    cycle_time: float = 1e-6
    max_qm2_trials: int = 1000
    session_length: float = 50e-3
    strategy: str = "memory_enhanced"
    eta_d: float = 0.5
    qm1: PairSourceModel = QM1_DEFAULT
    qm2: PairSourceModel = QM2_DEFAULT
    n_sessions: int = 200
    basis_mode: str = "round_robin"
    include_partial: bool = False

    def __post_init__(self):
        if not isinstance(self.rng_seed, (int, np.integer)) or not 0 <= self.rng_seed < 2**64:
            raise ConfigError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed!r}")
        if not self.cycle_time > 0:
            raise ConfigError("cycle_time must be positive")
        if self.max_qm2_trials < 1:
            raise ConfigError("max_qm2_trials must be >= 1")
        if not self.session_length >= self.cycle_time:
            raise ConfigError("session_length must be at least one cycle")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; use one of {sorted(STRATEGIES)}")
        if not 0.0 < self.eta_d <= 1.0:
            raise ConfigError(f"eta_d={self.eta_d} outside (0, 1]")
        if self.n_sessions < 1:
            raise ConfigError("n_sessions must be >= 1")
        if self.basis_mode not in BASIS_MODES:
            raise ConfigError(f"unknown basis_mode {self.basis_mode!r}")

    @property
    def cycles_per_session(self) -> int:
        # tolerate 50e-3 / 1e-6 = 49999.999...
        return int(math.floor(self.session_length / self.cycle_time + 1e-9))

    def with_p(self, p: float) -> "ProtocolConfig":
        return replace(self, qm1=self.qm1.with_p(p), qm2=self.qm2.with_p(p))


# ---------------------------------------------------------------------------
# storage-time tables


@dataclass(frozen=True, eq=False)
class StorageTables:
    """Per-storage-index quantities used by the session kernel.

    Index ``k`` means QM1 held its excitation for ``k`` cycles before
    readout (always 0 for the simultaneous strategy).
    """

    settings: tuple[str, ...]
    surv1: np.ndarray  # idler-2 survival: eta_r1(k dt) * eta_d
    surv2: float  # idler-3 survival
    pbs: np.ndarray  # PBS success probability given both idlers arrive
    cdf: np.ndarray  # (k, setting, pattern) cumulative Born distribution
    ph: np.ndarray  # P(HHHH) of the postselected state
    states: np.ndarray  # normalized postselected four-photon states

    def ghz_state(self, k: int) -> DensityMatrix:
        return DensityMatrix(self.states[k], validate=False)


def four_photon_input(qm1: PairSourceModel, qm2: PairSourceModel, storage_time: float) -> DensityMatrix:
    """``rho_12 (x) rho_34`` before the PBS, photons ordered 1, 2', 3', 4."""
    rho12 = pair_state(qm1, storage_time)
    rho43 = pair_state(qm2, 0.0)
    return tensor(rho12, permute_qubits(rho43, [1, 0]))


def postselected_state(qm1: PairSourceModel, qm2: PairSourceModel, storage_time: float):
    """Normalized GHZ-like state after the PBS and its success probability."""
    return project(
        four_photon_input(qm1, qm2, storage_time),
        Projector.parity_even(*PBS_QUBITS),
        renormalize=True,
    )


def _setting_unitary(setting: str) -> np.ndarray:
    u = np.ones((1, 1), dtype=complex)
    for f in parse_setting(setting).factors:
        u = np.kron(u, factor_eigenbasis(f))
    return u


@lru_cache(maxsize=32)
def build_tables(
    qm1: PairSourceModel,
    qm2: PairSourceModel,
    eta_d: float,
    n_storage: int,
    cycle_time: float,
    settings: tuple[str, ...],
) -> StorageTables:
    for s in settings:
        if len(parse_setting(s)) != 4:
            raise ConfigError(f"basis setting {s!r} must have four factors")
    states = np.empty((n_storage, 16, 16), dtype=complex)
    pbs = np.empty(n_storage)
    surv1 = np.empty(n_storage)
    cache: dict[float, tuple[np.ndarray, float]] = {}
    for k in range(n_storage):
        t = k * cycle_time
        f = qm1.fidelity(t)
        if f not in cache:
            rho, prob = postselected_state(qm1, qm2, t)
            cache[f] = (rho.elements, prob)
        states[k], pbs[k] = cache[f]
        surv1[k] = retrieval_efficiency(qm1, t) * eta_d
    surv2 = retrieval_efficiency(qm2, 0.0) * eta_d

    probs = np.empty((n_storage, len(settings), 16))
    for b, s in enumerate(settings):
        u = _setting_unitary(s)
        probs[:, b, :] = np.real(np.einsum("ji,kjl,li->ki", u.conj(), states, u))
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum(axis=2, keepdims=True)
    cdf = np.cumsum(probs, axis=2)
    cdf[:, :, -1] = 1.0
    ph = np.real(states[:, 0, 0]).copy()
    for arr in (surv1, pbs, cdf, ph, states):
        arr.setflags(write=False)
    return StorageTables(settings, surv1, float(surv2), pbs, np.ascontiguousarray(cdf), ph, states)


def tables_for(config: ProtocolConfig, settings: Sequence[str]) -> StorageTables:
    n = config.max_qm2_trials + 1 if config.strategy == "memory_enhanced" else 1
    return build_tables(
        config.qm1, config.qm2, config.eta_d, n, config.cycle_time, tuple(settings)
    )


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class TrialRecord:
    """One round of the sequence, ended by readout, timeout or session end.

    For the simultaneous strategy both memories share ``qm1_attempts`` and
    ``qm2_attempts`` is 0.
    """

    session_id: int
    qm1_attempts: int
    qm2_attempts: int
    qm1_storage_time: float
    outcome: str
    basis: str | None = None
    pattern: str | None = None
    ghz_state: DensityMatrix | None = field(default=None, compare=False)


LOG_COLUMNS = (
    "session_id",
    "qm1_attempts",
    "qm2_attempts",
    "qm1_storage_time",
    "outcome",
    "basis",
    "pattern",
)


@dataclass(eq=False)
class TrialLog:
    """Columnar store of trial records."""

    cycle_time: float
    settings: tuple[str, ...]
    session_id: np.ndarray
    qm1_attempts: np.ndarray
    qm2_attempts: np.ndarray
    storage_index: np.ndarray
    outcome: np.ndarray
    basis: np.ndarray
    pattern: np.ndarray
    tables: StorageTables | None = None

    def __len__(self) -> int:
        return int(self.outcome.size)

    @property
    def qm1_storage_time(self) -> np.ndarray:
        return self.storage_index * self.cycle_time

    def record(self, i: int) -> TrialRecord:
        out = int(self.outcome[i])
        coincident = out == OUT_COINCIDENCE
        return TrialRecord(
            session_id=int(self.session_id[i]),
            qm1_attempts=int(self.qm1_attempts[i]),
            qm2_attempts=int(self.qm2_attempts[i]),
            qm1_storage_time=float(self.storage_index[i] * self.cycle_time),
            outcome=OUTCOME_NAMES[out],
            basis=self.settings[self.basis[i]] if coincident else None,
            pattern=pattern_label(int(self.pattern[i]), 4) if coincident else None,
            ghz_state=(
                self.tables.ghz_state(int(self.storage_index[i]))
                if coincident and self.tables is not None
                else None
            ),
        )

    def records(self) -> Iterator[TrialRecord]:
        for i in range(len(self)):
            yield self.record(i)

    def _rows(self):
        st = self.qm1_storage_time
        for i in range(len(self)):
            out = int(self.outcome[i])
            coincident = out == OUT_COINCIDENCE
            yield (
                int(self.session_id[i]),
                int(self.qm1_attempts[i]),
                int(self.qm2_attempts[i]),
                repr(float(st[i])),
                OUTCOME_NAMES[out],
                self.settings[self.basis[i]] if coincident else "",
                pattern_label(int(self.pattern[i]), 4) if coincident else "",
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        w.writerows(self._rows())
        return buf.getvalue()

    def to_jsonl(self) -> str:
        lines = []
        for row in self._rows():
            rec = dict(zip(LOG_COLUMNS, row))
            rec["qm1_storage_time"] = float(rec["qm1_storage_time"])
            lines.append(json.dumps(rec, sort_keys=False))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass(eq=False)
class RunResult:
    config: ProtocolConfig
    settings: tuple[str, ...]
    log: TrialLog | None
    tallies: list[MeasurementTally]
    outcome_counts: dict[str, int]
    session_expected_h: np.ndarray
    session_expected_any: np.ndarray
    session_cycles_complete: np.ndarray
    session_cycles_total: np.ndarray
    session_heralds: np.ndarray
    session_attempts_delivered: np.ndarray

    def _cycles(self) -> np.ndarray:
        return self.session_cycles_total if self.config.include_partial else self.session_cycles_complete

    @property
    def elapsed_time(self) -> float:
        return float(self._cycles().sum()) * self.config.cycle_time

    def expected_rate_hhhh(self) -> tuple[float, float]:
        """Rao-Blackwellized HHHH coincidence rate (1/s) and its standard error.

        Each readout contributes its exact conditional probability of an
        HHHH four-fold coincidence instead of a 0/1 sample.
        """
        return _ratio_rate(self.session_expected_h, self._cycles(), self.config.cycle_time)

    def expected_rate_any(self) -> tuple[float, float]:
        return _ratio_rate(self.session_expected_any, self._cycles(), self.config.cycle_time)

    def sampled_rate(self, setting: str = "ZZZZ", pattern: str = "0000") -> float:
        t = self.elapsed_time
        for tal in self.tallies:
            if tal.basis == setting:
                return tal.counts.get(pattern, 0) / t if t else 0.0
        return 0.0

    def attempts_per_pair(self) -> tuple[float, float]:
        """Mean write attempts per heralded pair, from completed rounds."""
        return _ratio(self.session_attempts_delivered, self.session_heralds)


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    n, d = float(num.sum()), float(den.sum())
    if d == 0:
        return math.nan, math.nan
    r = n / d
    m = num.size
    if m < 2:
        return r, math.nan
    resid = num - r * den
    se = math.sqrt(m / (m - 1) * float(resid @ resid)) / d
    return r, se


def _ratio_rate(expected: np.ndarray, cycles: np.ndarray, cycle_time: float) -> tuple[float, float]:
    r, se = _ratio(expected, cycles.astype(float))
    return r / cycle_time, se / cycle_time


# ---------------------------------------------------------------------------
# running


def session_generator(seed: int, session_id: int) -> np.random.BitGenerator:
    """Counter-based stream for one session, independent of scheduling."""
    return np.random.Philox(np.random.SeedSequence(seed, spawn_key=(session_id,)))


def _log1mp(p: float) -> float:
    return -math.inf if p >= 1.0 else math.log1p(-p)


def _run_chunk(args):
    config, settings, session_ids, backend, keep_log = args
    run = kernel.load_backend(backend) if backend else kernel.run_session
    tables = tables_for(config, settings)
    strategy = STRATEGIES[config.strategy]
    mode = BASIS_MODES[config.basis_mode]
    n_cycles = config.cycles_per_session
    cap = n_cycles + 1
    q1 = np.empty(cap, dtype=np.int64)
    q2 = np.empty(cap, dtype=np.int64)
    kk = np.empty(cap, dtype=np.int64)
    oc = np.empty(cap, dtype=np.int8)
    bs = np.empty(cap, dtype=np.int16)
    pt = np.empty(cap, dtype=np.int16)
    p1, p2 = config.qm1.p, config.qm2.p
    n_settings = len(settings)
    results = []
    for sid in session_ids:
        n, exp_h, exp_any = run(
            session_generator(config.rng_seed, sid),
            strategy,
            _log1mp(p1),
            _log1mp(p2),
            _log1mp(p1 * p2),
            config.max_qm2_trials,
            n_cycles,
            tables.surv1,
            tables.surv2,
            tables.pbs,
            tables.cdf,
            tables.ph,
            mode,
            sid % n_settings,
            q1,
            q2,
            kk,
            oc,
            bs,
            pt,
        )
        cols = (q1[:n].copy(), q2[:n].copy(), kk[:n].copy(), oc[:n].copy(), bs[:n].copy(), pt[:n].copy())
        outc = cols[3]
        spent = cols[0] + cols[1]
        # only a round interrupted while QM1 holds an excitation is partial;
        # failed writes before the session end are complete attempts
        done = cols[5] != PATTERN_HELD
        delivered = (outc != OUT_SESSION_END) & (outc != OUT_TIMEOUT)
        coinc = outc == OUT_COINCIDENCE
        counts = np.zeros((n_settings, 16), dtype=np.int64)
        np.add.at(counts, (cols[4][coinc].astype(np.intp), cols[5][coinc].astype(np.intp)), 1)
        summary = (
            exp_h,
            exp_any,
            int(spent[done].sum()),
            int(spent.sum()),
            int(delivered.sum()),
            int(spent[delivered | (outc == OUT_TIMEOUT)].sum()),
            np.bincount(outc, minlength=len(OUTCOME_NAMES)),
            counts,
        )
        results.append((summary, cols if keep_log else None))
    return results


def default_workers() -> int:
    return os.cpu_count() or 1


def run_sessions(
    config: ProtocolConfig,
    bases: Sequence[str] = ("ZZZZ",),
    *,
    workers: int | None = 1,
    keep_log: bool = True,
    backend: str | None = None,
) -> RunResult:
    """Simulate ``config.n_sessions`` independent sessions.

    Session ``s`` draws from its own stream derived from ``(rng_seed, s)``
    and sessions are merged in index order, so the result does not depend
    on ``workers``.  ``bases`` are rotated after every coincidence
    (``basis_mode="round_robin"``) or held per session (``"fixed"``); either
    way session ``s`` starts at ``bases[s % len(bases)]``.
    """
    if not bases:
        raise ConfigError("at least one basis setting is required")
    settings = tuple(parse_setting(b).label for b in bases)
    tables = tables_for(config, settings)
    ids = list(range(config.n_sessions))
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, len(ids))
    # contiguous blocks, merged back in session order
    size = math.ceil(len(ids) / workers)
    chunks = [ids[i : i + size] for i in range(0, len(ids), size)]
    jobs = [(config, settings, c, backend, keep_log) for c in chunks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    per_session = [r for part in parts for r in part]

    exp_h = np.array([s[0][0] for s in per_session])
    exp_any = np.array([s[0][1] for s in per_session])
    cyc_done = np.array([s[0][2] for s in per_session], dtype=np.int64)
    cyc_total = np.array([s[0][3] for s in per_session], dtype=np.int64)
    heralds = np.array([s[0][4] for s in per_session], dtype=np.int64)
    att = np.array([s[0][5] for s in per_session], dtype=np.int64)
    outcomes = np.sum([s[0][6] for s in per_session], axis=0)
    counts = np.sum([s[0][7] for s in per_session], axis=0)
    tallies = [MeasurementTally.from_array(s, counts[b]) for b, s in enumerate(settings)]

    log = None
    if keep_log:
        cols = [np.concatenate([s[1][c] for s in per_session]) for c in range(6)]
        sids = np.concatenate(
            [np.full(s[1][0].size, i, dtype=np.int64) for i, s in enumerate(per_session)]
        )
        log = TrialLog(
            config.cycle_time, settings, sids, cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], tables
        )
    return RunResult(
        config=config,
        settings=settings,
        log=log,
        tallies=tallies,
        outcome_counts={name: int(outcomes[i]) for i, name in enumerate(OUTCOME_NAMES)},
        session_expected_h=exp_h,
        session_expected_any=exp_any,
        session_cycles_complete=cyc_done,
        session_cycles_total=cyc_total,
        session_heralds=heralds,
        session_attempts_delivered=att,
    )


# ---------------------------------------------------------------------------
# closed forms


def expected_attempts(strategy: str, p: float, max_qm2_trials: int) -> float:
    """Expected write attempts per pair of heralded memories.

    Memory-enhanced renewal argument with ``q = (1 - p)^N``: a round costs
    ``1/p`` QM1 attempts plus ``E[min(K, N)] = (1 - q)/p`` QM2 attempts and
    delivers a pair with probability ``1 - q``, so the cost per pair is
    ``(2 - q) / (p (1 - q))``, tending to ``2/p`` when ``N p`` is large.
    Simultaneous: ``1/p^2``.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p={p} outside (0, 1)")
    if strategy == "simultaneous":
        return 1.0 / (p * p)
    if strategy != "memory_enhanced":
        raise ConfigError(f"unknown strategy {strategy!r}")
    if max_qm2_trials < 1:
        raise ConfigError("max_qm2_trials must be >= 1")
    q = math.exp(max_qm2_trials * math.log1p(-p))
    return (2.0 - q) / (p * (1.0 - q))


def closed_form_rate(config: ProtocolConfig, pattern_h: bool = True) -> float:
    """Expected four-fold coincidence rate (1/s) ignoring session boundaries.

    With ``pattern_h`` only HHHH coincidences in the H/V basis count, which
    is half the GHZ generation rate for an ideal state.
    """
    tables = tables_for(config, ("ZZZZ",))
    g = tables.surv1 * tables.surv2 * tables.pbs
    if pattern_h:
        g = g * tables.ph
    p1, p2 = config.qm1.p, config.qm2.p
    if config.strategy == "simultaneous":
        return p1 * p2 * float(g[0]) / config.cycle_time
    n = config.max_qm2_trials
    k = np.arange(1, n + 1)
    w = p2 * np.exp((k - 1) * math.log1p(-p2))
    q2 = math.exp(n * math.log1p(-p2))
    cycles = 1.0 / p1 + (1.0 - q2) / p2
    return float(w @ g[1:]) / (cycles * config.cycle_time)


@dataclass(frozen=True)
class RatePoint:
    p: float
    strategy: str
    mc_rate: float
    mc_std_error: float
    sampled_rate: float
    closed_form_rate: float


def coincidence_rate_curve(
    config: ProtocolConfig, p_values: Sequence[float], *, workers: int | None = 1, backend: str | None = None
) -> list[RatePoint]:
    """HHHH coincidence rate versus ``p`` (both memories set to ``p``)."""
    if not p_values:
        raise ConfigError("p sweep is empty")
    out = []
    for p in p_values:
        if not 0.0 < p <= 0.05:
            raise ConfigError(f"p={p} outside (0, 0.05]")
        cfg = config.with_p(p)
        res = run_sessions(cfg, ("ZZZZ",), workers=workers, keep_log=False, backend=backend)
        rate, se = res.expected_rate_hhhh()
        out.append(
            RatePoint(p, cfg.strategy, rate, se, res.sampled_rate("ZZZZ", "0000"), closed_form_rate(cfg))
        )
    return out


def storage_time_distribution(log: TrialLog) -> np.ndarray:
    """QM1 storage indices of rounds that reached readout."""
    out = log.outcome
    mask = (out != OUT_SESSION_END) & (out != OUT_TIMEOUT)
    return log.storage_index[mask]


def hv_probabilities(tally: MeasurementTally) -> dict[str, float]:
    tot = tally.total
    return {hv_label(pattern_label(k, 4)): (tally.as_array()[k] / tot if tot else 0.0) for k in range(16)}


def readout_weights(config: ProtocolConfig) -> np.ndarray:
    """Probability that a four-fold coincidence came from storage index ``k``."""
    tables = tables_for(config, ("ZZZZ",))
    g = tables.surv1 * tables.surv2 * tables.pbs
    if config.strategy == "simultaneous":
        return np.array([1.0])
    p2 = config.qm2.p
    k = np.arange(1, config.max_qm2_trials + 1)
    w = np.zeros(g.size)
    w[1:] = p2 * np.exp((k - 1) * math.log1p(-p2)) * g[1:]
    return w / w.sum()


def conditional_state(config: ProtocolConfig) -> DensityMatrix:
    """Four-photon state averaged over all four-fold coincidences.

    Sampling settings from this state is equivalent to running the engine
    until the same number of coincidences per setting has accumulated.
    """
    tables = tables_for(config, ("ZZZZ",))
    w = readout_weights(config)
    rho = np.einsum("k,kij->ij", w, tables.states)
    return DensityMatrix(rho)
