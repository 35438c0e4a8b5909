"""Coincidence tallies keyed by basis setting and outcome pattern."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import ConfigError
from ..quantum import DensityMatrix, PauliObservable, born_distribution


def pattern_label(index: int, n: int) -> str:
    """Bit string for an outcome index, qubit 0 first; ``0`` is the +1 result."""
    return format(index, f"0{n}b")


def hv_label(pattern: str) -> str:
    return pattern.replace("0", "H").replace("1", "V")


def parse_setting(setting) -> PauliObservable:
    if isinstance(setting, PauliObservable):
        return setting
    try:
        return PauliObservable.parse(str(setting).strip())
    except ValueError as exc:
        raise ConfigError(f"malformed basis setting {setting!r}: {exc}") from None


@dataclass(frozen=True)
class MeasurementTally:
    """Counts of outcome patterns recorded under one basis setting.

    ``exact=True`` marks a tally that holds Born probabilities instead of
    integer counts (the infinite-sample limit); estimators then report a zero
    standard error.
    """

    setting: PauliObservable
    counts: Mapping[str, float] = field(default_factory=dict)
    exact: bool = False

    def __post_init__(self):
        object.__setattr__(self, "setting", parse_setting(self.setting))
        n = len(self.setting)
        clean = {}
        for pat, c in self.counts.items():
            if len(pat) != n or set(pat) - {"0", "1"}:
                raise ConfigError(f"pattern {pat!r} does not fit a {n}-qubit setting")
            if c < 0:
                raise ConfigError(f"negative count for pattern {pat!r}")
            if not self.exact and int(c) != c:
                raise ConfigError(f"non-integer count {c!r} for pattern {pat!r}")
            if c:
                clean[pat] = c if self.exact else int(c)
        object.__setattr__(self, "counts", dict(sorted(clean.items())))

    @classmethod
    def from_array(cls, setting, counts, exact: bool = False) -> "MeasurementTally":
        setting = parse_setting(setting)
        n = len(setting)
        arr = np.asarray(counts)
        if arr.size != 1 << n:
            raise ConfigError(f"expected {1 << n} outcome cells, got {arr.size}")
        conv = float if exact else int
        return cls(setting, {pattern_label(k, n): conv(v) for k, v in enumerate(arr)}, exact)

    @classmethod
    def exact_from_state(cls, rho: DensityMatrix, setting) -> "MeasurementTally":
        setting = parse_setting(setting)
        return cls.from_array(setting, born_distribution(rho, setting), exact=True)

    @property
    def basis(self) -> str:
        return self.setting.label

    @property
    def n_qubits(self) -> int:
        return len(self.setting)

    @property
    def total(self) -> float:
        return sum(self.counts.values())

    def as_array(self) -> np.ndarray:
        out = np.zeros(1 << self.n_qubits, dtype=float if self.exact else np.int64)
        for pat, c in self.counts.items():
            out[int(pat, 2)] = c
        return out

    def frequency(self, pattern: str) -> float:
        tot = self.total
        return self.counts.get(pattern, 0) / tot if tot else 0.0

    def parity_counts(self) -> tuple[float, float]:
        """``(M+, M-)``: weight whose product of +-1 outcomes is +1 / -1.

        Qubits with an ``I`` factor are left out of the product.
        """
        mask = [f != "I" for f in self.setting.factors]
        plus = minus = 0
        for pat, c in self.counts.items():
            ones = sum(1 for b, m in zip(pat, mask) if m and b == "1")
            if ones % 2:
                minus += c
            else:
                plus += c
        return plus, minus

    def merged(self, other: "MeasurementTally") -> "MeasurementTally":
        if other.setting != self.setting or other.exact != self.exact:
            raise ConfigError("cannot merge tallies of different settings")
        counts = dict(self.counts)
        for pat, c in other.counts.items():
            counts[pat] = counts.get(pat, 0) + c
        return MeasurementTally(self.setting, counts, self.exact)


def merge_tallies(tallies: Iterable[MeasurementTally]) -> list[MeasurementTally]:
    """Sum tallies per setting; output keeps first-seen setting order."""
    out: dict[str, MeasurementTally] = {}
    for t in tallies:
        out[t.basis] = out[t.basis].merged(t) if t.basis in out else t
    return list(out.values())


TALLY_COLUMNS = ("basis", "pattern", "count")


def tallies_to_csv(tallies: Iterable[MeasurementTally], all_patterns: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TALLY_COLUMNS)
    for t in tallies:
        if all_patterns:
            arr = t.as_array()
            rows = [(pattern_label(k, t.n_qubits), arr[k]) for k in range(arr.size)]
        else:
            rows = list(t.counts.items())
        for pat, c in rows:
            w.writerow((t.basis, pat, repr(float(c)) if t.exact else int(c)))
    return buf.getvalue()


def tallies_from_csv(text: str) -> list[MeasurementTally]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != TALLY_COLUMNS:
        raise ConfigError(f"tally CSV must have columns {','.join(TALLY_COLUMNS)}")
    grouped: dict[str, dict[str, int]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            c = int(row["count"])
        except ValueError:
            raise ConfigError(f"line {lineno}: count {row['count']!r} is not an integer") from None
        grouped.setdefault(row["basis"], {})[row["pattern"]] = c
    return [MeasurementTally(b, c) for b, c in grouped.items()]
