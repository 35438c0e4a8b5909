import numpy as np
import pytest

from qmgraph.errors import ConfigError
from qmgraph.protocol.tally import (
    MeasurementTally,
    hv_label,
    merge_tallies,
    pattern_label,
    tallies_from_csv,
    tallies_to_csv,
)
from qmgraph.quantum import ghz_state


class TestTally:
    def test_parity_counts(self):
        t = MeasurementTally("XXYY", {"0000": 5, "0001": 2, "0011": 3})
        assert t.parity_counts() == (8, 2)

    def test_identity_factors_ignored(self):
        t = MeasurementTally("XIXI", {"0100": 4, "1010": 1})
        assert t.parity_counts() == (5, 0)

    def test_rejects_bad_pattern(self):
        with pytest.raises(ConfigError):
            MeasurementTally("XXXX", {"012": 1})

    def test_rejects_negative_or_fractional(self):
        with pytest.raises(ConfigError):
            MeasurementTally("XXXX", {"0000": -1})
        with pytest.raises(ConfigError):
            MeasurementTally("XXXX", {"0000": 1.5})

    def test_rejects_bad_setting(self):
        with pytest.raises(ConfigError):
            MeasurementTally("XXQX", {})

    def test_exact_from_state(self):
        t = MeasurementTally.exact_from_state(ghz_state(4), "ZZZZ")
        assert t.exact
        assert t.counts == pytest.approx({"0000": 0.5, "1111": 0.5})

    def test_array_round_trip(self):
        arr = np.arange(16)
        assert (MeasurementTally.from_array("M1M1M1M1", arr).as_array() == arr).all()

    def test_merge_is_commutative(self):
        a = MeasurementTally("XXXX", {"0000": 1})
        b = MeasurementTally("XXXX", {"1111": 2, "0000": 1})
        c = MeasurementTally("YYYY", {"0000": 4})
        ab = merge_tallies([a, b, c])
        ba = merge_tallies([c, b, a])
        assert {t.basis: t.counts for t in ab} == {t.basis: t.counts for t in ba}

    def test_labels(self):
        assert pattern_label(5, 4) == "0101"
        assert hv_label("0101") == "HVHV"


class TestCsv:
    def test_round_trip(self):
        ts = [MeasurementTally("XXXX", {"0000": 3, "1010": 1}), MeasurementTally("ZZZZ", {"1111": 7})]
        text = tallies_to_csv(ts)
        assert text.splitlines()[0] == "basis,pattern,count"
        assert text.endswith("\n") and "\r" not in text
        assert [(t.basis, t.counts) for t in tallies_from_csv(text)] == [(t.basis, t.counts) for t in ts]

    def test_bad_header(self):
        with pytest.raises(ConfigError):
            tallies_from_csv("basis,count\nXXXX,1\n")

    def test_bad_count(self):
        with pytest.raises(ConfigError, match="line 2"):
            tallies_from_csv("basis,pattern,count\nXXXX,0000,x\n")
