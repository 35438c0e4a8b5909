"""INI run configuration with typed defaults and dotted-key overrides.

Sections: ``[protocol]``, ``[qm1]``, ``[qm2]``, ``[analysis]``, ``[output]``.
Unknown sections or keys are rejected so typos cannot silently fall back to
defaults.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields
from typing import Any, Callable, Mapping, Sequence

from .errors import ConfigError
from .protocol.engine import ProtocolConfig
from .source import QM1_DEFAULT, QM2_DEFAULT, PairSourceModel


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _float(text: str) -> float:
    v = float(text)
    if math.isnan(v):
        raise ValueError("NaN is not allowed")
    return v


def _floats(text: str) -> list[float]:
    items = [s for s in (x.strip() for x in text.split(",")) if s]
    return [_float(s) for s in items]


def _ints(text: str) -> list[int]:
    return [int(s) for s in (x.strip() for x in text.split(",")) if s]


def _words(text: str) -> list[str]:
    return [s for s in (x.strip() for x in text.split(",")) if s]


def _seed(text: str) -> int | None:
    t = text.strip()
    if not t:
        return None
    v = int(t, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


Parser = Callable[[str], Any]


def _model_schema(default: PairSourceModel) -> dict[str, tuple[Parser, Any]]:
    out = {}
    for f in fields(PairSourceModel):
        v = getattr(default, f.name)
        parser = _bool if isinstance(v, bool) else str if isinstance(v, str) else _float
        out[f.name] = (parser, v)
    return out


SCHEMA: dict[str, dict[str, tuple[Parser, Any]]] = {
    "protocol": {
        "seed": (_seed, None),
        "cycle_time": (_float, 1e-6),
        "max_qm2_trials": (int, 1000),
        "session_length": (_float, 50e-3),
        "strategy": (str, "memory_enhanced"),
        "eta_d": (_float, 0.5),
        "n_sessions": (int, 200),
        "basis_mode": (str, "round_robin"),
        "include_partial": (_bool, False),
    },
    "qm1": _model_schema(QM1_DEFAULT),
    "qm2": _model_schema(QM2_DEFAULT),
    "analysis": {
        # rates
        "p_values": (_floats, [0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007, 0.008]),
        "strategies": (_words, ["memory_enhanced", "simultaneous"]),
        "n_sessions_simultaneous": (int, 20000),
        # fidelity / mabk / qss
        "source": (str, "conditional"),
        "visibility": (_float, 0.75),
        "shots": (int, 10000),
        "min_coincidences": (int, 100),
        "bootstrap": (_bool, False),
        "n_bootstrap": (int, 1000),
        "reference_fidelity": (_float, 0.783),
        "reference_mabk": (_float, 6.01),
        "reference_qber": (_float, 0.1246),
        # scaling
        "t0": (_float, 1e-6),
        "eta_s": (_float, 0.5),
        "scaling_eta_d": (_float, 0.5),
        "eta_r_values": (_floats, [1.0, 0.5]),
        "n_values": (_ints, [2, 4, 8, 16, 32, 64, 128, 256, 512, 1024]),
        # calibrate
        "calibration_data": (str, ""),
        "phase_true_deg": (_float, 4 * 75.8),
        "theta_points": (int, 16),
        "fringe_mean": (_float, 200.0),
        "fringe_visibility": (_float, 0.6),
        "weighted_fit": (_bool, False),
        # memory-diag
        "storage_times": (_floats, [0.0, 0.25e-3, 0.5e-3, 1e-3, 1.5e-3, 2e-3, 3e-3, 4e-3]),
        "diag_trials": (int, 20_000_000),
    },
    "output": {
        "trial_log": (str, "none"),
    },
}

CHOICES = {
    ("protocol", "strategy"): ("memory_enhanced", "simultaneous"),
    ("protocol", "basis_mode"): ("round_robin", "fixed"),
    ("analysis", "source"): ("conditional", "simulate", "rho_v"),
    ("output", "trial_log"): ("none", "csv", "jsonl"),
}


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration: every key of :data:`SCHEMA` with a typed value."""

    values: Mapping[str, Mapping[str, Any]]

    def __getitem__(self, section: str) -> Mapping[str, Any]:
        return self.values[section]

    @property
    def seed(self) -> int | None:
        return self.values["protocol"]["seed"]

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("[protocol] seed: a seed is required for simulation commands (use --seed)")
        return self.seed

    def source_model(self, section: str) -> PairSourceModel:
        try:
            return PairSourceModel(**self.values[section])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None

    def protocol(self, **overrides) -> ProtocolConfig:
        kwargs = dict(self.values["protocol"])
        seed = kwargs.pop("seed")
        kwargs.update(overrides)
        if "rng_seed" not in kwargs:
            kwargs["rng_seed"] = self.require_seed() if seed is None else seed
        kwargs["qm1"] = self.source_model("qm1")
        kwargs["qm2"] = self.source_model("qm2")
        try:
            return ProtocolConfig(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[protocol] {exc}") from None

    def to_ini(self) -> str:
        """Normalized echo: every section and key, defaults applied."""
        buf = io.StringIO()
        for section, keys in SCHEMA.items():
            buf.write(f"[{section}]\n")
            for key in keys:
                buf.write(f"{key} = {_fmt(self.values[section][key])}\n")
            buf.write("\n")
        return buf.getvalue()


def _parse_value(section: str, key: str, text: str, where: str = "") -> Any:
    if section not in SCHEMA:
        raise ConfigError(f"{where}unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"{where}[{section}] unknown key {key!r}")
    parser, _ = SCHEMA[section][key]
    try:
        value = parser(text)
    except ValueError as exc:
        raise ConfigError(f"{where}[{section}] {key}: {exc}") from None
    allowed = CHOICES.get((section, key))
    if allowed and value not in allowed:
        raise ConfigError(f"{where}[{section}] {key}: {value!r} not in {', '.join(allowed)}")
    return value


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` for diagnostics."""
    out = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif section and "=" in line and not line.startswith(("#", ";")):
            out[(section, line.split("=", 1)[0].strip().lower())] = lineno
    return out


def load_config(
    text: str | None = None, overrides: Sequence[str] = (), seed: int | None = None
) -> RunConfig:
    """Defaults, then the INI ``text``, then ``section.key=value`` overrides, then ``seed``."""
    values = {
        s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()}
        for s, keys in SCHEMA.items()
    }
    if text:
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}") from None
        lines = _key_lines(text)
        for section in cp.sections():
            for key, raw in cp[section].items():
                where = f"line {lines.get((section, key), '?')}: "
                values[section][key] = _parse_value(section, key, raw, where)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        section, key = section.strip(), key.strip()
        value = _parse_value(section, key, raw, f"override {lhs.strip()}: ")
        values[section][key] = value
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("--seed must fit in an unsigned 64-bit integer")
        values["protocol"]["seed"] = seed
    return RunConfig(values)
