"""Numerical tolerances and register limits shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    equality: float = 1e-12
    psd_slack: float = 1e-10
    imag_residue: float = 1e-10
    min_success_prob: float = 1e-15


TOL = Tolerances()

# dense registers above this size are refused
MAX_QUBITS = 14
