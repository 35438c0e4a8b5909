"""Dense density-matrix algebra for small polarization-qubit registers.

Basis index 0 is ``|H>`` and 1 is ``|V>``.  Qubit 0 is the most significant
bit of a register index (big-endian), so ``np.kron(a, b)`` puts ``a`` first
and a four-photon register is ordered ``(1, 2', 3', 4)``.

All values are immutable; every operation returns a new object.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import MAX_QUBITS, TOL
from .errors import (
    CapacityError,
    DimensionError,
    DomainError,
    InvalidStateError,
    NumericalIntegrityError,
    PostselectionError,
)

# eigen-decomposition is skipped above this size; Hermiticity and trace are
# still checked
PSD_CHECK_MAX_QUBITS = 8

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def _n_qubits_for_dim(dim: int) -> int:
    n = dim.bit_length() - 1
    if dim < 1 or 1 << n != dim:
        raise DimensionError(f"dimension {dim} is not a power of two")
    return n


class DensityMatrix:
    """Hermitian, positive semidefinite operator with trace in (0, 1].

    A trace below one is allowed and encodes the probability that an
    earlier postselection succeeded.
    """

    __slots__ = ("n_qubits", "elements", "trace_value")

    def __init__(self, elements, *, validate: bool = True, max_qubits: int = MAX_QUBITS):
        a = np.array(elements, dtype=complex)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {a.shape}")
        n = _n_qubits_for_dim(a.shape[0])
        if n > max_qubits:
            raise CapacityError(f"{n} qubits exceeds the dense cap of {max_qubits}")
        tr = np.trace(a)
        if validate:
            _check_state(a, n, tr)
        a.setflags(write=False)
        self.n_qubits = n
        self.elements = a
        self.trace_value = float(tr.real)

    @classmethod
    def from_statevector(cls, psi, normalize: bool = False) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex).ravel()
        if normalize:
            psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        d = 1 << n_qubits
        return cls(np.eye(d, dtype=complex) / d)

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def renormalized(self) -> "DensityMatrix":
        return DensityMatrix(self.elements / self.trace_value, validate=False)

    def probabilities(self) -> np.ndarray:
        """Computational-basis populations (not divided by the trace)."""
        return np.real(np.diag(self.elements)).copy()

    def purity(self) -> float:
        return float(np.real(np.vdot(self.elements, self.elements)))

    def __repr__(self) -> str:
        return f"DensityMatrix(n_qubits={self.n_qubits}, trace={self.trace_value:.6g})"


def _check_state(a: np.ndarray, n: int, tr) -> None:
    herm = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if herm > TOL.equality:
        raise InvalidStateError(f"matrix is not Hermitian (max deviation {herm:.3g})")
    if not (0.0 < tr.real <= 1.0 + TOL.equality):
        raise InvalidStateError(f"trace {tr.real!r} outside (0, 1]")
    if n <= PSD_CHECK_MAX_QUBITS:
        lo = np.linalg.eigvalsh(a)[0]
        if lo < -TOL.psd_slack:
            raise InvalidStateError(f"matrix has negative eigenvalue {lo:.3g}")


def _trusted(a: np.ndarray) -> DensityMatrix:
    return DensityMatrix(a, validate=False)


# ---------------------------------------------------------------------------
# local operator application


def _apply_left(mat: np.ndarray, op: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """``op`` (acting on ``qubits``) times ``mat`` from the left."""
    k = len(qubits)
    t = mat.reshape((2,) * n + (-1,))
    opt = op.reshape((2,) * (2 * k))
    t = np.tensordot(opt, t, axes=(list(range(k, 2 * k)), list(qubits)))
    t = np.moveaxis(t, list(range(k)), list(qubits))
    return t.reshape(mat.shape)


def _conjugate(mat: np.ndarray, op: np.ndarray, qubits: Sequence[int], n: int) -> np.ndarray:
    """``op @ mat @ op^dagger`` with ``op`` embedded on ``qubits``."""
    left = _apply_left(mat, op, qubits, n)
    return _apply_left(left.conj().T, op, qubits, n).conj().T


def apply_unitary(rho: DensityMatrix, u, qubits: Sequence[int]) -> DensityMatrix:
    u = np.asarray(u, dtype=complex)
    qubits = tuple(qubits)
    _check_qubits(qubits, rho.n_qubits)
    if u.shape != (1 << len(qubits),) * 2:
        raise DimensionError(f"operator shape {u.shape} does not act on {len(qubits)} qubits")
    if np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))) > 1e-10:
        raise DomainError("operator is not unitary")
    return _trusted(_conjugate(rho.elements, u, qubits, rho.n_qubits))


def _check_qubits(qubits: Sequence[int], n: int) -> None:
    if len(set(qubits)) != len(qubits):
        raise DimensionError(f"repeated qubit index in {tuple(qubits)}")
    for q in qubits:
        if not 0 <= q < n:
            raise DimensionError(f"qubit {q} outside register of {n} qubits")


# ---------------------------------------------------------------------------
# observables

_TOKEN = re.compile(r"M[0-3]|[IXYZ]")


def m_matrix(n: int) -> np.ndarray:
    """``cos(n pi/4) X + sin(n pi/4) Y``."""
    a = n * np.pi / 4
    return np.array([[0, np.exp(-1j * a)], [np.exp(1j * a), 0]], dtype=complex)


def factor_matrix(token: str) -> np.ndarray:
    if token == "I":
        return I2
    if token == "X":
        return SIGMA_X
    if token == "Y":
        return SIGMA_Y
    if token == "Z":
        return SIGMA_Z
    if len(token) == 2 and token[0] == "M" and token[1] in "0123":
        return m_matrix(int(token[1]))
    raise DomainError(f"unknown observable factor {token!r}")


def factor_eigenbasis(token: str) -> np.ndarray:
    """Unitary whose columns are the +1 and -1 eigenvectors of a factor.

    Outcome bit 0 means eigenvalue +1 (photon transmitted by the analysing
    PBS), bit 1 means -1.  ``I`` is read out as a Z measurement whose result
    is ignored by the observable.
    """
    if token in ("I", "Z"):
        return I2
    if token == "X":
        a = 0.0
    elif token == "Y":
        a = np.pi / 2
    else:
        factor_matrix(token)
        a = int(token[1]) * np.pi / 4
    ph = np.exp(1j * a)
    return np.array([[1, 1], [ph, -ph]], dtype=complex) / np.sqrt(2)


@dataclass(frozen=True)
class PauliObservable:
    """Tensor product of single-qubit ``I, X, Y, Z, M0..M3`` factors."""

    factors: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        for f in self.factors:
            factor_matrix(f)

    @classmethod
    def parse(cls, text: str) -> "PauliObservable":
        """Parse compact labels such as ``"XXYY"`` or ``"M1M1M1M1"``."""
        tokens = _TOKEN.findall(text)
        if "".join(tokens) != text or not tokens:
            raise DomainError(f"cannot parse observable label {text!r}")
        return cls(tuple(tokens))

    @property
    def label(self) -> str:
        return "".join(self.factors)

    def __len__(self) -> int:
        return len(self.factors)

    def matrix(self) -> np.ndarray:
        out = np.ones((1, 1), dtype=complex)
        for f in self.factors:
            out = np.kron(out, factor_matrix(f))
        return out

    def __str__(self) -> str:
        return self.label


def expectation(rho: DensityMatrix, obs: PauliObservable) -> float:
    """``Tr(rho O)``; the caller divides by the trace for subnormalized input."""
    if len(obs) != rho.n_qubits:
        raise DimensionError(
            f"observable has {len(obs)} factors, register has {rho.n_qubits} qubits"
        )
    t = rho.elements
    for q, f in enumerate(obs.factors):
        if f != "I":
            t = _apply_left(t, factor_matrix(f), (q,), rho.n_qubits)
    value = np.trace(t)
    if abs(value.imag) >= TOL.imag_residue:
        raise NumericalIntegrityError(f"expectation has imaginary part {value.imag:.3g}")
    return float(value.real)


def born_distribution(rho: DensityMatrix, setting: PauliObservable | Sequence[str]) -> np.ndarray:
    """Outcome probabilities for measuring every qubit in ``setting``.

    Index ``k`` of the returned array is the outcome pattern whose binary
    expansion (qubit 0 most significant) has bit 1 wherever that qubit gave
    eigenvalue -1.  Probabilities are normalized by the trace.
    """
    factors = setting.factors if isinstance(setting, PauliObservable) else tuple(setting)
    if len(factors) != rho.n_qubits:
        raise DimensionError(f"setting has {len(factors)} factors for {rho.n_qubits} qubits")
    t = rho.elements
    for q, f in enumerate(factors):
        if f not in ("I", "Z"):
            t = _conjugate(t, factor_eigenbasis(f).conj().T, (q,), rho.n_qubits)
    probs = np.real(np.diag(t)) / rho.trace_value
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum()


# ---------------------------------------------------------------------------
# states


def basis_state(label: str) -> np.ndarray:
    """State vector for a string of ``H``/``V`` (or ``0``/``1``) characters."""
    idx = 0
    for ch in label:
        if ch not in "HV01":
            raise DomainError(f"bad basis label {label!r}")
        idx = (idx << 1) | (ch in "V1")
    psi = np.zeros(1 << len(label), dtype=complex)
    psi[idx] = 1.0
    return psi


def ghz_vector(n: int, phase: float = 0.0) -> np.ndarray:
    """``(|H...H> + e^{i phase}|V...V>)/sqrt(2)``; ``n=2`` gives a Bell state."""
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1 / np.sqrt(2)
    psi[-1] = np.exp(1j * phase) / np.sqrt(2)
    return psi


def bell_vector(phase: float = 0.0) -> np.ndarray:
    return ghz_vector(2, phase)


def ghz_state(n: int, phase: float = 0.0) -> DensityMatrix:
    return DensityMatrix.from_statevector(ghz_vector(n, phase))


def werner_ghz(n: int, visibility: float, phase: float = 0.0) -> DensityMatrix:
    """``V |GHZ><GHZ| + (1 - V) I / 2^n``."""
    return depolarize(ghz_state(n, phase), visibility)


# ---------------------------------------------------------------------------
# operations


def tensor(a: DensityMatrix, b: DensityMatrix, *, max_qubits: int = MAX_QUBITS) -> DensityMatrix:
    n = a.n_qubits + b.n_qubits
    if n > max_qubits:
        raise CapacityError(f"tensor product of {n} qubits exceeds the cap of {max_qubits}")
    return DensityMatrix(np.kron(a.elements, b.elements), validate=False, max_qubits=max_qubits)


@dataclass(frozen=True, eq=False)
class Projector:
    """Orthogonal projector onto ``span(vectors)`` on a subset of qubits.

    ``vectors`` has one row per basis vector of the subspace, each of length
    ``2**len(qubits)``; rows must be orthonormal.
    """

    qubits: tuple[int, ...]
    vectors: np.ndarray

    def __post_init__(self):
        qubits = tuple(int(q) for q in self.qubits)
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=complex))
        if vecs.shape[1] != 1 << len(qubits):
            raise DimensionError(
                f"subspace vectors have length {vecs.shape[1]}, need {1 << len(qubits)}"
            )
        if len(set(qubits)) != len(qubits):
            raise DimensionError(f"repeated qubit index in {qubits}")
        gram = vecs.conj() @ vecs.T
        if np.max(np.abs(gram - np.eye(len(vecs)))) > TOL.equality:
            raise DomainError("projector basis vectors are not orthonormal")
        vecs.setflags(write=False)
        object.__setattr__(self, "qubits", qubits)
        object.__setattr__(self, "vectors", vecs)

    @classmethod
    def parity_even(cls, q1: int, q2: int) -> "Projector":
        """``span{|HH>, |VV>}``: both photons leave the PBS by different ports."""
        return cls((q1, q2), np.array([basis_state("HH"), basis_state("VV")]))

    def matrix(self) -> np.ndarray:
        return self.vectors.T @ self.vectors.conj()


def project(
    rho: DensityMatrix, projector: Projector, renormalize: bool = False
) -> tuple[DensityMatrix, float]:
    """Apply ``P rho P`` and report the success probability ``Tr(P rho P)``.

    Raises :class:`PostselectionError` when the probability drops below
    ``1e-15``; callers running a protocol treat that as a failed attempt.
    """
    _check_qubits(projector.qubits, rho.n_qubits)
    out = _conjugate(rho.elements, projector.matrix(), projector.qubits, rho.n_qubits)
    prob = float(np.real(np.trace(out)))
    if prob < TOL.min_success_prob:
        raise PostselectionError("postselection annihilated state")
    if renormalize:
        out = out / prob
    return _trusted(out), prob


def fidelity_to_pure(rho: DensityMatrix, target) -> float:
    psi = np.asarray(target, dtype=complex).ravel()
    if psi.size != rho.dim:
        raise DimensionError(f"target has dimension {psi.size}, state has {rho.dim}")
    value = np.vdot(psi, rho.elements @ psi)
    if abs(value.imag) >= TOL.imag_residue:
        raise NumericalIntegrityError(f"fidelity has imaginary part {value.imag:.3g}")
    return float(value.real)


def depolarize(rho: DensityMatrix, visibility: float) -> DensityMatrix:
    if not 0.0 <= visibility <= 1.0:
        raise DomainError(f"visibility {visibility} outside [0, 1]")
    mixed = np.eye(rho.dim, dtype=complex) * (rho.trace_value / rho.dim)
    return _trusted(visibility * rho.elements + (1.0 - visibility) * mixed)


def _coherence_mask(n: int, qubit: int) -> np.ndarray:
    bits = (np.arange(1 << n) >> (n - 1 - qubit)) & 1
    return bits[:, None] != bits[None, :]


def dephase(rho: DensityMatrix, lam: float, qubit: int) -> DensityMatrix:
    """Scale the H/V coherences of one qubit by ``1 - lam``."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"dephasing strength {lam} outside [0, 1]")
    _check_qubits((qubit,), rho.n_qubits)
    out = rho.elements.copy()
    out[_coherence_mask(rho.n_qubits, qubit)] *= 1.0 - lam
    return _trusted(out)


def partial_trace(rho: DensityMatrix, keep: Iterable[int]) -> DensityMatrix:
    keep = sorted(keep)
    _check_qubits(keep, rho.n_qubits)
    n = rho.n_qubits
    drop = [q for q in range(n) if q not in keep]
    t = rho.elements.reshape((2,) * (2 * n))
    for offset, q in enumerate(drop):
        # axes shift as earlier traced qubits disappear
        a = q - offset
        cur = t.ndim // 2
        t = np.trace(t, axis1=a, axis2=a + cur)
    d = 1 << len(keep)
    return _trusted(t.reshape(d, d))


def permute_qubits(rho: DensityMatrix, order: Sequence[int]) -> DensityMatrix:
    """Reorder the register so that new qubit ``k`` is old qubit ``order[k]``."""
    order = list(order)
    n = rho.n_qubits
    if sorted(order) != list(range(n)):
        raise DimensionError(f"{order} is not a permutation of {n} qubits")
    t = rho.elements.reshape((2,) * (2 * n))
    t = np.transpose(t, order + [n + q for q in order])
    return _trusted(t.reshape(rho.dim, rho.dim))
