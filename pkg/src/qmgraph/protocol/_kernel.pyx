# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled session kernel; see ``_kernel_py.py`` for the reference loop."""

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport floor, log, INFINITY
from numpy.random cimport bitgen_t

# keep in sync with _codes.py
cdef enum:
    STRATEGY_MEMORY = 0
    BASIS_FIXED = 1
    OUT_COINCIDENCE = 0
    OUT_IDLER_LOSS = 1
    OUT_PBS_REJECT = 2
    OUT_TIMEOUT = 3
    OUT_SESSION_END = 4
    PATTERN_HELD = -2


cdef inline double _uniform(bitgen_t *rng) noexcept nogil:
    return 1.0 - rng.next_double(rng.state)


cdef inline double _geometric(double u, double log1mp) noexcept nogil:
    if log1mp == -INFINITY:
        return 1.0
    return floor(log(u) / log1mp) + 1.0


def run_session(
    object bit_generator,
    int strategy,
    double log1mp1,
    double log1mp2,
    double log1mp_joint,
    long long max_qm2,
    long long n_cycles,
    const double[::1] surv1,
    double surv2,
    const double[::1] pbs,
    const double[:, :, ::1] cdf,
    const double[::1] ph,
    int basis_mode,
    int basis_start,
    long long[::1] out_q1,
    long long[::1] out_q2,
    long long[::1] out_k,
    signed char[::1] out_outcome,
    short[::1] out_basis,
    short[::1] out_pattern,
):
    """Run one session; returns ``(n_records, sum_expected_h, sum_expected_any)``."""
    cdef bitgen_t *rng
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid bit generator capsule")
    rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

    cdef long long t = 0, rec = 0, remaining, q1, q2, k
    cdef double k1, k2, g, u, u_a, u_b
    cdef double exp_h = 0.0, exp_any = 0.0
    cdef int basis = basis_start
    cdef int n_bases = cdf.shape[1]
    cdef int n_out = cdf.shape[2]
    cdef int j

    lock = bit_generator.lock
    with lock, nogil:
        while t < n_cycles:
            remaining = n_cycles - t
            if strategy == STRATEGY_MEMORY:
                k1 = _geometric(_uniform(rng), log1mp1)
                if k1 > remaining:
                    out_q1[rec] = remaining
                    out_q2[rec] = 0
                    out_k[rec] = 0
                    out_outcome[rec] = OUT_SESSION_END
                    out_basis[rec] = basis
                    out_pattern[rec] = -1
                    rec += 1
                    break
                q1 = <long long> k1
                t += q1
                remaining -= q1
                k2 = _geometric(_uniform(rng), log1mp2)
                if k2 <= max_qm2 and k2 <= remaining:
                    k = <long long> k2
                    t += k
                    q2 = k
                elif max_qm2 <= remaining:
                    t += max_qm2
                    out_q1[rec] = q1
                    out_q2[rec] = max_qm2
                    out_k[rec] = max_qm2
                    out_outcome[rec] = OUT_TIMEOUT
                    out_basis[rec] = basis
                    out_pattern[rec] = -1
                    rec += 1
                    continue
                else:
                    out_q1[rec] = q1
                    out_q2[rec] = remaining
                    out_k[rec] = remaining
                    out_outcome[rec] = OUT_SESSION_END
                    out_basis[rec] = basis
                    out_pattern[rec] = PATTERN_HELD
                    rec += 1
                    t = n_cycles
                    break
            else:
                k1 = _geometric(_uniform(rng), log1mp_joint)
                if k1 > remaining:
                    out_q1[rec] = remaining
                    out_q2[rec] = 0
                    out_k[rec] = 0
                    out_outcome[rec] = OUT_SESSION_END
                    out_basis[rec] = basis
                    out_pattern[rec] = -1
                    rec += 1
                    break
                q1 = <long long> k1
                t += q1
                q2 = 0
                k = 0

            g = surv1[k] * surv2 * pbs[k]
            exp_any += g
            exp_h += g * ph[k]
            out_q1[rec] = q1
            out_q2[rec] = q2
            out_k[rec] = k
            out_basis[rec] = basis
            out_pattern[rec] = -1
            u_a = _uniform(rng)
            u_b = _uniform(rng)
            if u_a >= surv1[k] or u_b >= surv2:
                out_outcome[rec] = OUT_IDLER_LOSS
            elif _uniform(rng) >= pbs[k]:
                out_outcome[rec] = OUT_PBS_REJECT
            else:
                u = _uniform(rng)
                j = 0
                while j < n_out - 1 and u >= cdf[k, basis, j]:
                    j += 1
                out_outcome[rec] = OUT_COINCIDENCE
                out_pattern[rec] = j
                if basis_mode != BASIS_FIXED:
                    basis = (basis + 1) % n_bases
            rec += 1

    return rec, exp_h, exp_any
