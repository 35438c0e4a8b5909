"""Pure-Python session kernel.

Mirrors ``_kernel.pyx`` operation for operation so both produce identical
records from the same bit generator state.
"""

import math

import numpy as np

from ._codes import (
    BASIS_FIXED,
    OUT_COINCIDENCE,
    OUT_IDLER_LOSS,
    OUT_PBS_REJECT,
    OUT_SESSION_END,
    OUT_TIMEOUT,
    PATTERN_HELD,
    STRATEGY_MEMORY,
)

_BLOCK = 1024


def _geometric(u, log1mp):
    if log1mp == -math.inf:
        return 1.0
    return math.floor(math.log(u) / log1mp) + 1.0


def run_session(
    bit_generator,
    strategy,
    log1mp1,
    log1mp2,
    log1mp_joint,
    max_qm2,
    n_cycles,
    surv1,
    surv2,
    pbs,
    cdf,
    ph,
    basis_mode,
    basis_start,
    out_q1,
    out_q2,
    out_k,
    out_outcome,
    out_basis,
    out_pattern,
):
    """Run one session; returns ``(n_records, sum_expected_h, sum_expected_any)``."""
    gen = np.random.Generator(bit_generator)
    buf = []
    pos = 0

    def uniform():
        nonlocal buf, pos
        if pos == len(buf):
            buf = gen.random(_BLOCK).tolist()
            pos = 0
        x = buf[pos]
        pos += 1
        return 1.0 - x

    surv1 = surv1.tolist()
    pbs = pbs.tolist()
    ph = ph.tolist()
    n_bases = cdf.shape[1]
    n_out = cdf.shape[2]
    cdf_rows = [[cdf[k, b].tolist() for b in range(n_bases)] for k in range(cdf.shape[0])]

    t = 0
    rec = 0
    basis = basis_start
    exp_h = 0.0
    exp_any = 0.0

    while t < n_cycles:
        remaining = n_cycles - t
        if strategy == STRATEGY_MEMORY:
            k1 = _geometric(uniform(), log1mp1)
            if k1 > remaining:
                out_q1[rec] = remaining
                out_q2[rec] = 0
                out_k[rec] = 0
                out_outcome[rec] = OUT_SESSION_END
                out_basis[rec] = basis
                out_pattern[rec] = -1
                rec += 1
                break
            q1 = int(k1)
            t += q1
            remaining -= q1
            k2 = _geometric(uniform(), log1mp2)
            if k2 <= max_qm2 and k2 <= remaining:
                k = int(k2)
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
            k1 = _geometric(uniform(), log1mp_joint)
            if k1 > remaining:
                out_q1[rec] = remaining
                out_q2[rec] = 0
                out_k[rec] = 0
                out_outcome[rec] = OUT_SESSION_END
                out_basis[rec] = basis
                out_pattern[rec] = -1
                rec += 1
                break
            q1 = int(k1)
            t += q1
            q2 = 0
            k = 0

        # both memories heralded: read out with storage index k
        g = surv1[k] * surv2 * pbs[k]
        exp_any += g
        exp_h += g * ph[k]
        out_q1[rec] = q1
        out_q2[rec] = q2
        out_k[rec] = k
        out_basis[rec] = basis
        out_pattern[rec] = -1
        u_a = uniform()
        u_b = uniform()
        if u_a >= surv1[k] or u_b >= surv2:
            out_outcome[rec] = OUT_IDLER_LOSS
        elif uniform() >= pbs[k]:
            out_outcome[rec] = OUT_PBS_REJECT
        else:
            row = cdf_rows[k][basis]
            u = uniform()
            j = 0
            while j < n_out - 1 and u >= row[j]:
                j += 1
            out_outcome[rec] = OUT_COINCIDENCE
            out_pattern[rec] = j
            if basis_mode != BASIS_FIXED:
                basis = (basis + 1) % n_bases
        rec += 1

    return rec, exp_h, exp_any
