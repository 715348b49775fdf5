"""Compiled inner loop for piecewise-constant propagation on a tree."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _apply_h(psi, out, a_i, a_j, A, b_i, b_j, B, diag):
    for k in range(psi.shape[0]):
        out[k] = diag[k] * psi[k]
    for k in range(a_i.shape[0]):
        i = a_i[k]
        j = a_j[k]
        out[i] += A * psi[j]
        out[j] += A * psi[i]
    for k in range(b_i.shape[0]):
        i = b_i[k]
        j = b_j[k]
        out[i] += B * psi[j]
        out[j] += B * psi[i]


@numba.njit(cache=True, nogil=True)
def _taylor_step(psi, dt, a_i, a_j, A, b_i, b_j, B, diag, term, work):
    """psi <- exp(-i H dt) psi, Taylor series summed to machine precision."""
    n = psi.shape[0]
    for k in range(n):
        term[k] = psi[k]
    order = 1
    while True:
        _apply_h(term, work, a_i, a_j, A, b_i, b_j, B, diag)
        size = 0.0
        f = -1j * dt / order
        for k in range(n):
            term[k] = f * work[k]
            psi[k] += term[k]
            size += term[k].real ** 2 + term[k].imag ** 2
        if size < 1e-34 or order > 60:
            break
        order += 1


@numba.njit(cache=True, nogil=True)
def record(psi, step, sample_steps, groups, snaps, peaks, gpeaks, s):
    """Update node and group peaks with ``psi`` and store any snapshot due at ``step``."""
    n = psi.shape[0]
    for k in range(n):
        p = psi[k].real ** 2 + psi[k].imag ** 2
        if p > peaks[k]:
            peaks[k] = p
    for g in range(groups.shape[0]):
        tot = 0.0
        for k in range(n):
            if groups[g, k] != 0.0:
                tot += groups[g, k] * (psi[k].real ** 2 + psi[k].imag ** 2)
        if tot > gpeaks[g]:
            gpeaks[g] = tot
    while s < sample_steps.shape[0] and sample_steps[s] == step:
        for k in range(n):
            snaps[s, k] = psi[k]
        s += 1
    return s


@numba.njit(cache=True, nogil=True)
def propagate_taylor(
    psi, a_i, a_j, b_i, b_j, diag, a_mid, b_mid, dt, substeps, step0,
    sample_steps, groups, snaps, peaks, gpeaks, s,
):
    """Run ``len(a_mid)`` midpoint steps starting at global step ``step0``.

    ``a_mid``/``b_mid`` hold the couplings at each step midpoint.  The state
    is recorded before every step; the caller records the final one.
    ``groups`` is a (g, n) weight matrix whose row sums of populations are
    maximised.  Returns the index of the next pending snapshot.
    """
    n = psi.shape[0]
    term = np.zeros(n, dtype=np.complex128)
    work = np.zeros(n, dtype=np.complex128)
    h = dt / substeps
    for local in range(a_mid.shape[0]):
        s = record(psi, step0 + local, sample_steps, groups, snaps, peaks, gpeaks, s)
        for _ in range(substeps):
            _taylor_step(psi, h, a_i, a_j, a_mid[local], b_i, b_j, b_mid[local], diag, term, work)
    return s
