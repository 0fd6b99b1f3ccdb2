# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Metropolis / replica-exchange kernels.

All randomness is supplied by the caller as pre-drawn uniforms so that this
module and ``_pt_python`` consume identical streams.
"""

from cython.parallel cimport prange
from libc.math cimport exp, fmin

import numpy as np


cdef inline double _sweep_row(const double* J, const double* h, double beta,
                              signed char* s, const double* u, int n,
                              double energy, long* n_acc) noexcept nogil:
    cdef int i, j
    cdef double f, dh
    cdef const double* row
    for i in range(n):
        row = J + i * n
        f = h[i]
        for j in range(n):
            f += row[j] * s[j]
        dh = 2.0 * s[i] * f
        if u[i] < exp(fmin(0.0, -beta * dh)):
            s[i] = -s[i]
            energy += dh
            n_acc[0] += 1
    return energy


def sweep(const double[:, ::1] J, const double[::1] h, double beta,
          signed char[::1] spins, double energy, const double[::1] u):
    """One sequential-scan sweep of a single replica. Returns (energy, accepted)."""
    cdef int n = spins.shape[0]
    cdef long n_acc = 0
    if J.shape[0] != n or h.shape[0] != n or u.shape[0] != n:
        raise ValueError("dimension mismatch")
    with nogil:
        energy = _sweep_row(&J[0, 0], &h[0], beta, &spins[0], &u[0], n, energy, &n_acc)
    return energy, n_acc


def pt_rounds(const double[:, ::1] J, const double[::1] h, const double[::1] betas,
              signed char[:, ::1] spins, double[::1] energies,
              const double[:, :, ::1] sweep_u, const double[:, ::1] swap_u,
              int parity, signed char[:, :, ::1] out,
              long[::1] swap_acc, long[::1] swap_try, int n_threads=1):
    """Run K rounds of (sweep every replica, one exchange step, record).

    ``out`` may have zero rounds along axis 0 to skip recording (burn-in).
    Returns the parity to use for the next exchange step.
    """
    cdef int n_rounds = sweep_u.shape[0]
    cdef int R = spins.shape[0]
    cdef int n = spins.shape[1]
    cdef int record = out.shape[0] > 0
    cdef int t, r, k, i
    cdef long dummy
    cdef double delta
    cdef signed char tmp_s
    cdef double tmp_e
    if sweep_u.shape[1] != R or sweep_u.shape[2] != n or betas.shape[0] != R:
        raise ValueError("dimension mismatch")
    if R > 1 and (swap_u.shape[0] != n_rounds or swap_u.shape[1] != R - 1):
        raise ValueError("swap uniforms have the wrong shape")
    if record and (out.shape[0] != n_rounds or out.shape[1] != R or out.shape[2] != n):
        raise ValueError("output buffer has the wrong shape")
    if n_threads < 1:
        n_threads = 1
    with nogil:
        for t in range(n_rounds):
            if n_threads > 1:
                for r in prange(R, num_threads=n_threads, schedule="static"):
                    dummy = 0
                    energies[r] = _sweep_row(&J[0, 0], &h[0], betas[r], &spins[r, 0],
                                             &sweep_u[t, r, 0], n, energies[r], &dummy)
            else:
                for r in range(R):
                    dummy = 0
                    energies[r] = _sweep_row(&J[0, 0], &h[0], betas[r], &spins[r, 0],
                                             &sweep_u[t, r, 0], n, energies[r], &dummy)
            k = parity
            while k < R - 1:
                swap_try[k] += 1
                delta = (betas[k] - betas[k + 1]) * (energies[k] - energies[k + 1])
                if swap_u[t, k] < exp(fmin(0.0, delta)):
                    swap_acc[k] += 1
                    for i in range(n):
                        tmp_s = spins[k, i]
                        spins[k, i] = spins[k + 1, i]
                        spins[k + 1, i] = tmp_s
                    tmp_e = energies[k]
                    energies[k] = energies[k + 1]
                    energies[k + 1] = tmp_e
                k = k + 2
            parity = 1 - parity
            if record:
                for r in range(R):
                    for i in range(n):
                        out[t, r, i] = spins[r, i]
    return parity
