"""Pure-numpy fallback with the same signatures as the compiled ``_pt_kernel``."""

import math

import numpy as np


def sweep(J, h, beta, spins, energy, u):
    n = spins.shape[0]
    if J.shape[0] != n or h.shape[0] != n or u.shape[0] != n:
        raise ValueError("dimension mismatch")
    n_acc = 0
    for i in range(n):
        f = h[i] + float(J[i] @ spins)
        dh = 2.0 * spins[i] * f
        if u[i] < math.exp(min(0.0, -beta * dh)):
            spins[i] = -spins[i]
            energy += dh
            n_acc += 1
    return energy, n_acc


def _sweep_all(J, h, betas, spins, energies, u):
    # vectorized across replicas, sequential across sites
    s = spins.astype(np.float64)
    for i in range(s.shape[1]):
        dh = 2.0 * s[:, i] * (h[i] + s @ J[i])
        acc = u[:, i] < np.exp(np.minimum(0.0, -betas * dh))
        s[acc, i] = -s[acc, i]
        energies[acc] += dh[acc]
    spins[...] = s.astype(np.int8)


def pt_rounds(J, h, betas, spins, energies, sweep_u, swap_u, parity, out,
              swap_acc, swap_try, n_threads=1):
    n_rounds = sweep_u.shape[0]
    R, n = spins.shape
    record = out.shape[0] > 0
    if sweep_u.shape[1:] != (R, n) or betas.shape[0] != R:
        raise ValueError("dimension mismatch")
    if R > 1 and swap_u.shape != (n_rounds, R - 1):
        raise ValueError("swap uniforms have the wrong shape")
    if record and out.shape != (n_rounds, R, n):
        raise ValueError("output buffer has the wrong shape")
    betas = np.asarray(betas)
    for t in range(n_rounds):
        _sweep_all(J, h, betas, spins, energies, sweep_u[t])
        for k in range(parity, R - 1, 2):
            swap_try[k] += 1
            delta = (betas[k] - betas[k + 1]) * (energies[k] - energies[k + 1])
            if swap_u[t, k] < math.exp(min(0.0, delta)):
                swap_acc[k] += 1
                spins[[k, k + 1]] = spins[[k + 1, k]]
                energies[[k, k + 1]] = energies[[k + 1, k]]
        parity = 1 - parity
        if record:
            out[t] = spins
    return parity
