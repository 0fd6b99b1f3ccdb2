"""Spin-glass instances and the continuous (Hubbard-Stratonovich) representation.

Spin configurations are numpy arrays with entries in {-1, +1} (any integer or
float dtype); continuous configurations are float64 arrays. Functions accept
either a single configuration of shape ``(N,)`` or a batch of shape ``(M, N)``
and return results with the batch dimension preserved.
"""

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logsumexp

from .errors import NumericalError

MAX_EXACT_SPINS = 20


def log_2cosh(a):
    """Overflow-safe ``ln(2 cosh a)``."""
    a = np.abs(a)
    return a + np.log1p(np.exp(-2.0 * a))


def sech2(a):
    """Overflow-safe ``1 / cosh(a)**2``."""
    e = np.exp(-2.0 * np.abs(a))
    return 4.0 * e / (1.0 + e) ** 2


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    """One spin-glass instance: couplings ``J``, fields ``h`` and provenance.

    The Hamiltonian is ``H(s) = -h.s - sum_{i<j} J_ij s_i s_j``.
    """

    n_spins: int
    couplings: np.ndarray
    fields: np.ndarray
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        J = np.ascontiguousarray(self.couplings, dtype=np.float64)
        h = np.ascontiguousarray(self.fields, dtype=np.float64)
        n = self.n_spins
        if n < 2:
            raise ValueError(f"n_spins must be >= 2, got {n}")
        if J.shape != (n, n) or h.shape != (n,):
            raise ValueError("couplings must be (N, N) and fields (N,)")
        if not np.array_equal(J, J.T):
            raise ValueError("couplings must be exactly symmetric")
        if np.any(np.diag(J) != 0.0):
            raise ValueError("couplings must have a zero diagonal")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(h))):
            raise ValueError("couplings and fields must be finite")
        J.flags.writeable = False
        h.flags.writeable = False
        object.__setattr__(self, "couplings", J)
        object.__setattr__(self, "fields", h)

    @property
    def disorder_id(self):
        """Content hash of the couplings and fields (16 hex digits)."""
        digest = hashlib.sha256()
        digest.update(self.couplings.astype("<f8").tobytes())
        digest.update(self.fields.astype("<f8").tobytes())
        return digest.hexdigest()[:16]


def draw_sk_disorder(n_spins, scale=1.0, seed=0):
    """Draw a Sherrington-Kirkpatrick instance with ``J_ij ~ N(0, scale**2 / N)``.

    Only the strict upper triangle is sampled; the lower triangle mirrors it
    and the diagonal is zero. Fields are zero.
    """
    if n_spins < 2:
        raise ValueError(f"n_spins must be >= 2, got {n_spins}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n_spins, k=1)
    J = np.zeros((n_spins, n_spins))
    J[iu] = rng.standard_normal(len(iu[0])) * (scale / math.sqrt(n_spins))
    J = J + J.T
    return DisorderRealization(n_spins, J, np.zeros(n_spins), float(scale), int(seed))


def check_spins(s, n_spins=None):
    s = np.asarray(s)
    if n_spins is not None and s.shape[-1] != n_spins:
        raise ValueError(f"expected {n_spins} spins, got shape {s.shape}")
    if not np.all(np.abs(s) == 1):
        raise ValueError("spin entries must be exactly +1 or -1")
    return s


def discrete_energy(s, d):
    """Ising energy ``-h.s - sum_{i<j} J_ij s_i s_j`` of one or many configurations."""
    s = check_spins(s, d.n_spins).astype(np.float64)
    return -(s @ d.fields) - 0.5 * np.einsum("...i,...i->...", s @ d.couplings, s)


@dataclass(frozen=True, eq=False)
class ShiftedCoupling:
    """``J + shift * I`` with the shift chosen so its smallest eigenvalue is ``>= epsilon``."""

    base: DisorderRealization
    shift: float
    epsilon: float
    lambda_min: float
    lambda_max: float
    shifted_matrix: np.ndarray
    chol_log_det: float
    _chol: np.ndarray = field(repr=False)

    @property
    def n_spins(self):
        return self.base.n_spins

    @property
    def fields(self):
        return self.base.fields

    def log_det(self, beta):
        """``ln det(beta * J_shifted)``."""
        return self.n_spins * math.log(beta) + self.chol_log_det


def shift_coupling(d, epsilon=0.01):
    """Build the positive-definite shifted coupling for instance ``d``."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    try:
        eig = np.linalg.eigvalsh(d.couplings)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    shift = max(0.0, epsilon - lam_min)
    Js = d.couplings + shift * np.eye(d.n_spins)
    try:
        chol = np.linalg.cholesky(Js)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"shifted coupling is not positive definite: {exc}") from exc
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    Js.flags.writeable = False
    chol.flags.writeable = False
    return ShiftedCoupling(d, shift, float(epsilon), lam_min, lam_max, Js, log_det, chol)


def _check_x(x, n_spins):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n_spins:
        raise ValueError(f"expected {n_spins} coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("continuous configuration must be finite")
    return x


def _check_beta(beta):
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")


def local_fields(x, sc):
    """``J_shifted x + h`` for one or many continuous configurations."""
    return x @ sc.shifted_matrix + sc.fields


def hamiltonian_density(x, sc, beta):
    """Continuous Hamiltonian density ``x'Jx/2 - (1/beta) sum ln 2cosh(beta (Jx + h))``."""
    _check_beta(beta)
    x = _check_x(x, sc.n_spins)
    Jx = x @ sc.shifted_matrix
    quad = 0.5 * np.einsum("...i,...i->...", x, Jx)
    return quad - np.sum(log_2cosh(beta * (Jx + sc.fields)), axis=-1) / beta


def grad_hamiltonian_density(x, sc, beta):
    _check_beta(beta)
    x = _check_x(x, sc.n_spins)
    Jx = x @ sc.shifted_matrix
    return Jx - np.tanh(beta * (Jx + sc.fields)) @ sc.shifted_matrix


def hessian_hamiltonian_density(x, sc, beta):
    """Hessian of the density at a single point ``x``; exactly symmetric."""
    _check_beta(beta)
    x = _check_x(x, sc.n_spins)
    if x.ndim != 1:
        raise ValueError("hessian is defined for a single configuration")
    Js = sc.shifted_matrix
    w = np.sqrt(beta * sech2(beta * (Js @ x + sc.fields)))
    B = Js * w  # Js @ diag(w)
    H = Js - B @ B.T
    return 0.5 * (H + H.T)


def sample_x_given_s(s, sc, beta, rng):
    """Draw ``x ~ N(s, (beta J_shifted)^-1)`` for each spin configuration."""
    _check_beta(beta)
    s = check_spins(s, sc.n_spins).astype(np.float64)
    xi = rng.standard_normal(s.shape)
    # L L' = J_shifted, so (sqrt(beta) L)^-T xi has covariance (beta J_shifted)^-1
    noise = solve_triangular(sc._chol, xi.T, lower=True, trans="T").T
    return s + noise / math.sqrt(beta)


def spin_up_probability(x, sc, beta):
    """Per-site ``P(s_i = +1 | x) = sigmoid(2 beta a_i)`` with ``a = J_shifted x + h``."""
    _check_beta(beta)
    with np.errstate(invalid="ignore", over="ignore"):
        a = local_fields(np.asarray(x, dtype=np.float64), sc)
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite local field in spin conditional")
    return expit(2.0 * beta * a)


def sample_s_given_x(x, sc, beta, rng):
    """Draw spins independently from the conditional ``p(s | x)``; returns int8."""
    p = spin_up_probability(x, sc, beta)
    u = rng.random(p.shape)
    return np.where(u < p, 1, -1).astype(np.int8)


def replica_symmetric_free_energy(n_spins, beta, scale=1.0):
    """Paramagnetic SK free energy ``-N beta J^2 / 4 - N ln2 / beta``."""
    _check_beta(beta)
    if n_spins < 1 or not scale > 0:
        raise ValueError("n_spins and scale must be positive")
    return -n_spins * beta * scale**2 / 4.0 - n_spins * math.log(2.0) / beta


def log_partition_x_from_s(log_z_s, sc, beta):
    """``ln Z_x`` of the continuous density from ``ln Z_s`` of the discrete model."""
    _check_beta(beta)
    n = sc.n_spins
    return (
        0.5 * n * math.log(2.0 * math.pi)
        - 0.5 * sc.log_det(beta)
        + 0.5 * n * beta * sc.shift
        + log_z_s
    )


@dataclass(frozen=True)
class ExactSummary:
    beta: float
    log_z_s: float
    marginals: np.ndarray
    mean_energy: float

    @property
    def free_energy(self):
        return -self.log_z_s / self.beta


def all_spin_states(n_spins, start=0, stop=None):
    """Rows ``start..stop`` of the ``2**N`` spin states in binary order (int8)."""
    stop = 2**n_spins if stop is None else stop
    k = np.arange(start, stop, dtype=np.int64)
    bits = (k[:, None] >> np.arange(n_spins, dtype=np.int64)) & 1
    return (1 - 2 * bits).astype(np.int8)


def enumerate_exact(d, beta, chunk=1 << 16):
    """Brute-force ``ln Z_s``, marginals and mean energy over all ``2**N`` states."""
    n = d.n_spins
    if n > MAX_EXACT_SPINS:
        raise ValueError(f"exact enumeration refused for N={n} > {MAX_EXACT_SPINS}")
    if beta < 0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    total = 2**n
    energies = np.empty(total)
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        energies[start:stop] = discrete_energy(all_spin_states(n, start, stop), d)
    logw = -beta * energies
    log_z = float(logsumexp(logw))
    w = np.exp(logw - log_z)
    marg = np.zeros(n)
    for start in range(0, total, chunk):
        stop = min(total, start + chunk)
        marg += w[start:stop] @ all_spin_states(n, start, stop)
    return ExactSummary(float(beta), log_z, marg, float(w @ energies))


def sample_exact(d, beta, n_samples, rng):
    """Draw exact Boltzmann samples by enumeration (N <= 20); int8 rows."""
    n = d.n_spins
    if n > MAX_EXACT_SPINS:
        raise ValueError(f"exact sampling refused for N={n} > {MAX_EXACT_SPINS}")
    logw = -beta * discrete_energy(all_spin_states(n), d)
    p = np.exp(logw - logsumexp(logw))
    idx = rng.choice(2**n, size=n_samples, p=p)
    bits = (idx[:, None] >> np.arange(n)) & 1
    return (1 - 2 * bits).astype(np.int8)
