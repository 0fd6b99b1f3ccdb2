"""Parallel tempering (replica exchange) over the discrete spin glass."""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .core import check_spins, discrete_energy, sample_x_given_s
from .errors import InvalidStateError

ENERGY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TemperatureLadder:
    """Strictly increasing inverse temperatures, one per replica slot."""

    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) < 2:
            raise ValueError("a ladder needs at least two temperatures")
        if any(b <= 0 or not math.isfinite(b) for b in betas):
            raise ValueError("inverse temperatures must be positive and finite")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError("inverse temperatures must be strictly increasing")
        object.__setattr__(self, "betas", betas)

    @classmethod
    def geometric(cls, t_min, t_max, n):
        """Geometrically spaced temperatures between ``t_min`` and ``t_max``."""
        if not 0 < t_min < t_max:
            raise ValueError("need 0 < t_min < t_max")
        temps = np.geomspace(t_max, t_min, n)
        return cls(tuple(1.0 / temps))

    @property
    def temperatures(self):
        return tuple(1.0 / b for b in self.betas)

    def __len__(self):
        return len(self.betas)

    def index_of_temperature(self, temperature, rtol=1e-9):
        for k, t in enumerate(self.temperatures):
            if math.isclose(t, temperature, rel_tol=rtol):
                return k
        raise KeyError(f"temperature {temperature} is not on the ladder")


@dataclass
class ReplicaState:
    config: np.ndarray
    energy: float
    beta_index: int = 0

    @classmethod
    def from_config(cls, config, d, beta_index=0):
        config = check_spins(config, d.n_spins).astype(np.int8)
        return cls(config, float(discrete_energy(config, d)), beta_index)


@dataclass
class SampleSet:
    """Recorded configurations at one temperature, optionally with continuous twins."""

    disorder_id: str
    beta: float
    spins: np.ndarray
    xs: np.ndarray = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.spins = np.ascontiguousarray(self.spins, dtype=np.int8)
        if self.spins.ndim != 2:
            raise ValueError("spins must be an (M, N) matrix")
        if self.xs is not None:
            self.xs = np.ascontiguousarray(self.xs, dtype=np.float64)
            if self.xs.shape != self.spins.shape:
                raise ValueError("xs and spins must have matching shapes")

    @property
    def n_samples(self):
        return self.spins.shape[0]

    @property
    def n_spins(self):
        return self.spins.shape[1]

    @property
    def temperature(self):
        return 1.0 / self.beta


def metropolis_sweep(state, beta, d, rng, backend=None):
    """One sequential-scan single-spin-flip Metropolis sweep; returns a new state."""
    s = np.array(state.config, dtype=np.int8, copy=True)
    if s.shape != (d.n_spins,):
        raise ValueError("configuration does not match the instance size")
    u = rng.random(d.n_spins)
    energy, _ = kernels.get_module(backend).sweep(
        d.couplings, d.fields, float(beta), s, float(state.energy), u
    )
    return ReplicaState(s, energy, state.beta_index)


def swap_acceptance(beta_i, beta_j, energy_i, energy_j):
    """Probability of exchanging configurations between two temperature slots."""
    return math.exp(min(0.0, (beta_i - beta_j) * (energy_i - energy_j)))


def replica_exchange_step(replicas, ladder, rng, parity=0):
    """Attempt configuration swaps between adjacent slots ``(k, k+1)``, ``k = parity mod 2``.

    ``replicas[k]`` is the replica currently at ``ladder.betas[k]``. Returns the
    updated list and the parity for the next call.
    """
    if len(replicas) != len(ladder):
        raise ValueError("need exactly one replica per ladder slot")
    out = [replace(r, config=r.config.copy()) for r in replicas]
    betas = ladder.betas
    u = rng.random(len(ladder) - 1)
    for k in range(parity, len(ladder) - 1, 2):
        a, b = out[k], out[k + 1]
        if u[k] < swap_acceptance(betas[k], betas[k + 1], a.energy, b.energy):
            out[k] = ReplicaState(b.config, b.energy, k)
            out[k + 1] = ReplicaState(a.config, a.energy, k + 1)
    return out, 1 - parity


def replica_streams(seed, n_replicas):
    """Per-slot sweep generators plus one exchange generator, all derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n_replicas + 1)
    gens = [np.random.Generator(np.random.PCG64(c)) for c in children]
    return gens[:-1], gens[-1]


@dataclass
class PTRun:
    samples: list
    swap_acceptance: np.ndarray
    final_energies: np.ndarray


def run_pt(d, ladder, burn_in_sweeps, n_samples, seed, n_threads=1, backend=None,
           block=1024):
    """Burn in, then record one configuration per slot after every (sweep, exchange) round.

    Returns a :class:`PTRun` whose ``samples`` hold one :class:`SampleSet` per
    ladder temperature (in ladder order). Results depend only on ``seed``, not on
    ``n_threads``, ``block`` or ``backend``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if burn_in_sweeps < 0:
        raise ValueError("burn_in_sweeps must be >= 0")
    kern = kernels.get_module(backend)
    R, n = len(ladder), d.n_spins
    betas = np.array(ladder.betas)
    sweep_rngs, swap_rng = replica_streams(seed, R)
    spins = np.stack([(2 * g.integers(0, 2, n) - 1).astype(np.int8) for g in sweep_rngs])
    energies = np.array(discrete_energy(spins, d), dtype=np.float64)
    swap_acc = np.zeros(max(R - 1, 1), dtype=np.int64)
    swap_try = np.zeros_like(swap_acc)
    parity = 0
    out = np.empty((n_samples, R, n), dtype=np.int8)
    empty = np.empty((0, R, n), dtype=np.int8)

    def advance(n_rounds, dest):
        nonlocal parity, energies
        sweep_u = np.empty((n_rounds, R, n))
        for r, g in enumerate(sweep_rngs):
            sweep_u[:, r, :] = g.random((n_rounds, n))
        swap_u = swap_rng.random((n_rounds, R - 1))
        parity = kern.pt_rounds(d.couplings, d.fields, betas, spins, energies, sweep_u,
                                swap_u, parity, dest, swap_acc, swap_try, n_threads)
        exact = discrete_energy(spins, d)
        drift = np.max(np.abs(exact - energies))
        if drift > ENERGY_TOLERANCE * max(1.0, np.max(np.abs(exact))):
            raise InvalidStateError(f"energy cache drifted by {drift:g}")
        energies = np.array(exact)

    done = 0
    while done < burn_in_sweeps:
        k = min(block, burn_in_sweeps - done)
        advance(k, empty)
        done += k
    done = 0
    while done < n_samples:
        k = min(block, n_samples - done)
        advance(k, out[done:done + k])
        done += k

    rates = swap_acc / np.maximum(swap_try, 1)
    meta = {"sweeps_per_sample": 1, "burn_in": int(burn_in_sweeps), "seed": int(seed)}
    sets = [
        SampleSet(d.disorder_id, float(b), np.ascontiguousarray(out[:, r, :]), None,
                  dict(meta, slot=r))
        for r, b in enumerate(ladder.betas)
    ]
    return PTRun(sets, rates[: R - 1], energies.copy())


def build_continuous_dataset(ss, sc, rng):
    """Attach one continuous configuration ``x ~ p(x | s)`` per recorded spin row."""
    if ss.xs is not None:
        raise InvalidStateError("sample set already has continuous configurations")
    if ss.disorder_id != sc.base.disorder_id:
        raise ValueError("sample set and coupling come from different instances")
    xs = sample_x_given_s(ss.spins, sc, ss.beta, rng)
    return SampleSet(ss.disorder_id, ss.beta, ss.spins, xs, dict(ss.metadata))


def mean_energy(ss, d):
    """Sample mean and standard error of the energy of a sample set."""
    e = discrete_energy(ss.spins, d)
    return float(e.mean()), float(e.std(ddof=1) / math.sqrt(len(e))) if len(e) > 1 else 0.0
