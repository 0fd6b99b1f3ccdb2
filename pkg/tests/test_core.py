import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from glassflow.core import (
    DisorderRealization,
    discrete_energy,
    draw_sk_disorder,
    enumerate_exact,
    grad_hamiltonian_density,
    hamiltonian_density,
    hessian_hamiltonian_density,
    log_2cosh,
    log_partition_x_from_s,
    replica_symmetric_free_energy,
    sample_exact,
    sample_s_given_x,
    sample_x_given_s,
    shift_coupling,
    spin_up_probability,
)
from glassflow.errors import NumericalError
from conftest import pair_instance


def loop_energy(s, J, h):
    n = len(s)
    e = -sum(h[i] * s[i] for i in range(n))
    for i in range(n):
        for j in range(i + 1, n):
            e -= J[i, j] * s[i] * s[j]
    return e


# -- disorder -----------------------------------------------------------------

def test_disorder_structure():
    d = draw_sk_disorder(2, 1.0, seed=0)
    J = d.couplings
    assert J[0, 1] == J[1, 0] and J[0, 0] == 0 and J[1, 1] == 0
    assert np.all(d.fields == 0)


@pytest.mark.parametrize("n,scale,seed", [(256, 1.0, 7), (64, 2.0, 1)])
def test_disorder_variance(n, scale, seed):
    d = draw_sk_disorder(n, scale, seed)
    J = d.couplings
    assert np.array_equal(J, J.T) and np.all(np.diag(J) == 0)
    off = J[np.triu_indices(n, 1)]
    var = off.var()
    # standard error of a Gaussian sample variance is sigma^2 sqrt(2/(m-1))
    target = scale**2 / n
    assert abs(var - target) < 5 * target * math.sqrt(2.0 / (len(off) - 1))


def test_disorder_is_seeded_and_read_only():
    a = draw_sk_disorder(16, seed=4)
    b = draw_sk_disorder(16, seed=4)
    assert np.array_equal(a.couplings, b.couplings) and a.disorder_id == b.disorder_id
    assert a.disorder_id != draw_sk_disorder(16, seed=5).disorder_id
    with pytest.raises(ValueError):
        a.couplings[0, 1] = 1.0


@pytest.mark.parametrize("bad", [
    dict(n_spins=1),
    dict(couplings=np.array([[1.0, 0.5], [0.5, 0.0]])),
    dict(couplings=np.array([[0.0, 0.5], [0.4, 0.0]])),
    dict(fields=np.zeros(3)),
])
def test_disorder_validation(bad):
    args = dict(n_spins=2, couplings=np.array([[0.0, 0.5], [0.5, 0.0]]), fields=np.zeros(2),
                scale=1.0, seed=0)
    args.update(bad)
    with pytest.raises(ValueError):
        DisorderRealization(**args)
    with pytest.raises(ValueError):
        draw_sk_disorder(1)


# -- discrete energy ----------------------------------------------------------

def test_energy_pair():
    d = pair_instance(1.0)
    assert discrete_energy([1, 1], d) == -1.0
    assert discrete_energy([1, -1], d) == 1.0


def test_energy_matches_loop(sk8, rng):
    s = rng.choice([-1, 1], size=(20, 8))
    expected = [loop_energy(row, sk8.couplings, sk8.fields) for row in s]
    np.testing.assert_allclose(discrete_energy(s, sk8), expected, rtol=0, atol=1e-12)


def test_energy_rejects_bad_input(sk8):
    with pytest.raises(ValueError):
        discrete_energy(np.ones(7), sk8)
    with pytest.raises(ValueError):
        discrete_energy(np.zeros(8), sk8)


# -- shift --------------------------------------------------------------------

def test_shift_negative_lambda():
    # [[0, a], [a, 0]] has eigenvalues +-a
    d = pair_instance(1.2)
    sc = shift_coupling(d, 0.01)
    assert sc.lambda_min == pytest.approx(-1.2)
    assert sc.shift == pytest.approx(1.21)
    assert np.linalg.eigvalsh(sc.shifted_matrix)[0] == pytest.approx(0.01)


def test_shift_zero_when_positive_definite():
    # zero-diagonal matrices always have lambda_min <= 0, so build the wrapper directly
    J = np.array([[0.0, 0.5], [0.5, 0.0]])
    d = DisorderRealization(2, J, np.zeros(2), 1.0, 0)
    sc = shift_coupling(d, epsilon=1e-12)
    assert sc.shift == pytest.approx(0.5 + 1e-12)
    sc_big = shift_coupling(d, epsilon=0.01)
    np.testing.assert_allclose(sc_big.shifted_matrix, J + 0.51 * np.eye(2))


def test_shift_sk64():
    d = draw_sk_disorder(64, 1.0, seed=0)
    sc = shift_coupling(d, 0.01)
    assert abs(np.linalg.eigvalsh(sc.shifted_matrix)[0] - 0.01) < 1e-6
    assert sc.chol_log_det == pytest.approx(np.linalg.slogdet(sc.shifted_matrix)[1])
    with pytest.raises(ValueError):
        shift_coupling(d, 0.0)


# -- Hamiltonian density ------------------------------------------------------

def scalar_coupling(value):
    """An N=2 wrapper whose first coordinate sees a coupling of ``value`` and no neighbour."""
    d = pair_instance(0.0)
    sc = shift_coupling(d, value)
    return sc


def test_density_at_origin(sc8):
    for beta in (0.3, 1.0, 5.0):
        assert hamiltonian_density(np.zeros(8), sc8, beta) == pytest.approx(-8 * math.log(2) / beta)


def test_density_scalar_value():
    # decoupled pair with J_shifted = I: each coordinate contributes x^2/2 - ln 2cosh(x)
    sc = scalar_coupling(1.0)
    val = hamiltonian_density(np.array([2.0, 0.0]), sc, 1.0)
    expected = 2.0 - math.log(2 * math.cosh(2.0)) - math.log(2.0)
    assert val == pytest.approx(expected, abs=1e-12)
    # hand value: cosh(2) = 3.7622, ln(7.5244) = 2.0181
    assert 2.0 - math.log(2 * math.cosh(2.0)) == pytest.approx(-0.0181, abs=1e-4)


def test_density_large_argument():
    sc = scalar_coupling(1.0)
    x = np.array([800.0, -800.0])
    assert np.isfinite(hamiltonian_density(x, sc, 1.0))
    assert log_2cosh(np.array([800.0]))[0] == pytest.approx(800.0)


def test_density_rejects_nonfinite(sc8):
    x = np.zeros(8)
    x[2] = np.nan
    with pytest.raises(ValueError):
        hamiltonian_density(x, sc8, 1.0)
    with pytest.raises(ValueError):
        hamiltonian_density(np.zeros(8), sc8, 0.0)


def test_density_even(sc8, rng):
    x = rng.standard_normal((5, 8))
    np.testing.assert_allclose(hamiltonian_density(x, sc8, 2.0), hamiltonian_density(-x, sc8, 2.0))


def test_gradient_finite_difference(sc8, rng):
    x = rng.standard_normal(8)
    beta = 1.7
    g = grad_hamiltonian_density(x, sc8, beta)
    eps = 1e-5
    fd = np.array([
        (hamiltonian_density(x + eps * e, sc8, beta) - hamiltonian_density(x - eps * e, sc8, beta))
        / (2 * eps) for e in np.eye(8)
    ])
    assert np.max(np.abs(g - fd)) / np.max(np.abs(g)) < 1e-5
    assert np.all(grad_hamiltonian_density(np.zeros(8), sc8, beta) == 0)


def test_gradient_small_beta(sc8, rng):
    x = rng.standard_normal(8)
    beta = 1e-6
    J = sc8.shifted_matrix
    np.testing.assert_allclose(grad_hamiltonian_density(x, sc8, beta), J @ x - beta * J @ J @ x,
                               atol=1e-6)


def test_hessian_origin_spectrum(sc8):
    beta = 0.7
    J = sc8.shifted_matrix
    H = hessian_hamiltonian_density(np.zeros(8), sc8, beta)
    np.testing.assert_allclose(H, J - beta * J @ J, atol=1e-12)
    lam = np.linalg.eigvalsh(J)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(H)), np.sort(lam * (1 - beta * lam)),
                               atol=1e-10)


def test_hessian_finite_difference(sc8, rng):
    x = rng.standard_normal(8)
    beta = 1.3
    eps = 1e-5
    fd = np.stack([
        (grad_hamiltonian_density(x + eps * e, sc8, beta) - grad_hamiltonian_density(x - eps * e, sc8, beta))
        / (2 * eps) for e in np.eye(8)
    ])
    np.testing.assert_allclose(hessian_hamiltonian_density(x, sc8, beta), fd, atol=1e-6)


def test_hessian_nonconvex_low_t():
    d = draw_sk_disorder(32, seed=7)
    sc = shift_coupling(d)
    beta = 1 / 0.2
    assert sc.lambda_max + sc.shift > 0.2
    assert np.linalg.eigvalsh(hessian_hamiltonian_density(np.zeros(32), sc, beta))[0] < 0


def test_hessian_convex_high_t(rng):
    d = draw_sk_disorder(32, seed=7)
    sc = shift_coupling(d)
    beta = 1 / 5.0
    for x in rng.standard_normal((1000, 32)):
        assert np.linalg.eigvalsh(hessian_hamiltonian_density(x, sc, beta))[0] > -1e-12


# -- conditionals -------------------------------------------------------------

def test_x_given_s_identity_mean(rng):
    sc = scalar_coupling(1.0)  # J_shifted = I
    s = np.tile([1, -1], (100_000, 1))
    x = sample_x_given_s(s, sc, 1.0, rng)
    se = 1 / math.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0) - [1, -1]) < 5 * se)


def test_x_given_s_covariance(rng):
    d = draw_sk_disorder(4, seed=11)
    sc = shift_coupling(d)
    beta = 0.8
    s = np.ones((1_000_000, 4), dtype=np.int8)
    x = sample_x_given_s(s, sc, beta, rng) - 1.0
    C = np.linalg.inv(beta * sc.shifted_matrix)
    emp = np.cov(x, rowvar=False)
    se = np.sqrt((C**2 + np.outer(np.diag(C), np.diag(C))) / len(x))
    assert np.all(np.abs(emp - C) < 5 * se)


def test_x_given_s_deterministic(sc8):
    s = np.ones((3, 8), dtype=np.int8)
    a = sample_x_given_s(s, sc8, 1.0, np.random.default_rng(1))
    b = sample_x_given_s(s, sc8, 1.0, np.random.default_rng(1))
    assert a.tobytes() == b.tobytes()


def test_spin_conditional(sc8, rng):
    assert np.all(spin_up_probability(np.zeros(8), sc8, 1.0) == 0.5)
    x = rng.standard_normal(8)
    beta = 0.9
    a = sc8.shifted_matrix @ x
    p = 1 / (1 + np.exp(-2 * beta * a))
    np.testing.assert_allclose(spin_up_probability(x, sc8, beta), p)
    draws = sample_s_given_x(np.tile(x, (100_000, 1)), sc8, beta, rng)
    assert draws.dtype == np.int8
    freq = (draws == 1).mean(axis=0)
    assert np.all(np.abs(freq - p) < 5 * np.sqrt(p * (1 - p) / 100_000) + 1e-12)


def test_spin_conditional_saturates(rng):
    sc = scalar_coupling(1.0)
    x = np.tile([20.0, -20.0], (10_000, 1))
    draws = sample_s_given_x(x, sc, 1.0, rng)
    assert (draws[:, 0] == 1).mean() > 0.999 and (draws[:, 1] == -1).mean() > 0.999
    with pytest.raises(NumericalError):
        spin_up_probability(np.array([np.inf, 0.0]), sc, 1.0)


def test_conditional_chain_preserves_boltzmann(rng):
    d = draw_sk_disorder(6, seed=2)
    sc = shift_coupling(d)
    beta = 1.0
    exact = enumerate_exact(d, beta)
    s = sample_exact(d, beta, 200_000, rng)
    s2 = sample_s_given_x(sample_x_given_s(s, sc, beta, rng), sc, beta, rng)
    # s -> x -> s' leaves p(s) invariant; compare pair correlations, which are non-trivial
    states = list(itertools.product([-1, 1], repeat=6))
    E = np.array([loop_energy(st_, d.couplings, d.fields) for st_ in states])
    w = np.exp(-beta * (E - E.min()))
    w /= w.sum()
    S = np.array(states, dtype=float)
    corr_exact = (S * w[:, None]).T @ S
    corr_chain = s2.astype(float).T @ s2 / len(s2)
    assert np.max(np.abs(corr_chain - corr_exact)) < 0.02
    assert np.max(np.abs(s2.mean(axis=0) - exact.marginals)) < 0.02


# -- free energies and partition relation -------------------------------------

def test_replica_symmetric_values():
    assert replica_symmetric_free_energy(4, 1.0) == pytest.approx(-1 - 4 * math.log(2))
    assert replica_symmetric_free_energy(4, 1.0) == pytest.approx(-3.7726, abs=1e-4)
    assert replica_symmetric_free_energy(10, 0.5) == pytest.approx(-1.25 - 20 * math.log(2))
    assert replica_symmetric_free_energy(10, 0.5) == pytest.approx(-15.113, abs=1e-3)
    beta = 1e-8
    assert beta * replica_symmetric_free_energy(6, beta) == pytest.approx(-6 * math.log(2))


def test_exact_enumeration_pair():
    d = pair_instance(0.5)
    ex = enumerate_exact(d, 1.0)
    assert math.exp(ex.log_z_s) == pytest.approx(2 * math.exp(0.5) + 2 * math.exp(-0.5))
    assert math.exp(ex.log_z_s) == pytest.approx(4.5105, abs=1e-4)
    np.testing.assert_allclose(ex.marginals, 0, atol=1e-15)


def test_exact_enumeration_limits(sk8):
    assert enumerate_exact(sk8, 0.0).log_z_s == pytest.approx(8 * math.log(2))
    np.testing.assert_allclose(enumerate_exact(sk8, 2.0).marginals, 0, atol=1e-12)
    with pytest.raises(ValueError):
        enumerate_exact(draw_sk_disorder(21), 1.0)


def test_exact_enumeration_matches_loop(sk8):
    beta = 1.3
    E = np.array([loop_energy(s, sk8.couplings, sk8.fields)
                  for s in itertools.product([-1, 1], repeat=8)])
    lz = math.log(np.sum(np.exp(-beta * E)))
    ex = enumerate_exact(sk8, beta)
    assert ex.log_z_s == pytest.approx(lz, abs=1e-12)
    w = np.exp(-beta * E - lz)
    assert ex.mean_energy == pytest.approx(float(w @ E), abs=1e-12)


def test_partition_relation_quadrature():
    d = pair_instance(0.5)
    sc = shift_coupling(d, 0.01)
    beta = 1.0
    # integrate in eigen-coordinates of J_shifted; integrand is exp(-beta H(x))
    lam, V = np.linalg.eigh(sc.shifted_matrix)

    def f(u1, u0):
        x = V @ np.array([u0, u1])
        return math.exp(-beta * hamiltonian_density(x, sc, beta))

    lim = [8 / math.sqrt(beta * l) + 2 for l in lam]
    val, err = integrate.dblquad(f, -lim[0], lim[0], -lim[1], lim[1], epsabs=1e-10, epsrel=1e-10)
    predicted = log_partition_x_from_s(enumerate_exact(d, beta).log_z_s, sc, beta)
    assert abs(math.log(val) - predicted) < 1e-3


def test_partition_relation_no_shift(sk8):
    sc = shift_coupling(sk8)
    # forcing shift = 0 in the formula reduces to the unshifted Gaussian normalizer
    beta = 0.5
    lz = 1.234
    expected = (4 * math.log(2 * math.pi) - 0.5 * sc.log_det(beta) + 0.5 * 8 * beta * sc.shift + lz)
    assert log_partition_x_from_s(lz, sc, beta) == pytest.approx(expected)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_density_even_property(seed, beta):
    d = draw_sk_disorder(5, seed=seed)
    sc = shift_coupling(d)
    x = np.random.default_rng(seed).standard_normal(5)
    assert hamiltonian_density(x, sc, beta) == pytest.approx(hamiltonian_density(-x, sc, beta), abs=1e-10)
