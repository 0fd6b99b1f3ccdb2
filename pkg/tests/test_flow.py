import math

import numpy as np
import pytest

from glassflow.errors import InvalidStateError, NumericalError
from glassflow.flow import (
    LOG_2PI,
    CouplingLayer,
    FlowModel,
    GradientTape,
    Mlp,
    backward,
    init_flow,
    make_masks,
)


def perturbed_flow(n, n_layers=4, seed=0, scale=0.3):
    """Random flow with nonzero biases so no layer is close to the identity.

    Noise is scaled by 1/sqrt(fan_in) like the initializer, so wide nets stay O(1).
    """
    model = init_flow(n, n_layers, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for p in model.parameters():
        fan_in = p.shape[1] if p.ndim == 2 else 1
        p += scale * rng.standard_normal(p.shape) / math.sqrt(fan_in)
    model.mark_updated()
    return model


def zero_flow(n, n_layers=2):
    model = init_flow(n, n_layers, seed=0)
    for p in model.parameters():
        p[...] = 0.0
    return model


def numerical_jacobian(f, z, eps=1e-6):
    cols = [(f(z + eps * e) - f(z - eps * e)) / (2 * eps) for e in np.eye(len(z))]
    return np.stack(cols, axis=1)


def test_masks_complementary():
    model = init_flow(256, 4, seed=1)
    m = [layer.active_mask for layer in model.layers]
    assert len(m) == 4
    assert np.array_equal(m[1], ~m[0]) and np.array_equal(m[3], ~m[2])
    masks = make_masks(3, 6, np.random.default_rng(0))
    assert all(k.any() and not k.all() for k in masks)


def test_init_deterministic_and_validated():
    a, b = init_flow(16, 4, seed=3), init_flow(16, 4, seed=3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)
    assert all(np.array_equal(x.active_mask, y.active_mask) for x, y in zip(a.layers, b.layers))
    dims = a.layers[0].s_net.layer_dims
    assert dims == [16, 16, 16, 16, 16]
    for bad in (3, 0):
        with pytest.raises(ValueError):
            init_flow(16, bad)


def test_fresh_flow_log_det_small():
    model = init_flow(64, 4, seed=0)
    z = np.random.default_rng(0).standard_normal((100, 64))
    _, ld = model.forward(z)
    assert np.max(np.abs(ld)) < 10


def test_zero_networks_identity():
    model = zero_flow(5)
    z = np.random.default_rng(1).standard_normal((7, 5))
    x, ld = model.forward(z)
    assert np.array_equal(x, z) and np.all(ld == 0)
    zz, ld_inv = model.inverse(z)
    assert np.array_equal(zz, z) and np.all(ld_inv == 0)
    np.testing.assert_allclose(model.log_density(z), -0.5 * np.sum(z * z, axis=1) - 2.5 * LOG_2PI)


def test_pass_through_exact():
    model = perturbed_flow(6)
    layer = model.layers[0]
    y = np.random.default_rng(2).standard_normal((4, 6))
    out, _, _ = layer.forward(y)
    keep = ~layer.active_mask
    assert np.array_equal(out[:, keep], y[:, keep])


def test_layer_log_det_vs_jacobian():
    model = perturbed_flow(6, seed=4)
    layer = model.layers[1]
    y = np.random.default_rng(3).standard_normal(6)
    J = numerical_jacobian(lambda v: layer.forward(v[None])[0][0], y)
    _, ld, _ = layer.forward(y[None])
    assert abs(ld[0] - np.linalg.slogdet(J)[1]) / abs(ld[0]) < 1e-5


@pytest.mark.parametrize("n", [4, 64, 256])
def test_round_trip(n):
    model = perturbed_flow(n, seed=n)
    z = np.random.default_rng(n).standard_normal((32, n))
    x, ld = model.forward(z)
    zz, ld_inv = model.inverse(x)
    assert np.max(np.abs(zz - z)) < 1e-10
    np.testing.assert_allclose(ld_inv, -ld, atol=1e-10)


def test_total_log_det_vs_jacobian():
    model = perturbed_flow(6, seed=7)
    z = np.random.default_rng(5).standard_normal(6)
    J = numerical_jacobian(lambda v: model.forward(v)[0], z)
    ld = model.forward(z)[1]
    assert abs(ld - np.linalg.slogdet(J)[1]) / abs(ld) < 1e-5


def test_change_of_variables_identity():
    model = perturbed_flow(8, seed=2)
    z = np.random.default_rng(6).standard_normal((20, 8))
    x, ld = model.forward(z)
    log_pz = -0.5 * np.sum(z * z, axis=1) - 4 * LOG_2PI
    assert np.max(np.abs(model.log_density(x) - (log_pz - ld))) < 1e-9


def test_internal_hamiltonian_endpoints():
    model = perturbed_flow(5, seed=1)
    z = np.random.default_rng(0).standard_normal((6, 5))
    np.testing.assert_allclose(model.internal_hamiltonian(0, z), 0.5 * np.sum(z * z, axis=1))
    x = model.forward(z)[0]
    np.testing.assert_allclose(model.internal_hamiltonian(model.n_layers, x),
                               -model.log_density(x) - 2.5 * LOG_2PI, atol=1e-10)


@pytest.mark.parametrize("layer", [0, 1, 2, 3, 4])
def test_internal_partition_function(layer):
    # importance sampling with a broad Gaussian proposal that is independent of the flow
    model = perturbed_flow(4, seed=3, scale=0.2)
    rng = np.random.default_rng(layer)
    sigma = 2.5
    n = 400_000
    y = sigma * rng.standard_normal((n, 4))
    log_q = -0.5 * np.sum(y * y, axis=1) / sigma**2 - 2 * LOG_2PI - 4 * math.log(sigma)
    w = np.exp(-model.internal_hamiltonian(layer, y) - log_q)
    assert abs(w.mean() / (2 * math.pi) ** 2 - 1) < 0.02


def test_sampling_prior_and_empty():
    model = perturbed_flow(6)
    rng = np.random.default_rng(0)
    z = model.sample(50_000, rng, upto=0)
    se = 1 / math.sqrt(len(z))
    assert np.all(np.abs(z.mean(axis=0)) < 5 * se)
    assert np.all(np.abs(z.var(axis=0) - 1) < 5 * math.sqrt(2) * se)
    assert model.sample(0, rng).shape == (0, 6)
    with pytest.raises(ValueError):
        model.sample(3, rng, upto=5)


def test_non_finite_input_rejected():
    model = perturbed_flow(4)
    with pytest.raises(NumericalError):
        model.forward(np.array([0.0, np.inf, 0.0, 0.0]))


def test_tape_mismatch():
    a, b = perturbed_flow(4), perturbed_flow(4, seed=1)
    tape = GradientTape()
    x, _ = a.forward(np.ones((2, 4)), tape=tape)
    with pytest.raises(InvalidStateError):
        backward(b, tape, np.ones_like(x), np.ones(2))
    a.mark_updated()
    with pytest.raises(InvalidStateError):
        backward(a, tape, np.ones_like(x), np.ones(2))
    with pytest.raises(InvalidStateError):
        a.forward(np.ones((2, 4)), tape=tape)


def test_linear_model_hand_gradients():
    # N=2, one layer transforming coordinate 1 from coordinate 0 through 1 hidden unit.
    # slope 1 and identity outputs make both nets affine:
    #   s1 = w1s * (w0s * z0 + c0s) + d1s   (likewise t1), x1 = z1 exp(s1) + t1
    # objective L = x1 + c * log_det = x1 + c * s1
    ws = dict(w0=0.7, c0=0.2, w1=-0.4, d1=0.1)
    wt = dict(w0=-0.3, c0=0.5, w1=0.9, d1=-0.2)

    def net(p):
        W0 = np.array([[p["w0"], 1.3]])  # second input column sees a masked (zero) coordinate
        W1 = np.array([[0.6], [p["w1"]]])  # first output row is masked
        return Mlp([W0, W1], [np.array([p["c0"]]), np.array([0.8, p["d1"]])], "identity", slope=1.0)

    layer = CouplingLayer(np.array([False, True]), net(ws), net(wt))
    model = FlowModel(2, [layer])
    z0, z1, c = 0.9, -1.1, 0.35
    tape = GradientTape()
    model.forward(np.array([[z0, z1]]), tape=tape)
    grads, g_in = backward(model, tape, np.array([[0.0, 1.0]]), np.array([c]))

    s1 = ws["w1"] * (ws["w0"] * z0 + ws["c0"]) + ws["d1"]
    dL_ds = z1 * math.exp(s1) + c
    dL_dt = 1.0

    def expected(p, outer):
        hidden = p["w0"] * z0 + p["c0"]
        return [np.array([[outer * p["w1"] * z0, 0.0]]), np.array([outer * p["w1"]]),
                np.array([[0.0], [outer * hidden]]), np.array([0.0, outer])]

    want = expected(ws, dL_ds) + expected(wt, dL_dt)
    for g, w in zip(grads, want):
        np.testing.assert_allclose(g, w, atol=1e-12)
    # dead paths (masked rows / zero inputs) get exactly zero
    assert grads[0][0, 1] == 0.0 and grads[2][0, 0] == 0.0 and grads[3][0] == 0.0
    t_prime = wt["w1"] * wt["w0"]
    s_prime = ws["w1"] * ws["w0"]
    np.testing.assert_allclose(g_in, [[z1 * math.exp(s1) * s_prime + t_prime + c * s_prime,
                                       math.exp(s1)]], atol=1e-12)
