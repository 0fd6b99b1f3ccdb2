import numpy as np
import pytest

from glassflow.core import DisorderRealization, draw_sk_disorder, shift_coupling


def pair_instance(j01, scale=1.0):
    J = np.array([[0.0, j01], [j01, 0.0]])
    return DisorderRealization(2, J, np.zeros(2), scale, 0)


@pytest.fixture
def sk8():
    return draw_sk_disorder(8, 1.0, seed=3)


@pytest.fixture
def sc8(sk8):
    return shift_coupling(sk8, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def perturb(model, scale=0.3, seed=100):
    """Add fan-in-scaled noise to every parameter so no layer is near the identity."""
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        fan_in = p.shape[1] if p.ndim == 2 else 1
        p += scale * rng.standard_normal(p.shape) / np.sqrt(fan_in)
    model.mark_updated()
    return model


def fd_gradient_error(model, loss_fn, n_probe=60, eps=1e-6, seed=0):
    """Worst relative error of analytic vs central-difference gradients over random entries.

    ``loss_fn(model) -> (loss, grads)``. Relative error uses the largest gradient
    magnitude of each parameter array as scale so near-zero entries do not blow up.
    """
    _, grads = loss_fn(model)
    params = model.parameters()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_probe):
        k = int(rng.integers(len(params)))
        p = params[k]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + eps
        model.mark_updated()
        up = loss_fn(model)[0]
        p[idx] = old - eps
        model.mark_updated()
        down = loss_fn(model)[0]
        p[idx] = old
        model.mark_updated()
        fd = (up - down) / (2 * eps)
        scale = max(np.max(np.abs(grads[k])), 1e-8)
        worst = max(worst, abs(fd - grads[k][idx]) / scale)
    return worst


ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
