"""Real NVP flow with masked affine coupling layers and a hand-written backward pass.

Batches are ``(B, N)`` float64 arrays. A coupling layer with active mask ``m``
(1 on the transformed set) maps

    u = y * (1 - m)
    s = m * s_net(u),  t = m * t_net(u)
    y_out = y * exp(s) + t,  log_det = sum(s)

so the networks only ever see the pass-through coordinates and their outputs
only touch the active ones. Gradients are produced by :func:`backward` from a
:class:`GradientTape` filled during a forward or inverse pass.
"""

import math

import numpy as np

from .errors import InvalidStateError, NumericalError

LEAKY_SLOPE = 0.01
FORMAT_VERSION = 1
LOG_2PI = math.log(2.0 * math.pi)


def _leaky(a, slope):
    return np.where(a > 0, a, slope * a)


class Mlp:
    """Dense network with leaky-rectifier hidden layers and a tanh/identity output."""

    def __init__(self, weights, biases, final_activation="identity", slope=LEAKY_SLOPE):
        if final_activation not in ("tanh", "identity"):
            raise ValueError(f"unknown final activation {final_activation!r}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix")
        for k, (W, b) in enumerate(zip(weights, biases)):
            if W.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: bias does not match weight rows")
            if k and W.shape[1] != weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input width does not chain")
        self.weights = [np.asarray(W, dtype=np.float64) for W in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.final_activation = final_activation
        self.slope = slope

    @classmethod
    def init(cls, layer_dims, final_activation, rng, slope=LEAKY_SLOPE):
        """Uniform(+-1/sqrt(fan_in)) weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims, layer_dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, final_activation, slope)

    @property
    def layer_dims(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def parameters(self):
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, u):
        """Returns ``(output, cache)``; the cache feeds :meth:`backward`."""
        acts = [u]
        pres = []
        h = u
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W.T + b
            pres.append(a)
            if k < last:
                h = _leaky(a, self.slope)
            elif self.final_activation == "tanh":
                h = np.tanh(a)
            else:
                h = a
            acts.append(h)
        return h, (acts, pres)

    def __call__(self, u):
        return self.forward(u)[0]

    def backward(self, cache, g_out):
        """Gradient w.r.t. the input and the parameters (in :meth:`parameters` order)."""
        acts, pres = cache
        grads = [None] * (2 * len(self.weights))
        g = g_out
        if self.final_activation == "tanh":
            g = g * (1.0 - acts[-1] ** 2)
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                g = g * np.where(pres[k] > 0, 1.0, self.slope)
            grads[2 * k] = g.T @ acts[k]
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.weights[k]
        return g, grads


class CouplingLayer:
    def __init__(self, active_mask, s_net, t_net):
        mask = np.asarray(active_mask, dtype=bool)
        if mask.all() or not mask.any():
            raise ValueError("active mask and its complement must both be nonempty")
        n = mask.shape[0]
        for net in (s_net, t_net):
            if net.layer_dims[0] != n or net.layer_dims[-1] != n:
                raise ValueError("coupling networks must map width N to width N")
        self.active_mask = mask
        self.s_net = s_net
        self.t_net = t_net
        self._m = mask.astype(np.float64)

    def parameters(self):
        return self.s_net.parameters() + self.t_net.parameters()

    def _nets(self, y):
        u = y * (1.0 - self._m)
        s_raw, s_cache = self.s_net.forward(u)
        t_raw, t_cache = self.t_net.forward(u)
        return self._m * s_raw, self._m * t_raw, s_cache, t_cache

    def forward(self, y):
        """Returns ``(y_out, log_det, cache)``."""
        s, t, s_cache, t_cache = self._nets(y)
        es = np.exp(s)
        y_out = y * es + t
        return y_out, s.sum(axis=-1), (y, es, s_cache, t_cache)

    def inverse(self, y_out):
        """Returns ``(y, log_det_of_inverse, cache)``; the networks are only evaluated."""
        s, t, s_cache, t_cache = self._nets(y_out)
        ems = np.exp(-s)
        y = (y_out - t) * ems
        return y, -s.sum(axis=-1), (y, ems, s_cache, t_cache)

    def backward_forward(self, cache, g_out, g_logdet):
        y, es, s_cache, t_cache = cache
        g_in = g_out * es
        g_s = self._m * (g_out * y * es + g_logdet[:, None])
        g_t = self._m * g_out
        return self._through_nets(g_in, g_s, g_t, s_cache, t_cache)

    def backward_inverse(self, cache, g_y, g_logdet):
        y, ems, s_cache, t_cache = cache
        g_in = g_y * ems
        g_s = -self._m * (g_y * y + g_logdet[:, None])
        g_t = -self._m * g_in
        return self._through_nets(g_in, g_s, g_t, s_cache, t_cache)

    def _through_nets(self, g_in, g_s, g_t, s_cache, t_cache):
        gu_s, grads_s = self.s_net.backward(s_cache, g_s)
        gu_t, grads_t = self.t_net.backward(t_cache, g_t)
        g_in = g_in + (gu_s + gu_t) * (1.0 - self._m)
        return g_in, grads_s + grads_t


class GradientTape:
    """Per-layer caches from one pass through a :class:`FlowModel`."""

    def __init__(self):
        self.model = None
        self.version = None
        self.direction = None
        self.records = []

    def _start(self, model, direction):
        if self.records:
            raise InvalidStateError("a tape records exactly one pass")
        self.model = model
        self.version = model.version
        self.direction = direction


class FlowModel:
    """Ordered affine coupling layers ``g_1 .. g_L``; ``G = g_L o ... o g_1``."""

    def __init__(self, n_spins, layers, seed=0, metadata=None):
        if any(layer.active_mask.shape[0] != n_spins for layer in layers):
            raise ValueError("every layer must act on N coordinates")
        self.n_spins = n_spins
        self.layers = list(layers)
        self.seed = seed
        self.metadata = dict(metadata or {})
        self.version = 0

    @property
    def n_layers(self):
        return len(self.layers)

    def parameters(self):
        """Every weight and bias array, in checkpoint order (views, not copies)."""
        out = []
        for layer in self.layers:
            out += layer.parameters()
        return out

    def mark_updated(self):
        """Call after mutating parameters in place; invalidates outstanding tapes."""
        self.version += 1

    def _check(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.n_spins:
            raise ValueError(f"expected {self.n_spins} coordinates, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise NumericalError("non-finite flow input")
        return y

    def forward(self, z, upto=None, tape=None):
        """Apply layers ``1..upto`` (default all). Returns ``(x, log_det)``."""
        z = self._check(z)
        single = z.ndim == 1
        y = np.atleast_2d(z)
        upto = self.n_layers if upto is None else upto
        if not 0 <= upto <= self.n_layers:
            raise ValueError(f"layer index must be in [0, {self.n_layers}]")
        if tape is not None:
            tape._start(self, "forward")
        total = np.zeros(y.shape[0])
        for k in range(upto):
            y, ld, cache = self.layers[k].forward(y)
            total = total + ld
            if tape is not None:
                tape.records.append((k, cache))
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(total)):
            raise NumericalError("flow forward pass produced non-finite values")
        return (y[0], total[0]) if single else (y, total)

    def inverse(self, x, upto=None, tape=None):
        """Invert layers ``upto..1`` (default all). Returns ``(z, log_det of the inverse)``."""
        x = self._check(x)
        single = x.ndim == 1
        y = np.atleast_2d(x)
        upto = self.n_layers if upto is None else upto
        if not 0 <= upto <= self.n_layers:
            raise ValueError(f"layer index must be in [0, {self.n_layers}]")
        if tape is not None:
            tape._start(self, "inverse")
        total = np.zeros(y.shape[0])
        for k in range(upto - 1, -1, -1):
            y, ld, cache = self.layers[k].inverse(y)
            total = total + ld
            if tape is not None:
                tape.records.append((k, cache))
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(total)):
            raise NumericalError("flow inverse pass produced non-finite values")
        return (y[0], total[0]) if single else (y, total)

    def log_density(self, x):
        """``ln p_G(x)`` under a standard-normal prior."""
        z, ld = self.inverse(x)
        return -0.5 * np.sum(z * z, axis=-1) - 0.5 * self.n_spins * LOG_2PI + ld

    def internal_hamiltonian(self, layer_index, z_ell):
        """Energy of the layer-``l`` variable: ``|G_l^-1(z)|^2 / 2 - ln|det dG_l^-1/dz|``."""
        z0, ld = self.inverse(z_ell, upto=layer_index)
        return 0.5 * np.sum(z0 * z0, axis=-1) - ld

    def sample(self, n, rng, upto=None):
        """Draw ``n`` prior samples and push them through layers ``1..upto``."""
        z = rng.standard_normal((n, self.n_spins))
        if n == 0:
            return z
        return self.forward(z, upto=upto)[0]


def backward(model, tape, g_out, g_logdet):
    """Backpropagate through a recorded pass.

    ``g_out`` is the gradient of the objective w.r.t. the pass output (B, N) and
    ``g_logdet`` w.r.t. the accumulated log-determinant (B,). Returns
    ``(param_grads, g_input)`` with ``param_grads`` aligned to
    ``model.parameters()``.
    """
    if tape.model is not model:
        raise InvalidStateError("tape was recorded on a different model")
    if tape.version != model.version:
        raise InvalidStateError("model parameters changed since the tape was recorded")
    g = np.atleast_2d(np.asarray(g_out, dtype=np.float64))
    g_ld = np.broadcast_to(np.asarray(g_logdet, dtype=np.float64), (g.shape[0],))
    per_layer = [None] * model.n_layers
    for k, cache in reversed(tape.records):
        layer = model.layers[k]
        if tape.direction == "forward":
            g, grads = layer.backward_forward(cache, g, g_ld)
        else:
            g, grads = layer.backward_inverse(cache, g, g_ld)
        per_layer[k] = grads
    out = []
    for k, layer in enumerate(model.layers):
        out += per_layer[k] if per_layer[k] is not None else [np.zeros_like(p) for p in layer.parameters()]
    return out, g


def make_masks(n_spins, n_layers, rng):
    """Bernoulli(1/2) masks on even layers, complements on odd layers."""
    masks = []
    for k in range(n_layers):
        if k % 2 == 0:
            while True:
                m = rng.random(n_spins) < 0.5
                if m.any() and not m.all():
                    break
        else:
            m = ~masks[-1]
        masks.append(m)
    return masks


def init_flow(n_spins, n_layers=4, seed=0, hidden_layers=3, width=None):
    """Fresh flow: random complementary masks, MLPs with ``hidden_layers`` hidden layers of ``width``."""
    if n_layers < 2 or n_layers % 2:
        raise ValueError("n_layers must be even and >= 2")
    if n_spins < 2:
        raise ValueError("need at least two coordinates")
    rng = np.random.default_rng(seed)
    width = n_spins if width is None else width
    dims = [n_spins] + [width] * hidden_layers + [n_spins]
    layers = []
    for mask in make_masks(n_spins, n_layers, rng):
        s_net = Mlp.init(dims, "tanh", rng)
        t_net = Mlp.init(dims, "identity", rng)
        layers.append(CouplingLayer(mask, s_net, t_net))
    return FlowModel(n_spins, layers, seed=seed)
