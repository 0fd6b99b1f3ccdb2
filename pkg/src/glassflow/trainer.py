"""Reverse-KL (free energy) and forward-KL (likelihood) training of a flow."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import grad_hamiltonian_density, hamiltonian_density
from .errors import TrainingDivergence
from .flow import LOG_2PI, GradientTape, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    loss_kind: str = "forward"
    learning_rate: float = 1e-4
    batch_size: int = 50
    n_updates: int = 250_000
    beta: float = 1.0
    symmetrize: bool = False
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = None
    checkpoint_every: int = 1000
    eval_batch: int = 10_000

    def __post_init__(self):
        if self.loss_kind not in ("forward", "reverse"):
            raise ValueError(f"loss_kind must be 'forward' or 'reverse', got {self.loss_kind!r}")
        if self.symmetrize and self.loss_kind != "reverse":
            raise ValueError("symmetrize applies to the reverse loss only")
        for name in ("learning_rate", "beta", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "checkpoint_every", "eval_batch"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_updates < 0:
            raise ValueError("n_updates must be >= 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive when given")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**data)


def reverse_kl_terms(model, sc, beta, z, symmetrize=False):
    """Per-sample ``beta H_beta(G(z)) + ln p_G(G(z))`` and the pieces needed for gradients.

    The mean is ``KL(p_G || p) - ln Z_x``, so it is bounded below by ``beta F_x``.
    """
    n = model.n_spins
    fwd = GradientTape()
    x, ld_f = model.forward(z, tape=fwd)
    log_p = -0.5 * np.sum(z * z, axis=1) - 0.5 * n * LOG_2PI - ld_f
    ctx = {"x": x, "ld_f": ld_f, "fwd": fwd}
    if symmetrize:
        inv = GradientTape()
        z_m, ld_i = model.inverse(-x, tape=inv)
        log_p_m = -0.5 * np.sum(z_m * z_m, axis=1) - 0.5 * n * LOG_2PI + ld_i
        log_p_sym = np.logaddexp(log_p, log_p_m) - math.log(2.0)
        ctx.update(inv=inv, z_m=z_m, w=np.exp(log_p - math.log(2.0) - log_p_sym))
        log_p = log_p_sym
    terms = beta * hamiltonian_density(x, sc, beta) + log_p
    return terms, ctx


def reverse_kl_loss(model, sc, beta, z, symmetrize=False):
    """Batch estimate of ``E_z[beta H_beta(G(z)) - H_G(G(z))]`` and its parameter gradients.

    With ``symmetrize`` the flow density is replaced by ``(p_G(x) + p_G(-x)) / 2``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    terms, ctx = reverse_kl_terms(model, sc, beta, z, symmetrize)
    loss = float(terms.mean())
    if not math.isfinite(loss):
        raise TrainingDivergence("reverse loss is not finite")
    B = z.shape[0]
    g_x = beta * grad_hamiltonian_density(ctx["x"], sc, beta) / B
    if symmetrize:
        w = ctx["w"]
        g_inv, g_xm = backward(model, ctx["inv"], -(1.0 - w)[:, None] * ctx["z_m"] / B, (1.0 - w) / B)
        g_x = g_x - g_xm
        g_fwd, _ = backward(model, ctx["fwd"], g_x, -w / B)
        grads = [a + b for a, b in zip(g_fwd, g_inv)]
    else:
        grads, _ = backward(model, ctx["fwd"], g_x, -np.ones(B) / B)
    return loss, grads


def forward_kl_terms(model, x):
    """Per-sample negative log-likelihood ``-ln p_G(x)``."""
    return -model.log_density(x)


def forward_kl_loss(model, x):
    """Mean negative log-likelihood of the minibatch and its parameter gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("minibatch must be nonempty")
    tape = GradientTape()
    z, ld = model.inverse(x, tape=tape)
    B = x.shape[0]
    loss = float(np.mean(0.5 * np.sum(z * z, axis=1) - ld) + 0.5 * model.n_spins * LOG_2PI)
    if not math.isfinite(loss):
        raise TrainingDivergence("forward loss is not finite")
    grads, _ = backward(model, tape, z / B, -np.ones(B) / B)
    return loss, grads


class Adam:
    """Bias-corrected Adam acting in place on a list of arrays."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter/gradient lists do not match optimizer state")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError("gradient shape does not match parameter")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass
class LossTrace:
    losses: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (update, eval_loss, eval_se, wall_seconds)

    def __len__(self):
        return len(self.losses)

    def to_csv(self):
        rows = ["update_index,loss"]
        rows += [f"{k},{v!r}" for k, v in enumerate(self.losses, start=1)]
        return "\n".join(rows) + "\n"

    def snapshots_csv(self):
        rows = ["update_index,eval_loss,eval_se"]
        rows += [f"{k},{v!r},{se!r}" for k, v, se, _ in self.snapshots]
        return "\n".join(rows) + "\n"


def evaluate(model, cfg, sc, data, rng):
    """Loss mean and standard error over a large evaluation batch."""
    if cfg.loss_kind == "reverse":
        z = rng.standard_normal((cfg.eval_batch, model.n_spins))
        terms, _ = reverse_kl_terms(model, sc, cfg.beta, z, cfg.symmetrize)
    else:
        terms = forward_kl_terms(model, data[: cfg.eval_batch])
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(len(terms)))


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads


def train(model, cfg, sc=None, data=None, on_checkpoint=None):
    """Run ``cfg.n_updates`` Adam steps on ``model`` in place; returns ``(model, trace)``.

    Reverse mode draws fresh prior batches and needs ``sc``. Forward mode cycles
    through ``data`` (an ``(M, N)`` array of continuous samples), reshuffled each
    epoch. ``on_checkpoint(model, update_index)`` is called every
    ``cfg.checkpoint_every`` updates and after the last one.
    """
    if cfg.loss_kind == "forward":
        if data is None or len(data) == 0:
            raise ValueError("forward training needs a dataset")
        data = np.asarray(data, dtype=np.float64)
        if data.shape[1] != model.n_spins:
            raise ValueError("dataset width does not match the model")
    elif sc is None:
        raise ValueError("reverse training needs the target coupling")
    if sc is not None and sc.n_spins != model.n_spins:
        raise ValueError("coupling size does not match the model")

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    batch_rng, shuffle_rng, eval_rng = (np.random.default_rng(s) for s in seeds)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = LossTrace()
    t0 = time.perf_counter()
    order = None
    cursor = 0
    for update in range(1, cfg.n_updates + 1):
        if cfg.loss_kind == "reverse":
            z = batch_rng.standard_normal((cfg.batch_size, model.n_spins))
            try:
                loss, grads = reverse_kl_loss(model, sc, cfg.beta, z, cfg.symmetrize)
            except (TrainingDivergence, FloatingPointError, ArithmeticError) as exc:
                raise TrainingDivergence(f"update {update}: {exc}", update) from exc
        else:
            if order is None or cursor + cfg.batch_size > len(data):
                order = shuffle_rng.permutation(len(data))
                cursor = 0
            idx = order[cursor:cursor + cfg.batch_size]
            cursor += cfg.batch_size
            try:
                loss, grads = forward_kl_loss(model, data[idx])
            except (TrainingDivergence, ArithmeticError) as exc:
                raise TrainingDivergence(f"update {update}: {exc}", update) from exc
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergence(f"update {update}: non-finite gradient", update)
        if cfg.clip_norm is not None:
            grads = _clip(grads, cfg.clip_norm)
        opt.step(params, grads)
        model.mark_updated()
        trace.losses.append(loss)
        if update % cfg.checkpoint_every == 0 or update == cfg.n_updates:
            mean, se = evaluate(model, cfg, sc, data, eval_rng)
            trace.snapshots.append((update, mean, se, time.perf_counter() - t0))
            log.info("update %d: loss %.6g (eval %.6g +- %.2g)", update, loss, mean, se)
            if on_checkpoint is not None:
                on_checkpoint(model, update)
    model.metadata.update(
        {"loss_kind": cfg.loss_kind, "n_updates": cfg.n_updates, "beta": cfg.beta}
    )
    return model, trace


def monte_carlo_mean(values):
    values = np.asarray(values, dtype=np.float64)
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else float("inf")
    return float(values.mean()), se


def symmetrized_log_density(model, x):
    """``ln((p_G(x) + p_G(-x)) / 2)``."""
    return logsumexp([model.log_density(x), model.log_density(-x)], axis=0) - math.log(2.0)
