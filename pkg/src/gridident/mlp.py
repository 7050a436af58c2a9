"""MLP vector field with hand-rolled reverse-mode gradients.

The network maps normalized [x, u] to a normalized state derivative. The
one-step-ahead loss integrates the field over one sampling interval with
the configured scheme and is differentiated exactly through every solver
stage (discretize-then-differentiate); for dopri5 the accepted step sizes
are treated as constants in the backward pass. Parameters are the flat
list weights + biases; a frozen model is safe for concurrent reads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, SolverError
from .solvers import (
    DOPRI5_A,
    DOPRI5_B4,
    DOPRI5_B5,
    ERROR_ORDER,
    GROW_MAX,
    GROW_MIN,
    RK4_A,
    RK4_B,
    SAFETY,
    SolverConfig,
    _dopri5_error_norm,
)

ACTIVATIONS = ("relu", "sigmoid", "softplus")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "softplus":
        return np.logaddexp(0.0, z)
    raise ConfigError(f"unknown activation {name!r}")


def _activate_grad(name, z):
    """Derivative of the activation evaluated at the pre-activation z."""
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name in ("sigmoid", "softplus"):
        s = _sigmoid(z)
        if name == "softplus":
            return s
        return s * (1.0 - s)
    raise ConfigError(f"unknown activation {name!r}")


@dataclass
class MlpModel:
    weights: list          # [W_1 (L x (nx+nu)), W_2..W_H (L x L), W_o (nx x L)]
    biases: list           # [b_1..b_H (L), b_o (nx)]
    activation: str
    x_shift: np.ndarray
    x_scale: np.ndarray
    u_shift: np.ndarray
    u_scale: np.ndarray

    @property
    def n_x(self):
        return self.weights[-1].shape[0]

    @property
    def n_u(self):
        return self.weights[0].shape[1] - self.n_x

    @property
    def hidden_layers(self):
        return len(self.weights) - 1

    @property
    def width(self):
        return self.weights[0].shape[0]

    def parameters(self):
        return list(self.weights) + list(self.biases)

    def set_parameters(self, params):
        h = len(self.weights)
        self.weights = [np.asarray(p) for p in params[:h]]
        self.biases = [np.asarray(p) for p in params[h:]]

    def copy_parameters(self):
        return [p.copy() for p in self.parameters()]

    def normalize_x(self, x):
        return (x - self.x_shift) / self.x_scale

    def denormalize_x(self, xn):
        return xn * self.x_scale + self.x_shift

    def normalize_u(self, u):
        return (u - self.u_shift) / self.u_scale


def normalization_stats(states, inputs):
    """Per-dimension mean/std over the training split; zero-variance
    dimensions get scale 1 with a warning."""
    out = []
    for arr in (states, inputs):
        shift = arr.mean(axis=0)
        scale = arr.std(axis=0)
        dead = scale <= 0.0
        if np.any(dead):
            warnings.warn(
                f"{int(dead.sum())} constant dimension(s); clamping scale to 1",
                stacklevel=2,
            )
            scale = np.where(dead, 1.0, scale)
        out.append((shift, scale))
    return out


def init_model(hidden_layers, width, activation, seed, n_x, n_u,
               x_stats=None, u_stats=None):
    """Uniform fan-in initialization, zero biases."""
    if hidden_layers < 1 or width < 1:
        raise ConfigError("hidden_layers and width must be >= 1")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    dims = [n_x + n_u] + [width] * hidden_layers + [n_x]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    x_shift, x_scale = x_stats if x_stats is not None else (np.zeros(n_x), np.ones(n_x))
    u_shift, u_scale = u_stats if u_stats is not None else (np.zeros(n_u), np.ones(n_u))
    return MlpModel(
        weights=weights, biases=biases, activation=activation,
        x_shift=np.asarray(x_shift, float), x_scale=np.asarray(x_scale, float),
        u_shift=np.asarray(u_shift, float), u_scale=np.asarray(u_scale, float),
    )


# -- core network on normalized coordinates ---------------------------------

def core_forward(model, z):
    """Batched forward pass, z (B, nx+nu) -> (out (B, nx), cache)."""
    pres = []
    acts = [z]
    a = z
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        pre = a @ w.T + b
        pres.append(pre)
        a = _activate(model.activation, pre)
        acts.append(a)
    out = a @ model.weights[-1].T + model.biases[-1]
    return out, (pres, acts)


def core_vjp(model, cache, g):
    """Vector-Jacobian product of core_forward.

    g is the cotangent on the output (B, nx). Returns (dz, grads) where
    grads matches model.parameters() ordering.
    """
    pres, acts = cache
    n_layers = len(model.weights)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    w_grads[-1] = g.T @ acts[-1]
    b_grads[-1] = g.sum(axis=0)
    delta = g @ model.weights[-1]
    for i in range(n_layers - 2, -1, -1):
        delta = delta * _activate_grad(model.activation, pres[i])
        w_grads[i] = delta.T @ acts[i]
        b_grads[i] = delta.sum(axis=0)
        delta = delta @ model.weights[i]
    return delta, w_grads + b_grads


def _zero_grads(model):
    return [np.zeros_like(p) for p in model.parameters()]


def _accumulate(total, grads):
    for t, g in zip(total, grads):
        t += g


def mlp_forward(model, x, u):
    """Physical-coordinate vector field: denormalized dx/dt for one sample."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    if x.shape != (model.n_x,) or u.shape != (model.n_u,):
        raise ConfigError(
            f"expected shapes ({model.n_x},)/({model.n_u},), got {x.shape}/{u.shape}"
        )
    z = np.concatenate([model.normalize_x(x), model.normalize_u(u)])
    out, _ = core_forward(model, z[None, :])
    return out[0] * model.x_scale


# -- differentiable one-interval rollout -------------------------------------

def _field_forward(model, xn, un):
    """Normalized batched field: dxn/dt = core([xn, un])."""
    z = np.concatenate([xn, un], axis=1)
    return core_forward(model, z)


def _rk_step_forward(model, xn, un, h, a, b):
    """One explicit RK step of the normalized field; caches every stage."""
    ks, caches = [], []
    for i in range(len(b)):
        zi = xn
        for j, aij in enumerate(a[i]):
            if aij != 0.0:
                zi = zi + h * aij * ks[j]
        fi, cache = _field_forward(model, zi, un)
        ks.append(fi)
        caches.append(cache)
    x1 = xn
    for bi, ki in zip(b, ks):
        if bi != 0.0:
            x1 = x1 + h * bi * ki
    return x1, ks, caches


def _rk_step_backward(model, h, a, b, caches, gbar, grad_total):
    """Adjoint of _rk_step_forward for cotangent gbar on the step output.

    Returns the cotangent on the step input; parameter gradients are
    accumulated into grad_total.
    """
    n_x = model.n_x
    s = len(b)
    w = [None] * s
    gx0 = gbar.copy()
    for i in range(s - 1, -1, -1):
        vi = h * b[i] * gbar
        for m in range(i + 1, s):
            if a[m][i] != 0.0 and w[m] is not None:
                vi = vi + h * a[m][i] * w[m]
        if not np.any(vi):
            w[i] = None
            continue
        dz, grads = core_vjp(model, caches[i], vi)
        _accumulate(grad_total, grads)
        w[i] = dz[:, :n_x]
        gx0 += w[i]
    return gx0


def _interval_forward(model, xn0, un, cfg):
    """Integrate the normalized field over one sampling interval of length
    cfg.fixed_step, recording everything the backward pass needs."""
    h_total = cfg.fixed_step
    records = []
    if cfg.scheme == "euler":
        x1, ks, caches = _rk_step_forward(model, xn0, un, h_total, ((),), (1.0,))
        _check_batch(x1)
        records.append((h_total, ((),), (1.0,), caches))
        return x1, records
    if cfg.scheme == "rk4":
        x1, ks, caches = _rk_step_forward(model, xn0, un, h_total, RK4_A, RK4_B)
        _check_batch(x1)
        records.append((h_total, RK4_A, RK4_B, caches))
        return x1, records
    # dopri5: adapt jointly over the batch; accepted h values are recorded
    # and treated as constants by the backward pass.
    t = 0.0
    h = h_total / 10.0
    x = xn0
    steps = 0
    while t < h_total - 1e-14:
        if steps >= cfg.max_steps:
            raise SolverError(f"dopri5 training step budget exceeded ({cfg.max_steps})")
        h = min(h, h_total - t)
        x5, ks, caches = _rk_step_forward(model, x, un, h, DOPRI5_A, DOPRI5_B5)
        _check_batch(x5)
        err = np.zeros_like(x)
        for b5, b4, ki in zip(DOPRI5_B5, DOPRI5_B4, ks):
            err = err + h * (b5 - b4) * ki
        enorm = _dopri5_error_norm(err, x, x5, cfg.rtol, cfg.atol)
        steps += 1
        if enorm <= 1.0:
            records.append((h, DOPRI5_A, DOPRI5_B5, caches))
            t += h
            x = x5
        factor = GROW_MAX if enorm == 0.0 else SAFETY * enorm ** (-1.0 / ERROR_ORDER)
        h = h * min(GROW_MAX, max(GROW_MIN, factor))
    return x, records


def _check_batch(x):
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x).all(axis=1))[0][0])
        raise SolverError(f"non-finite state in training rollout, sample {bad}")


def predict_one_step(model, x0, u, cfg):
    """Normalized one-interval prediction for a batch of transitions."""
    xn0 = model.normalize_x(x0)
    un = model.normalize_u(u)
    x1n, _ = _interval_forward(model, xn0, un, cfg)
    return x1n


def one_step_loss(model, x0, u, x1, cfg):
    """Forward-only evaluation of the one-step-ahead loss (Adam-free path)."""
    r = predict_one_step(model, x0, u, cfg) - model.normalize_x(x1)
    return float(np.sum(r * r) / r.shape[0])


def loss_and_gradient(model, x0, u, x1, cfg):
    """One-step-ahead MSE in normalized coordinates and its exact gradient
    with respect to all parameters."""
    x0 = np.atleast_2d(np.asarray(x0, float))
    u = np.atleast_2d(np.asarray(u, float))
    x1 = np.atleast_2d(np.asarray(x1, float))
    if x0.shape[0] == 0:
        raise ConfigError("batch must be nonempty")
    xn0 = model.normalize_x(x0)
    un = model.normalize_u(u)
    xn1 = model.normalize_x(x1)
    pred, records = _interval_forward(model, xn0, un, cfg)
    r = pred - xn1
    batch = r.shape[0]
    loss = float(np.sum(r * r) / batch)
    if not np.isfinite(loss):
        bad = int(np.argwhere(~np.isfinite(r).all(axis=1))[0][0])
        raise SolverError(f"NaN loss at sample {bad}")
    gbar = (2.0 / batch) * r
    grads = _zero_grads(model)
    for h, a, b, caches in reversed(records):
        gbar = _rk_step_backward(model, h, a, b, caches, gbar, grads)
    return loss, grads


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr):
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr,
    )


def adam_step(state, params, grads):
    """Bias-corrected Adam update; mutates state, returns new parameters."""
    state.step += 1
    t = state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / (1 - state.beta1 ** t)
        v_hat = state.v[i] / (1 - state.beta2 ** t)
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# -- checkpoint I/O -----------------------------------------------------------

def save_checkpoint(model, cfg, path):
    doc = {
        "format_version": 1,
        "activation": model.activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "x_shift": model.x_shift.tolist(),
        "x_scale": model.x_scale.tolist(),
        "u_shift": model.u_shift.tolist(),
        "u_scale": model.u_scale.tolist(),
        "solver": vars(cfg),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise ConfigError(f"{path}: unsupported checkpoint version")
    model = MlpModel(
        weights=[np.array(w) for w in doc["weights"]],
        biases=[np.array(b) for b in doc["biases"]],
        activation=doc["activation"],
        x_shift=np.array(doc["x_shift"]),
        x_scale=np.array(doc["x_scale"]),
        u_shift=np.array(doc["u_shift"]),
        u_scale=np.array(doc["u_scale"]),
    )
    cfg = SolverConfig(**doc["solver"])
    return model, cfg
