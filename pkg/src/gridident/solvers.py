"""Explicit ODE integrators: fixed-step Euler/RK4 and adaptive Dormand-Prince 5(4).

All schemes are deterministic and purely functional over caller-supplied
state, so concurrent solves of independent trajectories are safe.
``simulate_piecewise`` steps a controlled system through a grid of sample
times with zero-order-hold inputs, which is the only sampling pattern the
rest of the package needs (no dense output).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SolverError

SCHEMES = ("euler", "rk4", "dopri5")

# Classical 4-stage Runge-Kutta tableau.
RK4_A = (
    (),
    (0.5,),
    (0.0, 0.5),
    (0.0, 0.0, 1.0),
)
RK4_B = (1 / 6, 1 / 3, 1 / 3, 1 / 6)
RK4_C = (0.0, 0.5, 0.5, 1.0)

# Dormand-Prince 5(4) embedded pair.
DOPRI5_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
DOPRI5_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
DOPRI5_B4 = (
    5179 / 57600,
    0.0,
    7571 / 16695,
    393 / 640,
    -92097 / 339200,
    187 / 2100,
    1 / 40,
)
DOPRI5_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)

# Step-size controller constants (fixed for reproducibility).
SAFETY = 0.9
GROW_MIN = 0.2
GROW_MAX = 5.0
ERROR_ORDER = 5  # exponent 1/5 in the classical controller


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "rk4"
    fixed_step: float = 0.01
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.fixed_step <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("fixed_step, rtol and atol must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")


@dataclass
class IvpSolution:
    end_state: np.ndarray
    step_count: int
    rejected_steps: int = 0
    # (t, h, scaled error) per accepted dopri5 step; diagnostic only
    step_records: list = field(default_factory=list)


def _check_finite(k, step_index):
    if not np.all(np.isfinite(k)):
        raise SolverError(f"non-finite field output at step {step_index}")


def _rk_fixed_step(field_fn, t, x, h, a, b, c):
    ks = []
    for i in range(len(b)):
        xi = x
        for j, aij in enumerate(a[i]):
            if aij != 0.0:
                xi = xi + h * aij * ks[j]
        ks.append(field_fn(t + c[i] * h, xi))
    out = x
    for bi, ki in zip(b, ks):
        out = out + h * bi * ki
    return out, ks


def _dopri5_error_norm(err, x0, x1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(x0), np.abs(x1))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def solve_interval(field_fn, t_s, t_e, x0, cfg):
    """Integrate dx/dt = field_fn(t, x) from t_s to t_e.

    For euler/rk4 the interval must be an integer multiple of
    cfg.fixed_step. dopri5 adapts its step with the standard
    error-ratio^(1/5) controller (safety 0.9, growth clamp [0.2, 5]).
    """
    if t_e <= t_s:
        raise ConfigError("t_e must be greater than t_s")
    x = np.asarray(x0, dtype=float)
    if cfg.scheme in ("euler", "rk4"):
        span = t_e - t_s
        n = int(round(span / cfg.fixed_step))
        if n < 1 or abs(n * cfg.fixed_step - span) > 1e-9 * max(1.0, span):
            raise ConfigError(
                f"interval {span} is not an integer multiple of fixed_step {cfg.fixed_step}"
            )
        if n > cfg.max_steps:
            raise SolverError(f"{n} fixed steps exceed max_steps {cfg.max_steps}")
        h = cfg.fixed_step
        for k in range(n):
            t = t_s + k * h
            if cfg.scheme == "euler":
                f = field_fn(t, x)
                _check_finite(f, k)
                x = x + h * f
            else:
                x, ks = _rk_fixed_step(field_fn, t, x, h, RK4_A, RK4_B, RK4_C)
                _check_finite(x, k)
        return IvpSolution(end_state=x, step_count=n)

    # dopri5
    t = t_s
    h = (t_e - t_s) / 10.0
    accepted = 0
    rejected = 0
    records = []
    while t < t_e - 1e-14 * max(1.0, abs(t_e)):
        if accepted + rejected >= cfg.max_steps:
            raise SolverError(
                f"dopri5 exceeded max_steps={cfg.max_steps} at t={t:.6g}"
            )
        h = min(h, t_e - t)
        x5, ks = _rk_fixed_step(field_fn, t, x, h, DOPRI5_A, DOPRI5_B5, DOPRI5_C)
        _check_finite(x5, accepted + rejected)
        err = np.zeros_like(x)
        for b5, b4, ki in zip(DOPRI5_B5, DOPRI5_B4, ks):
            err = err + h * (b5 - b4) * ki
        enorm = _dopri5_error_norm(err, x, x5, cfg.rtol, cfg.atol)
        if enorm <= 1.0:
            t = t + h
            x = x5
            accepted += 1
            records.append((t, h, enorm))
        else:
            rejected += 1
        factor = GROW_MAX if enorm == 0.0 else SAFETY * enorm ** (-1.0 / ERROR_ORDER)
        h = h * min(GROW_MAX, max(GROW_MIN, factor))
    return IvpSolution(
        end_state=x, step_count=accepted, rejected_steps=rejected, step_records=records
    )


def simulate_piecewise(field_fn, x0, times, inputs, cfg):
    """Sampled closed-loop simulation with zero-order-hold inputs.

    ``field_fn(t, x, u)`` is evaluated with u frozen at inputs[k] over
    [times[k], times[k+1]]. Returns the (K+1, n) array of states at every
    sample time, starting with x0.
    """
    times = np.asarray(times, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if inputs.shape[0] != times.shape[0]:
        raise ConfigError("times and inputs must have matching length")
    dts = np.diff(times)
    if np.any(dts <= 0):
        raise ConfigError("times must be strictly increasing")
    x = np.asarray(x0, dtype=float)
    out = np.empty((len(times), x.shape[0]))
    out[0] = x
    for k in range(len(times) - 1):
        u_k = inputs[k]
        sol = solve_interval(
            lambda t, xx: field_fn(t, xx, u_k), times[k], times[k + 1], x, cfg
        )
        x = sol.end_state
        out[k + 1] = x
    return out
