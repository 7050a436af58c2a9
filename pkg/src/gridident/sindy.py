"""SINDy identification with sequentially thresholded ridge regression.

The candidate library is the physics-informed basis for the droop system:
a constant, per-node {wd_i, vd_i, pm_i, v_i, v_i^2}, and per node pair
i < j the coupling terms v_i v_j sin(delta_ij) and v_i v_j cos(delta_ij),
with delta_ij = delta_1j - delta_1i (equal to delta_i - delta_j)
reconstructed from the stored angle-difference states. For N nodes the
library holds M = 5N + N(N-1) + 1 functions (N = 4 -> 33).

State columns are fitted independently, so the STLSQ subproblems may run
in any order (or concurrently) with identical results.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import grid
from .errors import ConfigError, DataError
from .solvers import simulate_piecewise

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Candidate:
    kind: str        # const | omega_d | v_d | p_m | v | v2 | pair_sin | pair_cos
    i: int = 0       # node (1-based) or first node of the pair
    j: int = 0       # second node of the pair (pair_* only)

    @property
    def label(self):
        if self.kind == "const":
            return "1"
        if self.kind == "omega_d":
            return f"wd_{self.i}"
        if self.kind == "v_d":
            return f"vd_{self.i}"
        if self.kind == "p_m":
            return f"pm_{self.i}"
        if self.kind == "v":
            return f"v_{self.i}"
        if self.kind == "v2":
            return f"v_{self.i}^2"
        trig = "sin" if self.kind == "pair_sin" else "cos"
        return f"v_{self.i}*v_{self.j}*{trig}(d_{self.i}{self.j})"


@dataclass(frozen=True)
class CandidateLibrary:
    n_nodes: int
    descriptors: tuple

    @classmethod
    def for_nodes(cls, n):
        desc = [Candidate("const")]
        for i in range(1, n + 1):
            desc += [
                Candidate("omega_d", i),
                Candidate("v_d", i),
                Candidate("p_m", i),
                Candidate("v", i),
                Candidate("v2", i),
            ]
        for i in range(1, n + 1):
            for j in range(i + 1, n + 1):
                desc += [Candidate("pair_sin", i, j), Candidate("pair_cos", i, j)]
        return cls(n_nodes=n, descriptors=tuple(desc))

    def __len__(self):
        return len(self.descriptors)

    def index(self, cand):
        return self.descriptors.index(cand)

    def labels(self):
        return [c.label for c in self.descriptors]


def build_design_matrix(lib, states, inputs):
    """Evaluate every candidate on K samples; columns follow library order."""
    states = np.atleast_2d(np.asarray(states, float))
    inputs = np.atleast_2d(np.asarray(inputs, float))
    n = lib.n_nodes
    k = states.shape[0]
    if states.shape[1] != 3 * n - 1 or inputs.shape[1] != 2 * n or inputs.shape[0] != k:
        raise ConfigError("states/inputs shapes inconsistent with the library")
    # d1[:, i-1] = delta_1i with delta_11 = 0
    d1 = np.concatenate([np.zeros((k, 1)), states[:, : n - 1]], axis=1)
    pm = states[:, n - 1 : 2 * n - 1]
    v = states[:, 2 * n - 1 :]
    vd = inputs[:, :n]
    wd = inputs[:, n:]
    cols = []
    for c in lib.descriptors:
        if c.kind == "const":
            cols.append(np.ones(k))
        elif c.kind == "omega_d":
            cols.append(wd[:, c.i - 1])
        elif c.kind == "v_d":
            cols.append(vd[:, c.i - 1])
        elif c.kind == "p_m":
            cols.append(pm[:, c.i - 1])
        elif c.kind == "v":
            cols.append(v[:, c.i - 1])
        elif c.kind == "v2":
            cols.append(v[:, c.i - 1] ** 2)
        else:
            # delta_ij = delta_i - delta_j = delta_1j - delta_1i
            dij = d1[:, c.j - 1] - d1[:, c.i - 1]
            prod = v[:, c.i - 1] * v[:, c.j - 1]
            cols.append(prod * (np.sin(dij) if c.kind == "pair_sin" else np.cos(dij)))
    return np.column_stack(cols)


@dataclass
class SindyModel:
    library: CandidateLibrary
    theta: np.ndarray      # (M, N_x)
    lam: float
    threshold: float


def estimate_derivatives(states, dt):
    """Second-order finite differences: central in the interior, one-sided
    at both ends. Rows at input-step instants must be dropped by the caller
    before regression (the derivative jumps across the hold boundary)."""
    states = np.asarray(states, float)
    if states.shape[0] < 3:
        raise DataError("need at least 3 samples for second-order differences")
    d = np.empty_like(states)
    d[1:-1] = (states[2:] - states[:-2]) / (2 * dt)
    d[0] = (-3 * states[0] + 4 * states[1] - states[2]) / (2 * dt)
    d[-1] = (3 * states[-1] - 4 * states[-2] + states[-3]) / (2 * dt)
    return d


def _ridge_solve(xi, y, lam):
    """Ridge solution with standardized regressors.

    The candidate functions live on wildly different scales (a constant, raw
    voltages near 1, frequency setpoints near 100 pi), and several are nearly
    collinear on well-regulated trajectories (1, v, v^2, the cos couplings).
    Penalizing raw coefficients makes the fit hostage to that scaling, so the
    columns are centered and scaled to unit variance first and the penalty
    applies to the standardized coefficients. The fit always carries a free
    intercept; it is reported through a constant column when one is active
    and discarded otherwise. The solve itself goes through lstsq on the
    ridge-augmented system, which stays finite for lam = 0 on full-rank
    problems. Results are returned in the original coordinates.
    """
    if lam < 0:
        raise ConfigError("ridge weight lambda must be >= 0")
    const_cols = np.flatnonzero(np.ptp(xi, axis=0) == 0.0)
    var_cols = np.setdiff1d(np.arange(xi.shape[1]), const_cols)
    c = xi[:, var_cols]
    mu = c.mean(axis=0)
    sd = c.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    cn = (c - mu) / sd
    y_mean = y.mean()
    m = cn.shape[1]
    a = np.vstack([cn, np.sqrt(lam) * np.eye(m)])
    rhs = np.concatenate([y - y_mean, np.zeros(m)])
    w, _, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
    if lam == 0 and rank < m:
        raise ConfigError(
            "singular least-squares system; use a ridge weight lambda > 0"
        )
    coef = np.zeros(xi.shape[1])
    coef[var_cols] = w / sd
    if const_cols.size:
        base = xi[0, const_cols]
        live = base != 0.0
        if live.any():
            intercept = y_mean - mu @ (w / sd)
            # split a duplicated constant column evenly; reconstructed fit
            # is unchanged
            share = intercept / live.sum()
            coef[const_cols[live]] = share / base[live]
    return coef


def stlsq_fit(xi, xdot, lam, threshold, max_iter=10000):
    """Sequentially thresholded ridge least squares, one independent
    subproblem per state column. All-zero columns are allowed."""
    xi = np.asarray(xi, float)
    xdot = np.atleast_2d(np.asarray(xdot, float))
    k, m = xi.shape
    if k <= m:
        warnings.warn(f"only {k} samples for {m} candidates; fit may be degenerate",
                      stacklevel=2)
    theta = np.zeros((m, xdot.shape[1]))
    for col in range(xdot.shape[1]):
        active = np.arange(m)
        coef = np.zeros(m)
        for _ in range(max_iter):
            sol = _ridge_solve(xi[:, active], xdot[:, col], lam)
            keep = np.abs(sol) >= threshold
            coef = np.zeros(m)
            coef[active] = np.where(keep, sol, 0.0)
            if keep.all():
                break
            active = active[keep]
            if active.size == 0:
                break
        theta[:, col] = coef
    return theta


def fit_sindy(trajectories, lam, threshold, max_iter=10000,
              exact_derivatives=False, net=None, step_indices=None):
    """End-to-end fit on one or more trajectories.

    With exact_derivatives=True the true rhs supplies the targets (oracle
    mode, bypassing finite differences); otherwise second-order differences
    are used and rows at the input-step instants are excluded.
    """
    lib = CandidateLibrary.for_nodes((trajectories[0].inputs.shape[1]) // 2)
    xis, xdots = [], []
    for traj in trajectories:
        dt = traj.times[1] - traj.times[0]
        if exact_derivatives:
            if net is None:
                raise ConfigError("exact derivatives need the reference network")
            xdot = np.array([grid.rhs(x, u, net) for x, u in zip(traj.states, traj.inputs)])
            mask = np.ones(len(traj.times), dtype=bool)
        else:
            xdot = estimate_derivatives(traj.states, dt)
            mask = np.ones(len(traj.times), dtype=bool)
            drop = step_indices
            if drop is None:
                drop = _detect_step_rows(traj.inputs)
            mask[list(drop)] = False
        xis.append(build_design_matrix(lib, traj.states[mask], traj.inputs[mask]))
        xdots.append(xdot[mask])
    theta = stlsq_fit(np.concatenate(xis), np.concatenate(xdots), lam, threshold, max_iter)
    return SindyModel(library=lib, theta=theta, lam=lam, threshold=threshold)


def _detect_step_rows(inputs):
    """Rows where the zero-order-hold input changes (plus the first row)."""
    jumps = np.any(np.diff(inputs, axis=0) != 0.0, axis=1)
    return [0] + [int(i) + 1 for i in np.flatnonzero(jumps)]


def sindy_field(model):
    lib = model.library
    theta = model.theta

    def field(t, x, u):
        row = build_design_matrix(lib, x[None, :], u[None, :])
        return (row @ theta)[0]

    return field


def simulate_sindy(model, x0, times, inputs, cfg):
    """Closed-loop rollout of dx/dt = Xi(x, u) Theta."""
    return simulate_piecewise(sindy_field(model), x0, times, inputs, cfg)


def ground_truth_theta(net):
    """Exact coefficients of the reference dynamics in library coordinates;
    the test oracle for recovery checks."""
    n = net.node_count
    lib = CandidateLibrary.for_nodes(n)
    nx = 3 * n - 1
    theta = np.zeros((len(lib), nx))

    def idx(kind, i=0, j=0):
        return lib.index(Candidate(kind, i, j))

    units = net.units
    # angle-difference rows: d/dt delta_1i, state column i-2 for i = 2..N
    for i in range(2, n + 1):
        col = i - 2
        u1, ui = units[0], units[i - 1]
        theta[idx("const"), col] += u1.k_p * u1.p_d - ui.k_p * ui.p_d
        theta[idx("omega_d", 1), col] += 1.0
        theta[idx("omega_d", i), col] += -1.0
        theta[idx("p_m", 1), col] += -u1.k_p
        theta[idx("p_m", i), col] += ui.k_p
    # power filter rows, state column n-2+i for node i
    for i in range(1, n + 1):
        col = n - 2 + i
        un = units[i - 1]
        theta[idx("p_m", i), col] += -1.0 / un.tau_p
        theta[idx("v2", i), col] += net.loads[i - 1].g_load / un.tau_p
        for jn in net.neighbors(i):
            key = (i, jn) if i < jn else (jn, i)
            line = net.lines[key]
            theta[idx("v2", i), col] += (line.g + line.g_shunt) / un.tau_p
            sign = 1.0 if i < jn else -1.0
            theta[idx("pair_cos", *key), col] += -line.g / un.tau_p
            theta[idx("pair_sin", *key), col] += -sign * line.b / un.tau_p
    # voltage rows, state column 2n-2+i for node i
    for i in range(1, n + 1):
        col = 2 * n - 2 + i
        un = units[i - 1]
        theta[idx("const"), col] += un.k_q * un.q_d / un.tau_q
        theta[idx("v_d", i), col] += 1.0 / un.tau_q
        theta[idx("v", i), col] += -1.0 / un.tau_q
        theta[idx("v2", i), col] += un.k_q * net.loads[i - 1].b_load / un.tau_q
        for jn in net.neighbors(i):
            key = (i, jn) if i < jn else (jn, i)
            line = net.lines[key]
            theta[idx("v2", i), col] += un.k_q * (line.b + line.b_shunt) / un.tau_q
            sign = 1.0 if i < jn else -1.0
            theta[idx("pair_cos", *key), col] += -un.k_q * line.b / un.tau_q
            theta[idx("pair_sin", *key), col] += sign * un.k_q * line.g / un.tau_q
    return theta


def save_sindy_model(model, path):
    """One CSV row per (library descriptor, state, coefficient)."""
    n = model.library.n_nodes
    state_names = (
        [f"delta_1{i}" for i in range(2, n + 1)]
        + [f"pm_{i}" for i in range(1, n + 1)]
        + [f"v_{i}" for i in range(1, n + 1)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate", "state", "coefficient"])
        writer.writerow(["#lambda", "", f"{model.lam:.17g}"])
        writer.writerow(["#threshold", "", f"{model.threshold:.17g}"])
        for m, cand in enumerate(model.library.descriptors):
            for s, sname in enumerate(state_names):
                writer.writerow([cand.label, sname, f"{model.theta[m, s]:.17g}"])


def load_sindy_model(path, n_nodes=4):
    lib = CandidateLibrary.for_nodes(n_nodes)
    labels = {c.label: i for i, c in enumerate(lib.descriptors)}
    n = n_nodes
    state_names = (
        [f"delta_1{i}" for i in range(2, n + 1)]
        + [f"pm_{i}" for i in range(1, n + 1)]
        + [f"v_{i}" for i in range(1, n + 1)]
    )
    states = {s: i for i, s in enumerate(state_names)}
    theta = np.zeros((len(lib), 3 * n - 1))
    lam = threshold = 0.0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["candidate", "state", "coefficient"]:
            raise DataError(f"{path}: unexpected header {header}")
        for row in reader:
            if row[0] == "#lambda":
                lam = float(row[2])
            elif row[0] == "#threshold":
                threshold = float(row[2])
            else:
                theta[labels[row[0]], states[row[1]]] = float(row[2])
    return SindyModel(library=lib, theta=theta, lam=lam, threshold=threshold)
