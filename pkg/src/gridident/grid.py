"""Droop-controlled grid-forming power system model.

Implements the nodal power flow over pi-model transmission lines and the
reduced droop dynamics of the coupled grid-forming units as a pure
right-hand-side function f(x, u). The state vector packs, for an N-node
network,

    x = [delta_12 .. delta_1N, pm_1 .. pm_N, v_1 .. v_N]      (dim 3N-1)
    u = [vd_1 .. vd_N, wd_1 .. wd_N]                          (dim 2N)

with angles in rad, powers and voltages in per unit, and frequencies in
rad/s. Node indices are 1-based in the public API and in config files.
All model types are immutable after construction; ``rhs`` is pure and
safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import ConfigError, ConvergenceError

NOMINAL_OMEGA = 2.0 * math.pi * 50.0


@dataclass(frozen=True)
class LineParams:
    """Pi-model transmission line: series admittance plus identical end shunts."""

    g: float
    b: float
    g_shunt: float = 0.0
    b_shunt: float = 0.0

    def __post_init__(self):
        if self.g < 0:
            raise ConfigError(f"line conductance must be >= 0, got {self.g}")


@dataclass(frozen=True)
class LoadParams:
    """Constant impedance load at a node; (0, 0) means no load."""

    g_load: float = 0.0
    b_load: float = 0.0

    def __post_init__(self):
        if self.g_load < 0:
            raise ConfigError(f"load conductance must be >= 0, got {self.g_load}")


@dataclass(frozen=True)
class UnitParams:
    """Droop gains, measurement filter time constants and power setpoints."""

    k_p: float
    k_q: float
    tau_p: float
    tau_q: float
    p_d: float
    q_d: float = 0.0

    def __post_init__(self):
        for name in ("k_p", "k_q", "tau_p", "tau_q"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"unit parameter {name} must be > 0")


@dataclass(frozen=True)
class NetworkModel:
    """Kron-reduced network: lines keyed by (i, j) with i < j, per-node loads/units."""

    node_count: int
    lines: dict
    loads: tuple
    units: tuple

    def __post_init__(self):
        n = self.node_count
        if n < 2:
            raise ConfigError("network needs at least 2 nodes")
        if len(self.loads) != n or len(self.units) != n:
            raise ConfigError("loads/units must have one entry per node")
        for (i, j) in self.lines:
            if not (1 <= i < j <= n):
                raise ConfigError(f"bad line key ({i}, {j}); need 1 <= i < j <= N")
        # connectivity check (BFS from node 1)
        adj = {i: set() for i in range(1, n + 1)}
        for (i, j) in self.lines:
            adj[i].add(j)
            adj[j].add(i)
        seen = {1}
        stack = [1]
        while stack:
            for k in adj[stack.pop()]:
                if k not in seen:
                    seen.add(k)
                    stack.append(k)
        if len(seen) != n:
            raise ConfigError("network graph is not connected")

    @property
    def state_dim(self):
        return 3 * self.node_count - 1

    @property
    def input_dim(self):
        return 2 * self.node_count

    def neighbors(self, i):
        return sorted({j for (a, b) in self.lines for j in (a, b) if i in (a, b)} - {i})

    def _edge_arrays(self):
        """Cached flat edge arrays for vectorised rhs evaluation."""
        cached = self.__dict__.get("_edges_cache")
        if cached is None:
            keys = sorted(self.lines)
            ia = np.array([i - 1 for (i, _) in keys], dtype=int)
            ib = np.array([j - 1 for (_, j) in keys], dtype=int)
            g = np.array([self.lines[k].g for k in keys])
            b = np.array([self.lines[k].b for k in keys])
            gs = np.array([self.lines[k].g_shunt for k in keys])
            bs = np.array([self.lines[k].b_shunt for k in keys])
            cached = (ia, ib, g, b, gs, bs)
            object.__setattr__(self, "_edges_cache", cached)
        return cached

    def _unit_arrays(self):
        cached = self.__dict__.get("_units_cache")
        if cached is None:
            cached = tuple(
                np.array([getattr(un, f) for un in self.units])
                for f in ("k_p", "k_q", "tau_p", "tau_q", "p_d", "q_d")
            )
            object.__setattr__(self, "_units_cache", cached)
        return cached


def four_node_system():
    """The 4-node benchmark: two conventional units (1, 4), two storage units
    (2, 3), loads at nodes 1 and 3, meshed lines {12, 23, 24, 34}."""
    line = LineParams(g=2.0, b=-20.0, g_shunt=0.02, b_shunt=0.005)
    conventional = UnitParams(k_p=1.0, k_q=0.1, tau_p=1.0, tau_q=1.0, p_d=0.6)
    storage = UnitParams(k_p=1.0, k_q=0.1, tau_p=0.3, tau_q=0.3, p_d=-0.25)
    load = LoadParams(g_load=0.38, b_load=-0.1)
    return NetworkModel(
        node_count=4,
        lines={(1, 2): line, (2, 3): line, (2, 4): line, (3, 4): line},
        loads=(load, LoadParams(), load, LoadParams()),
        units=(conventional, storage, storage, conventional),
    )


def nominal_input(net):
    """vd = 1 pu and wd = 2*pi*50 rad/s at every node."""
    n = net.node_count
    return np.concatenate([np.ones(n), np.full(n, NOMINAL_OMEGA)])


def unpack_state(x, n):
    """Split a packed state into (theta, pm, v) with theta[i] = delta_i - delta_1.

    theta has one entry per node (theta[0] = 0) so that the angle difference
    delta_ij = delta_i - delta_j equals theta[i-1] - theta[j-1].
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (3 * n - 1,):
        raise ConfigError(f"state must have dimension {3 * n - 1}, got {x.shape}")
    theta = np.concatenate([[0.0], -x[: n - 1]])
    return theta, x[n - 1 : 2 * n - 1], x[2 * n - 1 :]


def line_power_flow(v_i, v_j, delta_ij, line):
    """Active/reactive power flow from node i to node j over a pi-model line."""
    cos_d = math.cos(delta_ij)
    sin_d = math.sin(delta_ij)
    p_ij = v_i * v_i * (line.g + line.g_shunt) - v_i * v_j * (
        line.g * cos_d + line.b * sin_d
    )
    q_ij = -v_i * v_i * (line.b + line.b_shunt) - v_i * v_j * (
        line.g * sin_d - line.b * cos_d
    )
    return p_ij, q_ij


def nodal_power(node, x, net):
    """Total active/reactive power injected at ``node`` (1-based): load self
    term plus flow over every incident line."""
    n = net.node_count
    if not 1 <= node <= n:
        raise ConfigError(f"node index {node} out of range [1, {n}]")
    theta, _, v = unpack_state(x, n)
    load = net.loads[node - 1]
    vi = v[node - 1]
    p = vi * vi * load.g_load
    q = -vi * vi * load.b_load
    for j in net.neighbors(node):
        key = (node, j) if node < j else (j, node)
        delta_ij = theta[node - 1] - theta[j - 1]
        p_ij, q_ij = line_power_flow(vi, v[j - 1], delta_ij, net.lines[key])
        p += p_ij
        q += q_ij
    return p, q


def rhs(x, u, net):
    """Right-hand side f(x, u) of the coupled droop dynamics.

    Returns the packed derivative [ddelta_12 .. ddelta_1N, dpm_1 .. dpm_N,
    dv_1 .. dv_N]. Depends on angles only through the stored differences.
    """
    n = net.node_count
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if u.shape != (2 * n,):
        raise ConfigError(f"input must have dimension {2 * n}, got {u.shape}")
    theta, pm, v = unpack_state(x, n)
    vd, wd = u[:n], u[n:]

    ia, ib, g, b, gs, bs = net._edge_arrays()
    k_p, k_q, tau_p, tau_q, p_d, q_d = net._unit_arrays()

    # flows in both directions over every line
    d_ab = theta[ia] - theta[ib]
    cos_d = np.cos(d_ab)
    sin_d = np.sin(d_ab)
    va, vb = v[ia], v[ib]
    cross = va * vb
    p_ab = va * va * (g + gs) - cross * (g * cos_d + b * sin_d)
    q_ab = -va * va * (b + bs) - cross * (g * sin_d - b * cos_d)
    p_ba = vb * vb * (g + gs) - cross * (g * cos_d - b * sin_d)
    q_ba = -vb * vb * (b + bs) - cross * (-g * sin_d - b * cos_d)

    loads_g = np.array([ld.g_load for ld in net.loads])
    loads_b = np.array([ld.b_load for ld in net.loads])
    p = v * v * loads_g
    q = -v * v * loads_b
    np.add.at(p, ia, p_ab)
    np.add.at(p, ib, p_ba)
    np.add.at(q, ia, q_ab)
    np.add.at(q, ib, q_ba)

    omega = wd - k_p * (pm - p_d)          # per-node instantaneous frequency
    ddelta = omega[0] - omega[1:]          # d/dt delta_1i = ddelta_1 - ddelta_i
    dpm = (-pm + p) / tau_p
    dv = (vd - v - k_q * (q - q_d)) / tau_q
    return np.concatenate([ddelta, dpm, dv])


def flat_start(net):
    """Flat initial guess: zero angle differences, pm at setpoint, v = 1 pu."""
    p_d = np.array([un.p_d for un in net.units])
    n = net.node_count
    return np.concatenate([np.zeros(n - 1), p_d, np.ones(n)])


def find_equilibrium(u, net, x_guess=None, tol=1e-12, max_iter=50):
    """Root of rhs(., u) by damped Newton iteration with a finite-difference
    Jacobian. Raises ConvergenceError if the residual stays above 1e-10."""
    x = flat_start(net) if x_guess is None else np.asarray(x_guess, dtype=float).copy()
    nx = net.state_dim
    for _ in range(max_iter):
        f = rhs(x, u, net)
        res = np.max(np.abs(f))
        if res < tol:
            return x
        jac = np.empty((nx, nx))
        for k in range(nx):
            h = 1e-7 * max(1.0, abs(x[k]))
            xp = x.copy()
            xp[k] += h
            xm = x.copy()
            xm[k] -= h
            jac[:, k] = (rhs(xp, u, net) - rhs(xm, u, net)) / (2 * h)
        step = np.linalg.solve(jac, -f)
        lam = 1.0
        while lam > 1e-8:
            x_new = x + lam * step
            if np.max(np.abs(rhs(x_new, u, net))) < res:
                break
            lam *= 0.5
        x = x + lam * step
    res = np.max(np.abs(rhs(x, u, net)))
    if res < 1e-10:
        return x
    raise ConvergenceError(
        f"Newton did not converge: residual {res:.3e} after {max_iter} iterations",
        residual=res,
    )


def _line_from_dict(d):
    return LineParams(
        g=float(d["g"]),
        b=float(d["b"]),
        g_shunt=float(d.get("g_shunt", 0.0)),
        b_shunt=float(d.get("b_shunt", 0.0)),
    )


def load_network(path):
    """Read a NetworkModel from a TOML file with [network], [line.ij],
    [unit.i] and [load.i] sections."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    try:
        n = int(doc["network"]["nodes"])
        lines = {}
        for key, d in doc.get("line", {}).items():
            i, j = int(key[0]), int(key[1:])
            lines[(i, j) if i < j else (j, i)] = _line_from_dict(d)
        units = []
        for i in range(1, n + 1):
            d = doc["unit"][str(i)]
            units.append(
                UnitParams(
                    k_p=float(d["k_p"]),
                    k_q=float(d["k_q"]),
                    tau_p=float(d["tau_p"]),
                    tau_q=float(d["tau_q"]),
                    p_d=float(d["p_d"]),
                    q_d=float(d.get("q_d", 0.0)),
                )
            )
        loads = []
        for i in range(1, n + 1):
            d = doc.get("load", {}).get(str(i), {})
            loads.append(
                LoadParams(
                    g_load=float(d.get("g_load", 0.0)),
                    b_load=float(d.get("b_load", 0.0)),
                )
            )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid network config {path}: {exc}") from exc
    return NetworkModel(node_count=n, lines=lines, loads=tuple(loads), units=tuple(units))
