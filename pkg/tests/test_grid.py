import math

import numpy as np
import pytest

from gridident import grid
from gridident.errors import ConfigError, ConvergenceError
from gridident.grid import LineParams, LoadParams, NetworkModel, UnitParams


def test_line_flow_symmetry_point_leaves_only_shunts():
    line = LineParams(g=2.0, b=-20.0, g_shunt=0.02, b_shunt=0.005)
    p, q = grid.line_power_flow(1.0, 1.0, 0.0, line)
    assert p == pytest.approx(0.02)
    assert q == pytest.approx(-0.005)


def test_line_flow_hand_value():
    # hand evaluation of the pi-model flow at a slightly depressed far end
    line = LineParams(g=2.0, b=-20.0, g_shunt=0.02, b_shunt=0.005)
    p, q = grid.line_power_flow(1.0, 0.98, 0.05, line)
    assert p == pytest.approx(1.042042, abs=1e-6)
    assert q == pytest.approx(0.321536, abs=1e-6)


def test_line_flow_zero_admittance():
    assert grid.line_power_flow(1.0, 1.0, 0.0, LineParams(g=0.0, b=0.0)) == (0.0, 0.0)


def test_nodal_power_load_only_node():
    # a zero-admittance line keeps the graph connected but carries no flow,
    # so the node-1 injection reduces to its constant-impedance load
    unit = UnitParams(k_p=1.0, k_q=0.1, tau_p=1.0, tau_q=1.0, p_d=0.0)
    pair = NetworkModel(
        node_count=2,
        lines={(1, 2): LineParams(g=0.0, b=0.0)},
        loads=(LoadParams(g_load=0.38, b_load=-0.1), LoadParams()),
        units=(unit, unit),
    )
    x = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
    p, q = grid.nodal_power(1, x, pair)
    assert p == pytest.approx(0.38)
    assert q == pytest.approx(0.1)


def test_nodal_power_flat_state_node_one(net):
    x = np.concatenate([np.zeros(3), np.zeros(4), np.ones(4)])
    p, q = grid.nodal_power(1, x, net)
    # node 1 has exactly one incident line; load plus shunt terms remain
    assert p == pytest.approx(0.38 + 0.02)
    assert q == pytest.approx(0.1 - 0.005)


def test_nodal_power_bad_index(net):
    with pytest.raises(ConfigError):
        grid.nodal_power(5, grid.flat_start(net), net)


def test_rhs_zero_at_equilibrium(net, equilibrium):
    f = grid.rhs(equilibrium, grid.nominal_input(net), net)
    assert np.max(np.abs(f)) < 1e-9


def test_rhs_angle_rate_identity(net):
    # with equal k_p and equal omega_d the frequency terms cancel and
    # d/dt delta_1i = k_p[(p_i^m - p_i^d) - (p_1^m - p_1^d)]
    rng = np.random.default_rng(11)
    x = grid.flat_start(net) + 0.02 * rng.standard_normal(11)
    u = grid.nominal_input(net)
    f = grid.rhs(x, u, net)
    pm = x[3:7]
    p_d = np.array([un.p_d for un in net.units])
    k_p = net.units[0].k_p
    expected = k_p * ((pm[1:] - p_d[1:]) - (pm[0] - p_d[0]))
    assert np.allclose(f[:3], expected, atol=1e-12)


def test_rhs_voltage_setpoint_perturbation(net, equilibrium):
    u = grid.nominal_input(net)
    u = u.copy()
    u[0] += 0.01
    f = grid.rhs(equilibrium, u, net)
    assert f[7] > 0  # dv_1/dt responds with the sign of the setpoint change


def test_equilibrium_power_sharing(net, equilibrium):
    # equal droop gains and setpoint frequencies force identical power
    # deviations p_i^m - p_i^d at equilibrium
    pm = equilibrium[3:7]
    p_d = np.array([un.p_d for un in net.units])
    dev = pm - p_d
    assert np.max(np.abs(dev - dev[0])) < 1e-8


def test_equilibrium_idempotent(net, equilibrium):
    again = grid.find_equilibrium(grid.nominal_input(net), net, x_guess=equilibrium)
    assert np.array_equal(again, equilibrium)


def test_equilibrium_residual(net, equilibrium):
    f = grid.rhs(equilibrium, grid.nominal_input(net), net)
    assert np.linalg.norm(f, ord=np.inf) < 1e-10


def test_unpack_state_shape_check(net):
    with pytest.raises(ConfigError):
        grid.unpack_state(np.zeros(10), 4)


def test_network_validation_rejects_disconnected():
    line = LineParams(g=1.0, b=-10.0)
    with pytest.raises(ConfigError):
        NetworkModel(
            node_count=4,
            lines={(1, 2): line, (3, 4): line},
            loads=(LoadParams(),) * 4,
            units=(UnitParams(k_p=1.0, k_q=0.1, tau_p=1.0, tau_q=1.0, p_d=0.0),) * 4,
        )


def test_load_network_round_trip(tmp_path, net):
    path = tmp_path / "net.toml"
    lines = ["[network]", "nodes = 4", ""]
    for (i, j), ln in net.lines.items():
        lines += [f"[line.{i}{j}]", f"g = {ln.g}", f"b = {ln.b}",
                  f"g_shunt = {ln.g_shunt}", f"b_shunt = {ln.b_shunt}", ""]
    for i, un in enumerate(net.units, start=1):
        lines += [f"[unit.{i}]", f"k_p = {un.k_p}", f"k_q = {un.k_q}",
                  f"tau_p = {un.tau_p}", f"tau_q = {un.tau_q}",
                  f"p_d = {un.p_d}", f"q_d = {un.q_d}", ""]
    for i, ld in enumerate(net.loads, start=1):
        if ld.g_load or ld.b_load:
            lines += [f"[load.{i}]", f"g_load = {ld.g_load}",
                      f"b_load = {ld.b_load}", ""]
    path.write_text("\n".join(lines))
    loaded = grid.load_network(path)
    x = grid.flat_start(net) + 0.01
    u = grid.nominal_input(net)
    assert np.array_equal(grid.rhs(x, u, loaded), grid.rhs(x, u, net))
