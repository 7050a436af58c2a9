"""End-to-end acceptance checks for the identification workbench.

Each test enforces one headline guarantee of the package at its stated
tolerance. The slow pipeline checks share a pair of full desk-scale
``reproduce`` runs through a session fixture, so the whole module runs the
training/evaluation pipeline exactly twice.
"""

import csv
import filecmp
import importlib.util
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gridident import cli, datagen, evalbench, grid, mlp, sindy, training
from gridident.solvers import SolverConfig, simulate_piecewise, solve_interval


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    dirs = (root / "run_a", root / "run_b")
    for d in dirs:
        assert cli.main(["reproduce", "--preset", "desk", "--out", str(d)]) == 0
    return dirs


@pytest.fixture(scope="session")
def desk_dataset(desk_runs):
    return datagen.load_dataset(desk_runs[0] / "dataset")


def read_medians(report_dir):
    with open(report_dir / "boxplot_stats.csv") as fh:
        rows = list(csv.DictReader(fh))
    return {(r["model"], r["group"]): float(r["median"]) for r in rows}


# -- numerical core ------------------------------------------------------------


def test_solver_convergence_orders():
    decay = lambda t, x: -x
    truth = math.exp(-1.0)
    slopes = {}
    for scheme in ("euler", "rk4"):
        errs = []
        steps = [0.1 / 2 ** k for k in range(5)]
        for h in steps:
            cfg = SolverConfig(scheme=scheme, fixed_step=h)
            sol = solve_interval(decay, 0.0, 1.0, np.array([1.0]), cfg)
            errs.append(abs(sol.end_state[0] - truth))
        slopes[scheme] = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slopes["euler"] == pytest.approx(1.0, abs=0.1)
    assert slopes["rk4"] == pytest.approx(4.0, abs=0.1)
    cfg = SolverConfig(scheme="dopri5", rtol=1e-8, atol=1e-10)
    sol = solve_interval(lambda t, x: x, 0.0, 1.0, np.array([1.0]), cfg)
    assert abs(sol.end_state[0] - math.e) < 1e-7


def test_grid_equilibrium_and_power_sharing():
    net = grid.four_node_system()
    u0 = grid.nominal_input(net)
    x_star = grid.find_equilibrium(u0, net)
    assert np.linalg.norm(grid.rhs(x_star, u0, net), ord=np.inf) < 1e-10
    times = np.arange(1001) * 0.01
    inputs = np.tile(u0, (1001, 1))
    cfg = SolverConfig(scheme="rk4", fixed_step=0.01)
    states = simulate_piecewise(lambda t, x, u: grid.rhs(x, u, net),
                                x_star, times, inputs, cfg)
    assert np.max(np.abs(states - x_star)) < 1e-8
    # equal droop gains and setpoint frequencies equalize p_m - p_d
    dev = x_star[3:7] - np.array([un.p_d for un in net.units])
    assert np.max(np.abs(dev - dev[0])) < 1e-8


def test_gradients_match_finite_differences_across_configs():
    activations = ("relu", "sigmoid", "softplus")
    schemes = ("euler", "rk4", "dopri5")
    combos = [(a, s) for a in activations for s in schemes]
    # fixed draw keeps every relu pre-activation clear of the difference
    # stencil; a kink inside the stencil would invalidate the reference value
    rng = np.random.default_rng(7)
    for k in range(21):  # every combo at several random shapes
        activation, scheme = combos[k % len(combos)]
        layers = int(rng.integers(1, 3))
        width = int(rng.integers(3, 9))
        m = mlp.init_model(layers, width, activation, int(rng.integers(1e6)),
                           n_x=3, n_u=2)
        cfg = SolverConfig(scheme=scheme, fixed_step=0.01, rtol=1e-6, atol=1e-8)
        x0 = rng.standard_normal((4, 3))
        u = rng.standard_normal((4, 2))
        x1 = rng.standard_normal((4, 3))
        _, grads = mlp.loss_and_gradient(m, x0, u, x1, cfg)
        params = m.parameters()
        h = 1e-6
        for pi, grad in enumerate(grads):
            for j in range(grad.size):
                orig = params[pi].ravel()[j]
                params[pi].ravel()[j] = orig + h
                m.set_parameters(params)
                lp = mlp.one_step_loss(m, x0, u, x1, cfg)
                params[pi].ravel()[j] = orig - h
                m.set_parameters(params)
                lm = mlp.one_step_loss(m, x0, u, x1, cfg)
                params[pi].ravel()[j] = orig
                m.set_parameters(params)
                fd = (lp - lm) / (2 * h)
                assert abs(grad.ravel()[j] - fd) <= 1e-4 * abs(fd) + 1e-8


# -- sparse identification -----------------------------------------------------


def test_sindy_exact_recovery_on_training_trajectory(desk_dataset):
    net = grid.four_node_system()
    theta_star = sindy.ground_truth_theta(net)
    model = sindy.fit_sindy(desk_dataset.split("train"), lam=1e-9,
                            threshold=1e-4, exact_derivatives=True, net=net)
    support = theta_star != 0
    assert np.array_equal(model.theta != 0, support)
    rel = np.abs(model.theta - theta_star)[support] / np.abs(theta_star[support])
    assert rel.max() < 1e-3


def test_sindy_recovery_from_difference_derivatives(desk_dataset):
    # known-failing: central differences at the 10 ms sampling leave
    # derivative errors that keep near-duplicate voltage candidates active
    net = grid.four_node_system()
    theta_star = sindy.ground_truth_theta(net)
    model = sindy.fit_sindy(desk_dataset.split("train"), lam=1e-9,
                            threshold=1e-4)
    support = theta_star != 0
    assert np.array_equal(model.theta != 0, support)
    rel = np.abs(model.theta - theta_star)[support] / np.abs(theta_star[support])
    assert rel.max() < 5e-2


# -- pipeline ------------------------------------------------------------------


def test_node_training_reaches_reporting_gate(desk_runs, desk_dataset):
    report_dir = desk_runs[0] / "checkpoints"
    with open(report_dir / "train_report_euler.csv") as fh:
        epochs = len(list(csv.DictReader(fh)))
    assert epochs <= 2000
    model, cfg = mlp.load_checkpoint(report_dir / "node_euler.json")
    x0, u, x1 = training.transitions(desk_dataset.split("test"))
    assert mlp.one_step_loss(model, x0, u, x1, cfg) <= 1e-3


def test_sindy_beats_every_node_on_median_rmse(desk_runs):
    med = read_medians(desk_runs[0] / "report")
    models = sorted({m for m, _ in med})
    nodes = [m for m in models if m != "sindy"]
    assert len(nodes) == 3
    for group in ("angles", "powers", "voltages"):
        node_medians = [med[(m, group)] for m in nodes]
        assert med[("sindy", group)] <= min(node_medians)
        assert max(node_medians) / min(node_medians) <= 10.0


def test_pipeline_noise_floor_with_true_dynamics(desk_dataset):
    net = grid.four_node_system()
    cfg = SolverConfig(scheme="rk4", fixed_step=desk_dataset.spec.sample_dt)

    def truth(x0, times, inputs):
        return simulate_piecewise(lambda t, x, u: grid.rhs(x, u, net),
                                  x0, times, inputs, cfg)

    result, _ = evalbench.compare([("truth", truth)],
                                  desk_dataset.split("eval"))
    assert result.rows
    assert all(v < 1e-8 for _, _, _, v in result.rows)


def test_plots_render_desk_figures(desk_runs, desk_dataset, tmp_path):
    render_script = Path(__file__).resolve().parents[1] / "plots" / "render.py"
    report = desk_runs[0] / "report"
    fig5 = tmp_path / "fig5.png"
    subprocess.run(
        [sys.executable, str(render_script), "--kind", "rmse-boxplot",
         "--in", str(report / "rmse_long.csv"),
         str(report / "boxplot_stats.csv"), "--out", str(fig5)],
        check=True,
    )
    assert fig5.exists()
    # the overlay shows the euler model's median-RMSE evaluation trajectory
    spec = importlib.util.spec_from_file_location("plots_render", render_script)
    render = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(render)
    with open(report / "rmse_long.csv") as fh:
        rmse_rows = list(csv.DictReader(fh))
    idx = render.median_trajectory_index(rmse_rows, "node-euler")
    pred_csv = report / f"prediction_node-euler_traj{idx}.csv"
    assert pred_csv.exists()
    traj = desk_dataset.split("eval")[idx]
    true_csv = tmp_path / "true.csv"
    datagen.write_trajectory_csv(true_csv, traj.times, traj.inputs, traj.states)
    fig6 = tmp_path / "fig6.png"
    subprocess.run(
        [sys.executable, str(render_script), "--kind", "trajectory-overlay",
         "--in", str(true_csv), str(pred_csv), "--out", str(fig6)],
        check=True,
    )
    assert fig6.exists()


def test_reproduce_reports_are_byte_identical(desk_runs):
    a, b = (d / "report" for d in desk_runs)
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs == sorted(p.name for p in b.glob("*.csv"))
    assert csvs
    match, mismatch, errors = filecmp.cmpfiles(a, b, csvs, shallow=False)
    assert not mismatch and not errors
