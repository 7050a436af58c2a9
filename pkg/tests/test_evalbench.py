import csv

import numpy as np
import pytest

from gridident import evalbench, grid
from gridident.errors import ConfigError
from gridident.solvers import SolverConfig, simulate_piecewise


def test_rmse_identical_zero():
    x = np.random.default_rng(0).standard_normal((20, 11))
    assert evalbench.rmse(x, x) == 0.0


def test_rmse_offset_single_state():
    x = np.zeros((10, 11))
    y = x.copy()
    y[:, 3] += 0.25
    assert evalbench.rmse(x, y, indices=[3]) == pytest.approx(0.25)


def test_rmse_offset_voltage_group():
    x = np.zeros((10, 11))
    y = x.copy()
    idx = evalbench.group_indices(4)["voltages"]
    y[:, idx] += 0.1
    # sqrt(mean of 4 c^2) = 2|c|
    assert evalbench.rmse(x, y, indices=idx) == pytest.approx(0.2)


def test_rmse_excludes_initial_sample():
    x = np.zeros((5, 2))
    y = x.copy()
    y[0] += 100.0  # shared initial sample must not count
    assert evalbench.rmse(x, y) == 0.0


def test_rmse_shape_mismatch():
    with pytest.raises(ConfigError):
        evalbench.rmse(np.zeros((3, 2)), np.zeros((4, 2)))


def test_boxplot_simple_fixture():
    s = evalbench.boxplot_stats([1, 2, 3, 4, 5])
    assert (s.median, s.q1, s.q3) == (3.0, 2.0, 4.0)
    assert (s.whisker_lo, s.whisker_hi) == (1.0, 5.0)
    assert s.outliers == []


def test_boxplot_outlier_flagged():
    s = evalbench.boxplot_stats([1, 1, 1, 1, 100])
    assert s.outliers == [100.0]
    assert s.whisker_hi == 1.0


def test_boxplot_single_value():
    s = evalbench.boxplot_stats([0.7])
    assert s.median == s.q1 == s.q3 == s.whisker_lo == s.whisker_hi == 0.7


def test_compare_identical_models(small_dataset):
    def echo(x0, times, inputs):
        # deliberately wrong but deterministic rollout
        return np.tile(x0, (len(times), 1))

    result, _ = evalbench.compare([("a", echo), ("b", echo)],
                                  small_dataset.split("eval"))
    rows_a = [(t, g, v) for m, t, g, v in result.rows if m == "a"]
    rows_b = [(t, g, v) for m, t, g, v in result.rows if m == "b"]
    assert rows_a == rows_b


def test_compare_true_rhs_noise_floor(net, small_dataset):
    cfg = SolverConfig(scheme="rk4", fixed_step=small_dataset.spec.sample_dt)

    def truth(x0, times, inputs):
        return simulate_piecewise(lambda t, x, u: grid.rhs(x, u, net),
                                  x0, times, inputs, cfg)

    result, _ = evalbench.compare([("truth", truth)], small_dataset.split("eval"))
    assert all(v < 1e-8 for _, _, _, v in result.rows)


def test_compare_records_failures(small_dataset):
    def broken(x0, times, inputs):
        raise ValueError("boom")

    def ok(x0, times, inputs):
        return np.tile(x0, (len(times), 1))

    result, _ = evalbench.compare([("bad", broken), ("ok", ok)],
                                  small_dataset.split("eval"))
    assert len(result.failures) == 2
    assert result.models() == ["ok"]


def test_median_trajectory_lower_median():
    result = evalbench.EvalResult()
    for t, v in enumerate([0.3, 0.1, 0.2, 0.4]):
        result.rows.append(("m", t, "angles", v))
        result.rows.append(("m", t, "powers", 0.0))
        result.rows.append(("m", t, "voltages", 0.0))
    # sorted overall: 0.1(t1) 0.2(t2) 0.3(t0) 0.4(t3) -> lower median t2
    assert evalbench.median_trajectory(result, "m") == 2


def test_report_csvs(tmp_path):
    result = evalbench.EvalResult()
    for t in range(4):
        for g in evalbench.GROUP_NAMES:
            result.rows.append(("m", t, g, 0.1 * (t + 1)))
    result.write_rmse_long(tmp_path / "rmse_long.csv")
    result.write_boxplot_stats(tmp_path / "boxplot_stats.csv")
    with open(tmp_path / "rmse_long.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["model", "trajectory", "group", "rmse"]
    assert len(rows) == 13
    with open(tmp_path / "boxplot_stats.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["model", "group", "median", "q1", "q3", "lo", "hi"]
    assert len(rows) == 4
