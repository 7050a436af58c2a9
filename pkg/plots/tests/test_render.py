import csv
import filecmp
import shutil

import pytest

import render


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def simple_fixture(tmp_path, values=(1, 2, 3, 4, 5),
                   stats=("3", "2", "4", "1", "5")):
    rmse = tmp_path / "rmse_long.csv"
    write_csv(rmse, render.RMSE_COLUMNS,
              [("m", t, "angles", v) for t, v in enumerate(values)])
    box = tmp_path / "boxplot_stats.csv"
    write_csv(box, render.STATS_COLUMNS, [("m", "angles") + stats])
    return rmse, box


def trajectory_fixture(tmp_path, jitter=0.0):
    columns = (("time",) + render.ANGLE_COLUMNS + render.POWER_COLUMNS
               + render.VOLTAGE_COLUMNS)
    rows = [[0.01 * k] + [0.1 * c + 0.001 * k + jitter
                          for c in range(len(columns) - 1)]
            for k in range(20)]
    path = tmp_path / ("pred.csv" if jitter else "true.csv")
    write_csv(path, columns, rows)
    return path


def test_boxplot_glyphs_match_stats_fixture(tmp_path):
    rmse, box = simple_fixture(tmp_path)
    fig, glyphs = render.render_rmse_boxplot(
        render.read_rows(rmse, render.RMSE_COLUMNS),
        render.read_rows(box, render.STATS_COLUMNS),
    )
    g = glyphs[("m", "angles")]
    assert list(g["median"].get_ydata()) == [3.0]
    box_y = {float(y) for _, y in g["box"].get_paths()[0].vertices}
    assert box_y == {2.0, 4.0}
    assert sorted(g["whisker"].get_ydata()) == [1.0, 5.0]
    assert list(g["outliers"].get_ydata()) == []


def test_boxplot_outlier_dot_read_back(tmp_path):
    rmse, box = simple_fixture(tmp_path, values=(1, 1, 1, 1, 100),
                               stats=("1", "1", "1", "1", "1"))
    fig, glyphs = render.render_rmse_boxplot(
        render.read_rows(rmse, render.RMSE_COLUMNS),
        render.read_rows(box, render.STATS_COLUMNS),
    )
    assert list(glyphs[("m", "angles")]["outliers"].get_ydata()) == [100.0]


def test_boxplot_log_axis(tmp_path):
    rmse, box = simple_fixture(tmp_path)
    fig, _ = render.render_rmse_boxplot(
        render.read_rows(rmse, render.RMSE_COLUMNS),
        render.read_rows(box, render.STATS_COLUMNS),
    )
    assert fig.axes[0].get_yscale() == "log"


def test_empty_rmse_errors_without_output(tmp_path, capsys):
    rmse, box = simple_fixture(tmp_path)
    write_csv(rmse, render.RMSE_COLUMNS, [])
    out = tmp_path / "fig5.png"
    code = render.main(["--kind", "rmse-boxplot",
                        "--in", str(rmse), str(box), "--out", str(out)])
    assert code == 1
    assert "no rows" in capsys.readouterr().err
    assert not out.exists()


def test_missing_column_named_in_error(tmp_path, capsys):
    rmse, box = simple_fixture(tmp_path)
    write_csv(rmse, ("model", "trajectory", "group"),
              [("m", 0, "angles")])
    code = render.main(["--kind", "rmse-boxplot",
                        "--in", str(rmse), str(box),
                        "--out", str(tmp_path / "fig5.png")])
    assert code == 1
    assert "missing column 'rmse'" in capsys.readouterr().err


def test_boxplot_inputs_recognized_in_any_order(tmp_path):
    rmse, box = simple_fixture(tmp_path)
    out = tmp_path / "fig5.png"
    assert render.main(["--kind", "rmse-boxplot",
                        "--in", str(box), str(rmse),
                        "--out", str(out)]) == 0
    assert out.exists()


def test_boxplot_rerender_is_deterministic(tmp_path):
    rmse, box = simple_fixture(tmp_path)
    out = tmp_path / "fig5.png"
    args = ["--kind", "rmse-boxplot", "--in", str(rmse), str(box),
            "--out", str(out)]
    assert render.main(args) == 0
    first = tmp_path / "first.png"
    shutil.copy(out, first)
    assert render.main(args) == 0
    assert filecmp.cmp(out, first, shallow=False)


def test_trajectory_overlay_renders(tmp_path):
    true_csv = trajectory_fixture(tmp_path)
    pred_csv = trajectory_fixture(tmp_path, jitter=0.01)
    out = tmp_path / "fig6.png"
    assert render.main(["--kind", "trajectory-overlay",
                        "--in", str(true_csv), str(pred_csv),
                        "--out", str(out)]) == 0
    assert out.exists()


def test_trajectory_overlay_row_mismatch(tmp_path, capsys):
    true_csv = trajectory_fixture(tmp_path)
    pred_csv = trajectory_fixture(tmp_path, jitter=0.01)
    with open(pred_csv) as fh:
        lines = fh.readlines()
    with open(pred_csv, "w") as fh:
        fh.writelines(lines[:-2])
    code = render.main(["--kind", "trajectory-overlay",
                        "--in", str(true_csv), str(pred_csv),
                        "--out", str(tmp_path / "fig6.png")])
    assert code == 1
    assert "row count mismatch" in capsys.readouterr().err


def test_trajectory_overlay_needs_two_inputs(tmp_path, capsys):
    true_csv = trajectory_fixture(tmp_path)
    code = render.main(["--kind", "trajectory-overlay",
                        "--in", str(true_csv),
                        "--out", str(tmp_path / "fig6.png")])
    assert code == 1
    assert "two inputs" in capsys.readouterr().err


def test_median_trajectory_lower_median():
    rows = [{"model": "m", "trajectory": str(t), "group": "angles",
             "rmse": str(v)}
            for t, v in enumerate([0.3, 0.1, 0.2, 0.4])]
    # sorted totals: t1 < t2 < t0 < t3 -> lower median is t2
    assert render.median_trajectory_index(rows, "m") == 2


def test_median_trajectory_unknown_model():
    with pytest.raises(render.SchemaError):
        render.median_trajectory_index([], "m")
