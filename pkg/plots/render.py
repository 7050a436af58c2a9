#!/usr/bin/env python3
"""Render benchmark figures from the evaluation CSV reports.

Two figure kinds are supported:

* ``rmse-boxplot`` -- grouped RMSE distributions, one box per model per state
  group on a log axis. Median/quartile/whisker values are taken verbatim from
  ``boxplot_stats.csv``; the individual RMSE values in ``rmse_long.csv`` are
  only used to place the outlier dots.
* ``trajectory-overlay`` -- reference vs predicted voltages, angle
  differences and filtered powers in three stacked panels, from a recorded
  trajectory CSV and a prediction CSV with the same column layout.

Usage::

    render.py --kind rmse-boxplot --in rmse_long.csv boxplot_stats.csv --out fig5.png
    render.py --kind trajectory-overlay --in true.csv predicted.csv --out fig6.png

Rendering is read-only over the inputs and deterministic: fixed figure size,
no timestamps.
"""

import argparse
import csv
import math
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

RMSE_COLUMNS = ("model", "trajectory", "group", "rmse")
STATS_COLUMNS = ("model", "group", "median", "q1", "q3", "lo", "hi")

# trajectory CSVs: time, the held inputs, then the state columns
ANGLE_COLUMNS = ("delta_12", "delta_13", "delta_14")
POWER_COLUMNS = ("pm_1", "pm_2", "pm_3", "pm_4")
VOLTAGE_COLUMNS = ("v_1", "v_2", "v_3", "v_4")

PANELS = (
    ("voltage [p.u.]", VOLTAGE_COLUMNS),
    ("angle difference [rad]", ANGLE_COLUMNS),
    ("filtered power [p.u.]", POWER_COLUMNS),
)

MODEL_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")


class SchemaError(ValueError):
    """An input CSV does not match the documented schema."""


def read_rows(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column '{col}'")
        return list(reader)


def classify_inputs(paths):
    """Split boxplot input paths into (rmse_long, boxplot_stats) by header.

    Each file is matched to the schema its header overlaps most, so a file
    with a column missing still lands on the right schema and the validation
    in read_rows can name the missing column.
    """
    rmse_path = stats_path = None
    for path in paths:
        with open(path, newline="") as fh:
            header = set(next(csv.reader(fh), []))
        if len(header & set(RMSE_COLUMNS)) >= len(header & set(STATS_COLUMNS)):
            rmse_path = path
        else:
            stats_path = path
    if rmse_path is None:
        raise SchemaError(f"no input provides the columns {list(RMSE_COLUMNS)}")
    if stats_path is None:
        raise SchemaError(f"no input provides the columns {list(STATS_COLUMNS)}")
    return rmse_path, stats_path


def ordered_unique(values):
    seen = []
    for v in values:
        if v not in seen:
            seen.append(v)
    return seen


def median_trajectory_index(rmse_rows, model):
    """Trajectory whose whole-state RMSE proxy (root of the summed grouped
    mean squares) is the lower median for the model."""
    totals = {}
    for row in rmse_rows:
        if row["model"] == model:
            t = int(row["trajectory"])
            totals[t] = totals.get(t, 0.0) + float(row["rmse"]) ** 2
    if not totals:
        raise SchemaError(f"rmse data has no rows for model '{model}'")
    pairs = sorted(totals.items(), key=lambda p: (math.sqrt(p[1]), p[0]))
    return pairs[(len(pairs) - 1) // 2][0]


def render_rmse_boxplot(rmse_rows, stats_rows):
    """Build the grouped-RMSE figure; returns (figure, glyph table).

    The glyph table maps (model, group) to the drawn artists so the plotted
    values can be read back: median dot, IQR box, whisker line, outlier dots.
    """
    if not rmse_rows:
        raise SchemaError("rmse data has no rows")
    if not stats_rows:
        raise SchemaError("boxplot stats data has no rows")
    models = ordered_unique(r["model"] for r in stats_rows)
    groups = ordered_unique(r["group"] for r in stats_rows)
    values = {}
    for row in rmse_rows:
        values.setdefault((row["model"], row["group"]), []).append(
            float(row["rmse"])
        )

    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    glyphs = {}
    width = 0.6
    stride = len(models) + 1
    for row in stats_rows:
        model, group = row["model"], row["group"]
        x = groups.index(group) * stride + models.index(model)
        color = MODEL_COLORS[models.index(model) % len(MODEL_COLORS)]
        med, q1, q3 = (float(row[k]) for k in ("median", "q1", "q3"))
        lo, hi = float(row["lo"]), float(row["hi"])
        box = ax.fill_between([x - width / 2, x + width / 2], q1, q3,
                              color=color, alpha=0.35, linewidth=0)
        (whisker,) = ax.plot([x, x], [lo, hi], color=color, linewidth=1.2,
                             zorder=2)
        (median_dot,) = ax.plot([x], [med], "o", color=color, markersize=8,
                                zorder=3,
                                label=model if group == groups[0] else None)
        fliers = [v for v in values.get((model, group), [])
                  if v < lo or v > hi]
        (outlier_dots,) = ax.plot([x] * len(fliers), fliers, ".",
                                  color=color, markersize=4, zorder=3)
        glyphs[(model, group)] = {
            "median": median_dot,
            "box": box,
            "whisker": whisker,
            "outliers": outlier_dots,
        }
    ax.set_yscale("log")
    centers = [g * stride + (len(models) - 1) / 2 for g in range(len(groups))]
    ax.set_xticks(centers)
    ax.set_xticklabels(groups)
    ax.set_ylabel("RMSE")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    return fig, glyphs


def render_trajectory_overlay(true_rows, pred_rows):
    """Three stacked panels of reference (solid) vs predicted (dashed) states."""
    if not true_rows or not pred_rows:
        raise SchemaError("trajectory data has no rows")
    if len(true_rows) != len(pred_rows):
        raise SchemaError(
            f"row count mismatch: {len(true_rows)} reference vs "
            f"{len(pred_rows)} predicted samples"
        )
    t = [float(r["time"]) for r in true_rows]
    fig, axes = plt.subplots(len(PANELS), 1, figsize=(7.0, 7.5), sharex=True)
    for ax, (ylabel, columns) in zip(axes, PANELS):
        for k, col in enumerate(columns):
            color = MODEL_COLORS[k % len(MODEL_COLORS)]
            ax.plot(t, [float(r[col]) for r in true_rows], "-", color=color,
                    linewidth=1.0, label=col)
            ax.plot(t, [float(r[col]) for r in pred_rows], "--", color=color,
                    linewidth=1.0)
        ax.set_ylabel(ylabel)
        ax.legend(loc="upper right", fontsize=7, ncol=2)
    axes[-1].set_xlabel("time [s]")
    fig.tight_layout()
    return fig


def render(kind, inputs, out_path):
    if kind == "rmse-boxplot":
        rmse_path, stats_path = classify_inputs(inputs)
        fig, _ = render_rmse_boxplot(read_rows(rmse_path, RMSE_COLUMNS),
                                     read_rows(stats_path, STATS_COLUMNS))
    elif kind == "trajectory-overlay":
        if len(inputs) != 2:
            raise SchemaError(
                "trajectory-overlay needs two inputs: reference CSV then "
                "prediction CSV"
            )
        columns = ("time",) + ANGLE_COLUMNS + POWER_COLUMNS + VOLTAGE_COLUMNS
        fig = render_trajectory_overlay(read_rows(inputs[0], columns),
                                        read_rows(inputs[1], columns))
    else:
        raise SchemaError(f"unknown figure kind '{kind}'")
    fig.savefig(out_path)
    plt.close(fig)


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="render figures from evaluation CSV reports")
    parser.add_argument("--kind", required=True,
                        choices=["rmse-boxplot", "trajectory-overlay"])
    parser.add_argument("--in", dest="inputs", nargs="+", required=True,
                        metavar="CSV", help="input CSV files")
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        render(args.kind, args.inputs, args.out)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
