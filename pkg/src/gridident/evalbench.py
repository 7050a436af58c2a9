"""Closed-loop evaluation: grouped simulation RMSE and boxplot statistics.

Groups follow the three report panels: angles (the N-1 angle differences),
powers (pm_1..pm_N) and voltages (v_1..v_N). Quartiles use linear
interpolation (numpy's default), whiskers reach the furthest data point
inside the 1.5 * IQR fences, points beyond are outliers.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

GROUP_NAMES = ("angles", "powers", "voltages")


def group_indices(n_nodes):
    n = n_nodes
    return {
        "angles": np.arange(0, n - 1),
        "powers": np.arange(n - 1, 2 * n - 1),
        "voltages": np.arange(2 * n - 1, 3 * n - 1),
    }


def rmse(true_states, predicted_states, indices=None):
    """Simulation RMSE: sqrt of the mean (over k = 1..K) squared 2-norm of
    the (sub)state residual; the shared initial sample is excluded."""
    true_states = np.asarray(true_states, float)
    predicted_states = np.asarray(predicted_states, float)
    if true_states.shape != predicted_states.shape:
        raise ConfigError(
            f"trajectory grids differ: {true_states.shape} vs {predicted_states.shape}"
        )
    resid = true_states[1:] - predicted_states[1:]
    if indices is not None:
        resid = resid[:, indices]
    return float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))


@dataclass
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: list


def boxplot_stats(values):
    """Median, linear-interpolation quartiles, 1.5*IQR whiskers, outliers."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise ConfigError("boxplot_stats needs at least one value")
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = values[(values >= lo_fence) & (values <= hi_fence)]
    whisker_lo = float(inside.min())
    whisker_hi = float(inside.max())
    outliers = sorted(float(v) for v in values[(values < lo_fence) | (values > hi_fence)])
    return BoxplotStats(float(med), float(q1), float(q3), whisker_lo, whisker_hi, outliers)


@dataclass
class EvalResult:
    # rows: (model, trajectory index, group, rmse); missing rollouts are skipped
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def values(self, model, group):
        return [r[3] for r in self.rows if r[0] == model and r[2] == group]

    def models(self):
        seen = []
        for r in self.rows:
            if r[0] not in seen:
                seen.append(r[0])
        return seen

    def stats(self, model, group):
        return boxplot_stats(self.values(model, group))

    def median(self, model, group):
        return self.stats(model, group).median

    def write_rmse_long(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "trajectory", "group", "rmse"])
            for model, traj, group, value in self.rows:
                writer.writerow([model, traj, group, f"{value:.17g}"])

    def write_boxplot_stats(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model", "group", "median", "q1", "q3", "lo", "hi"])
            for model in self.models():
                for group in GROUP_NAMES:
                    s = self.stats(model, group)
                    writer.writerow(
                        [model, group]
                        + [f"{v:.17g}" for v in (s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi)]
                    )


def compare(models, trajectories, n_nodes=4):
    """Roll every (name, simulator) pair out on every trajectory and collect
    grouped RMSEs. ``simulator(x0, times, inputs) -> states``. A failed
    rollout is recorded and skipped, not fatal."""
    if not models:
        raise ConfigError("need at least one model to compare")
    groups = group_indices(n_nodes)
    result = EvalResult()
    predictions = {}
    for name, simulate in models:
        for t_idx, traj in enumerate(trajectories):
            try:
                pred = simulate(traj.states[0], traj.times, traj.inputs)
            except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                log.warning("rollout failed for %s on trajectory %d: %s", name, t_idx, exc)
                result.failures.append((name, t_idx, str(exc)))
                continue
            predictions[(name, t_idx)] = pred
            for group, idx in groups.items():
                result.rows.append((name, t_idx, group, rmse(traj.states, pred, idx)))
    return result, predictions


def overall_rmse_by_trajectory(result, model):
    """Whole-state RMSE proxy per trajectory: root of the summed grouped
    mean squares (used only to pick the median trajectory for plotting)."""
    trajs = sorted({r[1] for r in result.rows if r[0] == model})
    out = []
    for t in trajs:
        total = sum(r[3] ** 2 for r in result.rows if r[0] == model and r[1] == t)
        out.append((t, float(np.sqrt(total))))
    return out


def median_trajectory(result, model):
    """Trajectory whose overall RMSE is the (lower) median for the model."""
    pairs = overall_rmse_by_trajectory(result, model)
    pairs.sort(key=lambda p: p[1])
    return pairs[(len(pairs) - 1) // 2][0]
