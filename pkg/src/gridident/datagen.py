"""Randomized step-response dataset generation and on-disk persistence.

Every trajectory starts at the equilibrium of the nominal input and is
excited by piecewise-constant setpoint steps (10 equidistant steps over the
horizon, the first at t = 0). Per-trajectory RNG streams are derived from
(master seed, trajectory index), so results do not depend on generation
order. One CSV per trajectory plus a JSON manifest make the dataset fully
reproducible from (seed, spec, net, solver config).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import DataError, SolverError
from .solvers import SolverConfig, simulate_piecewise

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "eval")


@dataclass(frozen=True)
class ScenarioSpec:
    horizon: float = 50.0
    sample_dt: float = 0.01
    input_steps: int = 10
    v_d_range: tuple = (0.99, 1.01)
    omega_d_range: tuple = (2 * math.pi * 49.975, 2 * math.pi * 50.025)
    counts: tuple = (("train", 1), ("val", 1), ("test", 1), ("eval", 10))
    rng_seed: int = 0

    def __post_init__(self):
        k = self.horizon / self.sample_dt
        if abs(k - round(k)) > 1e-9:
            raise DataError("horizon must be an integer multiple of sample_dt")
        if self.v_d_range[0] > self.v_d_range[1] or self.omega_d_range[0] > self.omega_d_range[1]:
            raise DataError("sampling ranges must be ordered")

    @property
    def samples(self):
        """Number of sampling intervals K (K+1 rows per trajectory)."""
        return int(round(self.horizon / self.sample_dt))

    @property
    def count_map(self):
        return dict(self.counts)

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "sample_dt": self.sample_dt,
            "input_steps": self.input_steps,
            "v_d_range": list(self.v_d_range),
            "omega_d_range": list(self.omega_d_range),
            "counts": {k: v for k, v in self.counts},
            "rng_seed": self.rng_seed,
        }


@dataclass
class Trajectory:
    times: np.ndarray      # (K+1,)
    inputs: np.ndarray     # (K+1, 2N)
    states: np.ndarray     # (K+1, 3N-1)
    seed: int
    split: str


@dataclass
class Dataset:
    trajectories: list
    spec: ScenarioSpec
    equilibrium: np.ndarray = None

    def split(self, name):
        return [t for t in self.trajectories if t.split == name]

    def __len__(self):
        return len(self.trajectories)


def step_sample_indices(spec):
    """Sample indices at which the inputs jump (t = 0, horizon/steps, ...)."""
    block = spec.samples // spec.input_steps
    return [s * block for s in range(spec.input_steps)]


def sample_input_schedule(spec, n_nodes, rng):
    """Draw the (K+1, 2N) zero-order-hold input matrix for one trajectory.

    All N nodes are re-drawn independently at each step time; the draw order
    (per step: vd then wd, node-major) is part of the reproducibility
    contract.
    """
    k = spec.samples
    block = k // spec.input_steps
    inputs = np.empty((k + 1, 2 * n_nodes))
    for s in range(spec.input_steps):
        vd = rng.uniform(spec.v_d_range[0], spec.v_d_range[1], n_nodes)
        wd = rng.uniform(spec.omega_d_range[0], spec.omega_d_range[1], n_nodes)
        lo = s * block
        hi = (s + 1) * block if s < spec.input_steps - 1 else k + 1
        inputs[lo:hi, :n_nodes] = vd
        inputs[lo:hi, n_nodes:] = wd
    return inputs


def generate_dataset(spec, net, cfg, max_retries=3):
    """Simulate all trajectories of the spec with the reference rhs."""
    u0 = grid.nominal_input(net)
    x_star = grid.find_equilibrium(u0, net)
    times = np.arange(spec.samples + 1) * spec.sample_dt

    trajectories = []
    index = 0
    for split in SPLITS:
        for _ in range(spec.count_map.get(split, 0)):
            traj = None
            for retry in range(max_retries):
                entropy = [spec.rng_seed, index] + ([retry] if retry else [])
                rng = np.random.default_rng(np.random.SeedSequence(entropy))
                inputs = sample_input_schedule(spec, net.node_count, rng)
                try:
                    states = simulate_piecewise(
                        lambda t, x, u: grid.rhs(x, u, net), x_star, times, inputs, cfg
                    )
                except SolverError as exc:
                    log.warning(
                        "trajectory %d failed (%s); regenerating with fresh seed", index, exc
                    )
                    continue
                traj = Trajectory(
                    times=times.copy(), inputs=inputs, states=states,
                    seed=index, split=split,
                )
                break
            if traj is None:
                raise SolverError(f"trajectory {index} failed after {max_retries} attempts")
            trajectories.append(traj)
            index += 1
    return Dataset(trajectories=trajectories, spec=spec, equilibrium=x_star)


def trajectory_header(n_nodes):
    cols = ["time"]
    cols += [f"vd_{i}" for i in range(1, n_nodes + 1)]
    cols += [f"wd_{i}" for i in range(1, n_nodes + 1)]
    cols += [f"delta_1{i}" for i in range(2, n_nodes + 1)]
    cols += [f"pm_{i}" for i in range(1, n_nodes + 1)]
    cols += [f"v_{i}" for i in range(1, n_nodes + 1)]
    return cols


def write_trajectory_csv(path, times, inputs, states):
    n_cols = 1 + inputs.shape[1] + states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        n_nodes = inputs.shape[1] // 2
        writer.writerow(trajectory_header(n_nodes))
        for k in range(len(times)):
            row = [times[k], *inputs[k], *states[k]]
            writer.writerow([f"{v:.17g}" for v in row])
    return n_cols


def read_trajectory_csv(path, n_nodes):
    expected = trajectory_header(n_nodes)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header != expected:
            raise DataError(
                f"{path}: bad header; expected {len(expected)} columns "
                f"(1 time + {2 * n_nodes} input + {3 * n_nodes - 1} state)"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise DataError(f"{path}:{lineno}: expected {len(expected)} values, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.array(rows)
    nu = 2 * n_nodes
    return arr[:, 0], arr[:, 1 : 1 + nu], arr[:, 1 + nu :]


def spec_hash(spec, net, cfg):
    blob = json.dumps(
        {
            "spec": spec.to_dict(),
            "nodes": net.node_count,
            "lines": {f"{i}{j}": vars(l) for (i, j), l in sorted(net.lines.items())},
            "units": [vars(u) for u in net.units],
            "loads": [vars(l) for l in net.loads],
            "solver": vars(cfg),
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def save_dataset(ds, directory, net=None, cfg=None):
    os.makedirs(directory, exist_ok=True)
    entries = []
    for idx, traj in enumerate(ds.trajectories):
        name = f"traj_{idx:04d}_{traj.split}.csv"
        write_trajectory_csv(os.path.join(directory, name), traj.times, traj.inputs, traj.states)
        entries.append({"file": name, "split": traj.split, "seed": traj.seed})
    manifest = {
        "format_version": 1,
        "spec": ds.spec.to_dict(),
        "trajectories": entries,
    }
    if ds.equilibrium is not None:
        manifest["equilibrium"] = [f"{v:.17g}" for v in ds.equilibrium]
    if net is not None and cfg is not None:
        manifest["spec_hash"] = spec_hash(ds.spec, net, cfg)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory, n_nodes=4):
    mpath = os.path.join(directory, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no manifest.json in {directory}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{mpath}: {exc}") from exc
    sd = manifest["spec"]
    spec = ScenarioSpec(
        horizon=sd["horizon"],
        sample_dt=sd["sample_dt"],
        input_steps=sd["input_steps"],
        v_d_range=tuple(sd["v_d_range"]),
        omega_d_range=tuple(sd["omega_d_range"]),
        counts=tuple(sorted(sd["counts"].items(), key=lambda kv: SPLITS.index(kv[0]))),
        rng_seed=sd["rng_seed"],
    )
    trajectories = []
    for entry in manifest["trajectories"]:
        times, inputs, states = read_trajectory_csv(
            os.path.join(directory, entry["file"]), n_nodes
        )
        trajectories.append(
            Trajectory(times=times, inputs=inputs, states=states,
                       seed=entry["seed"], split=entry["split"])
        )
    eq = manifest.get("equilibrium")
    eq = np.array([float(v) for v in eq]) if eq is not None else None
    return Dataset(trajectories=trajectories, spec=spec, equilibrium=eq)
