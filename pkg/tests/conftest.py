import numpy as np
import pytest

from gridident import datagen, grid
from gridident.solvers import SolverConfig


@pytest.fixture(scope="session")
def net():
    return grid.four_node_system()


@pytest.fixture(scope="session")
def equilibrium(net):
    return grid.find_equilibrium(grid.nominal_input(net), net)


@pytest.fixture(scope="session")
def small_dataset(net):
    """Short-horizon dataset shared by the cheaper integration tests."""
    spec = datagen.ScenarioSpec(
        horizon=2.0,
        counts=(("train", 1), ("val", 1), ("test", 1), ("eval", 2)),
        rng_seed=7,
    )
    cfg = SolverConfig(scheme="rk4", fixed_step=spec.sample_dt)
    return datagen.generate_dataset(spec, net, cfg)
