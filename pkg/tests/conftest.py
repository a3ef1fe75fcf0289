import numpy as np
import pytest

from knotstrength import (
    AugmentedPosterior,
    CellGrid,
    ModelParams,
    SimConfig,
    generate_dataset,
)

TRUTH = ModelParams(eta0=3.0, eta1=1.5, rho=0.7, sigma=0.8,
                    beta=0.5, gamma0=0.25, gamma1=0.15)


@pytest.fixture(scope="session")
def small_grid():
    return CellGrid(n_cells=6, span_length=24.0, width=5.5, cutoff=24.0)


@pytest.fixture(scope="session")
def tiny_dataset(small_grid):
    """Five specimens on a 6-cell grid, at least one carrying knots."""
    config = SimConfig(n_specimens=5, params=TRUTH, grid=small_grid,
                       knot_rate=0.02, seed=11)
    dataset = generate_dataset(config)
    assert any(len(s.knots) > 0 for s in dataset.specimens)
    return dataset


@pytest.fixture(scope="session")
def tiny_posterior(tiny_dataset, small_grid):
    return AugmentedPosterior(tiny_dataset.specimens, small_grid)


@pytest.fixture()
def rng():
    return np.random.default_rng(202406)
