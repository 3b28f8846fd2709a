import numpy as np
import pytest

from puckshot.model import PuckModel, ModeParams, fit_model
from puckshot.sim import SimConfig, collect_dataset
from puckshot.table import ModeKind, TableGeometry


@pytest.fixture(scope="session")
def geom():
    return TableGeometry()


@pytest.fixture(scope="session")
def sim_config():
    return SimConfig()


@pytest.fixture(scope="session")
def episodes(geom, sim_config):
    return collect_dataset(geom, sim_config, 100, 50, np.random.default_rng(0))


@pytest.fixture(scope="session")
def fitted_model(geom, sim_config, episodes):
    model, skipped = fit_model(episodes, sim_config.dt, geom)
    assert not skipped
    return model


def make_synthetic_model(geom, dt=0.02, noise=1e-4):
    """Hand-specified PuckModel mirroring the default truth-sim laws."""
    floating = ModeParams(
        theta_mat=0.9976 * np.eye(2), theta_vec=np.zeros(2), sigma=noise * np.eye(2)
    )
    wall = ModeParams(
        theta_mat=np.diag([-0.92, 0.95]), theta_vec=np.zeros(2), sigma=noise * np.eye(2)
    )
    mallet = ModeParams(
        theta_mat=np.diag([-0.9, 1.0]),
        theta_mat_mallet=np.diag([1.9, 0.0]),
        theta_vec=np.zeros(2),
        sigma=noise * np.eye(2),
    )
    return PuckModel(
        dt=dt,
        modes={ModeKind.FLOATING: floating, ModeKind.WALL: wall, ModeKind.MALLET: mallet},
        geometry=geom,
    )


@pytest.fixture(scope="session")
def synthetic_model(geom):
    return make_synthetic_model(geom)
