import numpy as np
import pytest

from sddpc.config import builtin_config
from sddpc.lti import ArxModel, extended_matrices
from sddpc.pipeline import prepare


@pytest.fixture(scope="session")
def scalar_model():
    return ArxModel(Phi=np.array([[1.0, 0.5]]), D=np.array([[0.0]]),
                    T_ini=1, Sigma_W=np.array([[0.04]]), n_x=2)


@pytest.fixture(scope="session")
def aircraft_cfg():
    return builtin_config("aircraft")


@pytest.fixture(scope="session")
def aircraft_model(aircraft_cfg):
    return aircraft_cfg.model()


@pytest.fixture(scope="session")
def scalar_setup():
    """Full offline pipeline for the scalar fixture: (cfg, spec, ti, report)."""
    cfg = builtin_config("scalar")
    spec, ti, report, traj_synth, traj_ocp = prepare(cfg, np.random.default_rng(cfg.seed))
    return cfg, spec, ti, report


@pytest.fixture(scope="session")
def aircraft_setup():
    """Full offline pipeline for the aircraft benchmark."""
    cfg = builtin_config("aircraft")
    spec, ti, report, traj_synth, traj_ocp = prepare(cfg, np.random.default_rng(cfg.seed))
    return cfg, spec, ti, report


@pytest.fixture(scope="session")
def aircraft_em(aircraft_model):
    return extended_matrices(aircraft_model)
