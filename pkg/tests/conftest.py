import numpy as np
import pytest

from qdforecast.physmodel import SiteExcitonModel, SpectralDensity, model_preset
from qdforecast.tdvp import PropagationConfig, propagate


@pytest.fixture(scope="session")
def tiny_model():
    """Model I cut down to 2 modes per state (dense dimension 512 at 4 levels)."""
    base = model_preset("I")
    return SiteExcitonModel(delta_e_ev=base.delta_e_ev, v12_ev=base.v12_ev,
                            bath=base.bath, omega_max_cm=1200.0, delta_omega_cm=600.0)


@pytest.fixture(scope="session")
def tiny_trajectory(tiny_model):
    """Short 2-mode trajectory reused across dataset / training tests."""
    cfg = PropagationConfig(dt=0.5, t_end=100.0, scheme="two-site",
                            max_bond=32, warmup_steps=0)
    return propagate(tiny_model, cfg, n_boson_levels=4)


@pytest.fixture(scope="session")
def sine_series():
    """Noiseless synthetic feature series for learning tests."""
    from qdforecast.dataset import FeatureSeries
    t = np.arange(400) * 0.5
    vals = np.column_stack([np.sin(0.05 * t), np.cos(0.05 * t), 0.5 * np.sin(0.1 * t)])
    return FeatureSeries(times=t, values=vals, mode="full")
