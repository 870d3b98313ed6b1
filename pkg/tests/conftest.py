import numpy as np
import pytest

from app import settings
from app.models.experiment import ExperimentConfig
from app.models.system import ArrayGeometry, OFDMConfig
from channel_app import PathParam, PathSet


def pytest_collection_modifyitems(config, items):
    if settings.RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set ADLOC_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_path(cos_theta: float, u: float, r: float, sigma2: float = 1.0) -> PathParam:
    """Path given by ``cos θ`` and ``sin θ cos φ``."""
    theta = float(np.arccos(cos_theta))
    return PathParam(theta, float(np.arccos(u / np.sin(theta))), r, sigma2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def geom():
    return ArrayGeometry(M=4, N=8)


@pytest.fixture
def ofdm():
    return OFDMConfig(Nc=64, Ng=16)


@pytest.fixture
def integer_paths():
    return PathSet((make_path(0.3, 0.2, 3.0, 0.6), make_path(-0.6, 0.1, 9.0, 0.3), make_path(0.1, -0.7, 12.0, 0.1)))


@pytest.fixture
def small_config():
    """Coarse grid, few test points: a full train/eval cycle in seconds."""
    return ExperimentConfig.model_validate({
        "area": {"grid_spacing": 2.5, "test_points": 12},
        "fingerprint": {"realizations": 20},
        "scene": {"n_scatterers": 12},
        "sweep": {"latency_queries": 1},
    })


@pytest.fixture
def no_ledger(monkeypatch, tmp_path):
    monkeypatch.setattr(settings, "RUN_ROOT", tmp_path / "runs")
    monkeypatch.setattr(settings, "RECORD_RUNS", False)
    return tmp_path / "runs"
