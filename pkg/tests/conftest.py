import numpy as np
import pytest
from prefect.testing.utilities import prefect_test_harness

from drycss.config import load_config
from drycss.grid_store import EPOCH_2020, GridSpec, TimeAxis, synth_cube

SMALL_VARIABLES = ("tp", "t2m", "ssrd", "u10")


@pytest.fixture(scope="session")
def prefect_harness():
    with prefect_test_harness():
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return GridSpec(20.0, 21.5, 40.0, 41.5, 16, 16)


@pytest.fixture(scope="session")
def small_time():
    return TimeAxis(EPOCH_2020, 256, 3.0)


@pytest.fixture(scope="session")
def small_scene(small_spec, small_time):
    """(cube, planted suitability) on a 16x16 grid with 4 variables."""
    return synth_cube(small_spec, small_time, seed=7, variables=SMALL_VARIABLES)


def small_overrides(workdir) -> dict:
    return {
        "paths": {"workdir": str(workdir)},
        "grid": {
            "lat_min": 20.0,
            "lat_max": 21.5,
            "lon_min": 40.0,
            "lon_max": 41.5,
            "n_lat": 16,
            "n_lon": 16,
            "n_steps": 256,
            "variables": list(SMALL_VARIABLES),
            "ndvi_years": [2020, 2021],
        },
        "training": {
            "blup_sizes": [2, 4],
            "nn_sizes": [2, 4],
            "repetitions": 2,
            "counts": {"HiSuit-HiVeg": 20, "LoSuit-HiVeg": 3, "HiSuit-LoVeg": 3, "LoSuit-LoVeg": 20},
            "ae_bins": 2,
        },
        "network": {"epochs": 15, "batch_size": 16, "learning_rate": 3e-3},
        "thresholds": {"candidate_count": 5, "overlap_n": 5},
    }


@pytest.fixture
def small_config(tmp_path, monkeypatch):
    monkeypatch.delenv("DRYCSS_JOBS", raising=False)
    return load_config(None, small_overrides(tmp_path / "run"))


@pytest.fixture(scope="session")
def overrides_for():
    return small_overrides
