import json

import pytest

from drycss.config import RunConfig, load_config
from drycss.errors import UsageError
from drycss.grid_store import DESK_GRID


@pytest.fixture(autouse=True)
def no_env_jobs(monkeypatch):
    monkeypatch.delenv("DRYCSS_JOBS", raising=False)


def test_defaults_describe_the_desk_run():
    cfg = load_config()
    assert cfg.grid.spec() == DESK_GRID
    assert cfg.grid.time().n_steps == 2920
    assert len(cfg.grid.variables) == 23
    assert cfg.training.blup_sizes == [2, 4, 8, 16, 32, 64]
    assert cfg.training.nn_sizes == [4, 8, 16, 32]
    assert cfg.training.repetitions == 10
    assert cfg.thresholds.candidate_count == 25
    assert cfg.analogs.min_ndvi_margin == 0.02
    assert cfg.jobs == 1


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"root_seed": 11, "training": {"repetitions": 3, "holdout": 0.2}}))
    cfg = load_config(path, {"training": {"repetitions": 5}})
    assert cfg.root_seed == 11
    assert cfg.training.repetitions == 5
    assert cfg.training.holdout == 0.2


def test_sizes_are_sorted_and_unique():
    cfg = load_config(None, {"training": {"blup_sizes": [8, 2, 8]}})
    assert cfg.training.blup_sizes == [2, 8]


def test_jobs_from_environment(monkeypatch):
    monkeypatch.setenv("DRYCSS_JOBS", "4")
    assert load_config().jobs == 4
    assert load_config(None, {"jobs": 2}).jobs == 2


@pytest.mark.parametrize(
    "overrides, field",
    [
        ({"jobs": 0}, "jobs"),
        ({"training": {"holdout": 1.5}}, "training.holdout"),
        ({"training": {"counts": {"Wetland": 4}}}, "training.counts"),
        ({"network": {"dropout": 1.0}}, "network.dropout"),
        ({"analogs": {"mode": "spiral"}}, "analogs.mode"),
        ({"grid": {"colour": "red"}}, "grid.colour"),
    ],
)
def test_invalid_values_name_the_field(overrides, field):
    with pytest.raises(UsageError, match=field.replace(".", r"\.")):
        load_config(None, overrides)


def test_missing_or_broken_file(tmp_path):
    with pytest.raises(UsageError, match="does not exist"):
        load_config(tmp_path / "nope.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(UsageError, match="not valid JSON"):
        load_config(tmp_path / "bad.json")


def test_digest_ignores_worker_count():
    assert RunConfig(jobs=1).digest() == RunConfig(jobs=8).digest()
    assert RunConfig(root_seed=1).digest() != RunConfig(root_seed=2).digest()


def test_network_section_builds_hyperparams():
    hyper = load_config(None, {"network": {"epochs": 12, "learning_rate": 0.01}}).network.hyperparams()
    assert (hyper.epochs, hyper.learning_rate, hyper.batch_size) == (12, 0.01, 32)
