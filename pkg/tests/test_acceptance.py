"""Desk-scale recovery of the planted suitability on the default 32x32 scene."""
import json

import pandas as pd
import pytest

from drycss import flows
from drycss.config import CATEGORY_COUNTS, load_config

pytestmark = pytest.mark.slow

MIN_VAL_R = 0.8
MIN_PIXEL_R = 0.8
MIN_SEPARATION = 0.3
FLAT_AFTER_32 = 0.05


@pytest.fixture(scope="module")
def desk(prefect_harness, tmp_path_factory):
    # default grid, sizes and sample counts; fewer repetitions and epochs keep it to minutes
    cfg = load_config(
        None,
        {
            "paths": {"workdir": str(tmp_path_factory.mktemp("desk"))},
            "training": {"nn_sizes": [8], "repetitions": 3},
            "network": {"epochs": 300},
            "jobs": 2,
        },
    )
    for stage in ("synth", "features", "train", "predict", "calibrate"):
        getattr(flows, f"{stage}_flow")(cfg)
    return cfg.paths.workdir


def test_desk_run_uses_the_default_scene(desk):
    samples = pd.read_csv(desk / "samples.csv")
    assert len(samples) == sum(CATEGORY_COUNTS.values()) == 230
    assert samples["category"].value_counts().to_dict() == CATEGORY_COUNTS


def test_combined_ensemble_validation_r(desk):
    ensemble = pd.read_csv(desk / "train/ensemble.csv")
    assert len(ensemble) == 3
    assert ensemble["val_r"].mean() >= MIN_VAL_R


def test_combined_map_recovers_planted_suitability(desk):
    agreement = json.loads((desk / "predict/agreement.json").read_text())
    assert agreement["pixel_r_planted"]["combined"] >= MIN_PIXEL_R


def test_blup_validation_flattens_by_32_bins(desk):
    aggregate = pd.read_csv(desk / "train/aggregate.csv")
    blup = aggregate[aggregate["kind"] == "blup"].set_index("size")["val_r_mean"]
    assert abs(blup[32] - blup[64]) <= FLAT_AFTER_32


def test_reclassification_separates_the_main_categories(desk):
    means = pd.read_csv(desk / "calibrate/category_means.csv").set_index("category")["combined"]
    hi, lo = means["HiSuit-HiVeg"], means["LoSuit-LoVeg"]
    assert hi - lo >= MIN_SEPARATION
    for auxiliary in ("LoSuit-HiVeg", "HiSuit-LoVeg"):
        assert lo <= means[auxiliary] <= hi
