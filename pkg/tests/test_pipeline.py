import dataclasses

import numpy as np
import pandas as pd
import pytest

from drycss import spectral
from drycss.errors import CalibrationError, DataError, LineageError
from drycss.grid_store import regrid_ndvi, summer_ndvi_mean, synth_disturbance, synth_ndvi
from drycss.neural import Hyperparams
from drycss.pipeline import (
    CALIBRATION_CATEGORIES,
    Category,
    CssRaster,
    LabeledSample,
    aggregate_runs,
    build_feature_bank,
    calibrated,
    category_means,
    check_spacing,
    derive_seed,
    ensemble_validation,
    extract_sample_series,
    feature_columns,
    fit_calibration,
    load_samples,
    metrics_frame,
    model_scores,
    overlap_rankings,
    plan_runs,
    predict_map,
    reclassify,
    recompute_metrics,
    resolve_tables,
    run_training_grid,
    save_samples,
    split_holdout,
    synth_samples,
    train_one,
)

COUNTS = {"HiSuit-HiVeg": 20, "LoSuit-HiVeg": 3, "HiSuit-LoVeg": 3, "LoSuit-LoVeg": 20}
HYPER = Hyperparams(learning_rate=3e-3, batch_size=16, epochs=10)


@pytest.fixture(scope="module")
def scene(small_spec, small_scene):
    cube, suitability = small_scene
    degraded, irrigated = synth_disturbance(suitability, seed=7)
    raster = synth_ndvi(small_spec, suitability, seed=7, years=(2020,), degraded=degraded, irrigated=irrigated)
    ndvi = regrid_ndvi(summer_ndvi_mean(raster, [2020]), raster.spec, small_spec)
    samples = synth_samples(small_spec, suitability, ndvi, seed=7, counts=COUNTS, valid=cube.mask)
    return cube, suitability, ndvi, samples


@pytest.fixture(scope="module")
def bank(scene):
    cube, _, _, samples = scene
    series = extract_sample_series(cube, samples)
    return build_feature_bank(series, samples, cube.variables, [2, 4], ae_bins=2)


@pytest.fixture(scope="module")
def trained(bank):
    specs = plan_runs(["blup", "nn"], [2, 4], [2], 2, root_seed=7)
    return run_training_grid(bank, specs, HYPER)


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------

def test_category_labels():
    assert Category.HISUIT_HIVEG.label == 1
    assert Category.HISUIT_LOVEG.label == 1
    assert Category.LOSUIT_HIVEG.label == 0
    assert Category.LOSUIT_LOVEG.label == 0
    assert CALIBRATION_CATEGORIES == (Category.HISUIT_HIVEG, Category.LOSUIT_LOVEG)


def test_spacing_violation():
    near = [
        LabeledSample("a", 20.0, 40.0, Category.HISUIT_HIVEG),
        LabeledSample("b", 20.05, 40.0, Category.LOSUIT_LOVEG),
    ]
    with pytest.raises(DataError, match="a and b"):
        check_spacing(near, 9.0)
    check_spacing(near, 5.0)


def test_synthetic_samples_follow_the_scene(scene, small_spec):
    _, suitability, ndvi, samples = scene
    found = pd.Series([s.category.value for s in samples]).value_counts().to_dict()
    assert found == COUNTS
    assert [s.sample_id for s in samples] == [f"s{n:04d}" for n in range(len(samples))]
    check_spacing(samples, 9.0)
    for s in samples:
        i, j = small_spec.nearest_index(s.lat, s.lon)
        assert (suitability[i, j] > 0.5) == bool(s.label)
        assert (ndvi[i, j] >= 0.15) == (s.category in (Category.HISUIT_HIVEG, Category.LOSUIT_HIVEG))


def test_synthetic_samples_are_seeded(scene, small_spec):
    _, suitability, ndvi, samples = scene
    again = synth_samples(small_spec, suitability, ndvi, seed=7, counts=COUNTS)
    assert [(s.lat, s.lon) for s in again] == [(s.lat, s.lon) for s in samples]


def test_too_many_samples_requested(scene, small_spec):
    _, suitability, ndvi, _ = scene
    with pytest.raises(DataError, match="LoSuit-HiVeg"):
        synth_samples(small_spec, suitability, ndvi, seed=7, counts={"LoSuit-HiVeg": 500})


def test_samples_file_round_trip(scene, tmp_path):
    samples = scene[3]
    save_samples(samples, tmp_path / "samples.csv")
    assert load_samples(tmp_path / "samples.csv") == samples


def test_samples_file_rejects_contradicting_label(scene, tmp_path):
    save_samples(scene[3], tmp_path / "samples.csv")
    df = pd.read_csv(tmp_path / "samples.csv")
    df.loc[0, "label"] = 1 - df.loc[0, "label"]
    df.to_csv(tmp_path / "samples.csv", index=False)
    with pytest.raises(DataError, match="contradicts"):
        load_samples(tmp_path / "samples.csv")


def test_samples_file_rejects_unknown_category(tmp_path):
    pd.DataFrame({"sample_id": ["a"], "lat": [20.0], "lon": [40.0], "category": ["Wet"]}).to_csv(
        tmp_path / "samples.csv", index=False
    )
    with pytest.raises(DataError, match="unknown category"):
        load_samples(tmp_path / "samples.csv")


# ---------------------------------------------------------------------------
# Seeds and splits
# ---------------------------------------------------------------------------

def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(7, "blup", 4, 0) == derive_seed(7, "blup", 4, 0)
    seeds = {derive_seed(7, kind, size, rep) for kind in ("blup", "nn") for size in (2, 4) for rep in range(3)}
    assert len(seeds) == 12
    assert derive_seed(7, "blup", 4, 0) != derive_seed(8, "blup", 4, 0)


def test_holdout_is_a_tenth():
    ids = [f"s{n:04d}" for n in range(230)]
    train, val = split_holdout(ids, 0.1, seed=3)
    assert len(val) == 23
    assert len(train) == 207
    assert set(train).isdisjoint(val)
    assert split_holdout(ids, 0.1, seed=3) == (train, val)


def test_holdout_too_small():
    with pytest.raises(DataError):
        split_holdout(["a", "b", "c"], 0.1)


def test_plan_shares_splits_across_kinds_and_sizes():
    specs = plan_runs(["blup", "nn"], [4, 2], [8], 3, root_seed=7)
    assert len(specs) == 9
    assert [s.run_id for s in specs[:3]] == ["blup-0002-r00", "blup-0002-r01", "blup-0002-r02"]
    by_rep = {}
    for s in specs:
        by_rep.setdefault(s.repetition, set()).add(s.split_seed)
    assert all(len(seeds) == 1 for seeds in by_rep.values())
    assert len({s.seed for s in specs}) == 9


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def test_feature_columns_of_a_prefix():
    assert feature_columns(2, 3, 2).tolist() == [0, 1, 2, 3, 6, 7, 8, 9]
    assert feature_columns(2, 3, 3).tolist() == list(range(12))


def test_bank_prefix_matrix_equals_a_direct_fit(scene, bank):
    cube, _, _, samples = scene
    series = extract_sample_series(cube, samples)
    direct = spectral.featurize(series, spectral.fit_tables(series, 2, cube.variables))
    np.testing.assert_allclose(bank.matrix("blup", 2), direct)
    assert bank.matrix("nn", 2).shape == (len(samples), 4 * 2 * 2)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def test_grid_results_keep_plan_order(trained):
    assert [r.run.spec.run_id for r in trained] == [
        "blup-0002-r00", "blup-0002-r01", "blup-0004-r00", "blup-0004-r01", "nn-0002-r00", "nn-0002-r01",
    ]


def test_blup_runs_report_metrics(trained, bank):
    run = trained[0].run
    assert run.status == "ok"
    assert len(run.holdout) == round(0.1 * len(bank.sample_ids))
    assert np.isfinite([run.train_rmse, run.val_rmse, run.train_r]).all()
    assert run.train_r > 0.5


def test_same_repetition_holds_out_the_same_samples(trained):
    by_rep = {}
    for res in trained:
        by_rep.setdefault(res.run.spec.repetition, set()).add(res.run.holdout)
    assert all(len(h) == 1 for h in by_rep.values())


def test_training_is_reproducible(trained, bank):
    spec = trained[4].run.spec
    again = train_one(spec, bank, HYPER)
    np.testing.assert_array_equal(again.predictions["prediction"], trained[4].predictions["prediction"])


def test_metrics_recomputed_from_predictions(trained):
    predictions = pd.concat([r.predictions for r in trained], ignore_index=True)
    recomputed = recompute_metrics(predictions).sort_values(["kind", "size", "repetition"]).reset_index(drop=True)
    recorded = metrics_frame([r.run for r in trained]).sort_values(["kind", "size", "repetition"]).reset_index(drop=True)
    pd.testing.assert_frame_equal(recomputed, recorded, check_dtype=False)


def test_aggregate_skips_diverged_runs(trained):
    runs = [r.run for r in trained]
    broken = dataclasses.replace(runs[0], status="diverged", train_rmse=float("nan"))
    table = aggregate_runs([broken, *runs[1:]]).set_index(["kind", "size"])
    assert table.loc[("blup", 2), "n_runs"] == 1
    assert table.loc[("blup", 4), "n_runs"] == 2
    assert table.loc[("blup", 4), "val_rmse_mean"] == pytest.approx(np.mean([runs[2].val_rmse, runs[3].val_rmse]))


def test_ensemble_averages_every_model_of_a_repetition():
    rows = []
    for kind, size, preds in (("blup", 2, [0.2, 0.6, 0.9]), ("blup", 4, [0.4, 0.4, 0.7]), ("nn", 2, [0.0, 0.8, 0.8])):
        for sid, label, pred in zip(["a", "b", "c"], [0.0, 1.0, 1.0], preds):
            rows.append({"kind": kind, "size": size, "repetition": 0, "sample_id": sid, "split": "val", "label": label, "prediction": pred})
        rows.append({"kind": kind, "size": size, "repetition": 0, "sample_id": "d", "split": "train", "label": 0.0, "prediction": 5.0})
    ensemble = ensemble_validation(pd.DataFrame(rows))
    assert ensemble["repetition"].tolist() == [0]
    assert ensemble.loc[0, "n_models"] == 3
    mean = np.array([0.2, 0.6, 0.8])
    assert ensemble.loc[0, "val_r"] == pytest.approx(np.corrcoef(mean, [0.0, 1.0, 1.0])[0, 1])
    assert ensemble.loc[0, "val_rmse"] == pytest.approx(np.sqrt(np.mean((mean - [0.0, 1.0, 1.0]) ** 2)))


def test_ensemble_of_the_trained_grid(trained):
    predictions = pd.concat([r.predictions for r in trained if r.model is not None], ignore_index=True)
    ensemble = ensemble_validation(predictions)
    assert ensemble["repetition"].tolist() == [0, 1]
    per_rep = [sum(r.model is not None and r.run.spec.repetition == rep for r in trained) for rep in (0, 1)]
    assert ensemble["n_models"].tolist() == per_rep
    assert np.isfinite(ensemble["val_rmse"]).all()


def test_diverged_network_run_is_recorded(bank):
    spec = plan_runs(["nn"], [], [2], 1, root_seed=7)[0]
    wild = Hyperparams(learning_rate=1e250, batch_size=8, epochs=3, noise_std=0.0, dropout=0.0)
    with np.errstate(all="ignore"):
        result = train_one(spec, bank, wild)
    assert result.run.status == "diverged"
    assert result.model is None
    assert "diverged" in result.run.message


# ---------------------------------------------------------------------------
# Reclassification and calibration
# ---------------------------------------------------------------------------

def test_combined_score_is_the_model_level_mean(trained, bank, scene):
    models = [r.model for r in trained if r.model is not None]
    scores = model_scores(models, bank)
    table = reclassify(scores, scene[3]).set_index("sample_id")
    first = bank.sample_ids[0]
    per_model = scores[scores.sample_id == first]
    assert table.loc[first, "combined"] == pytest.approx(per_model.score.mean())
    assert table.loc[first, "blup"] == pytest.approx(per_model[per_model.kind == "blup"].score.mean())
    means = category_means(table.reset_index())
    assert means["HiSuit-HiVeg"] > means["LoSuit-LoVeg"]


def test_calibration_recovers_an_exact_line():
    scores = np.array([0.0, 0.2, 0.5, 0.9, 1.0, 0.4])
    ndvi = 0.3 * scores + 0.05
    categories = ["HiSuit-HiVeg", "LoSuit-LoVeg", "HiSuit-HiVeg", "LoSuit-LoVeg", "HiSuit-HiVeg", "LoSuit-HiVeg"]
    ndvi[-1] = 0.9  # excluded category
    cal = fit_calibration(scores, ndvi, categories)
    assert cal.slope == pytest.approx(0.3)
    assert cal.intercept == pytest.approx(0.05)
    assert cal.r2 == pytest.approx(1.0)
    assert cal.n == 5
    np.testing.assert_allclose(calibrated(cal, [0.0, 1.0]), [0.05, 0.35])


def test_calibration_needs_spread():
    with pytest.raises(CalibrationError):
        fit_calibration([0.5, 0.5], [0.1, 0.2], ["HiSuit-HiVeg", "LoSuit-LoVeg"])


@pytest.mark.parametrize("a, b", [(2.0, 0.0), (0.5, -0.3), (-1.5, 4.0)])
def test_calibration_is_invariant_to_affine_score_changes(rng, a, b):
    scores = rng.uniform(0.0, 1.0, 40)
    ndvi = 0.25 * scores + 0.08 + 0.02 * rng.standard_normal(40)
    categories = rng.choice([c.value for c in Category], 40)
    base = fit_calibration(scores, ndvi, categories)
    moved = fit_calibration(a * scores + b, ndvi, categories)
    assert moved.slope == pytest.approx(base.slope / a)
    assert moved.r2 == pytest.approx(base.r2)
    assert moved.n == base.n
    np.testing.assert_allclose(calibrated(moved, a * scores + b), calibrated(base, scores), atol=1e-10)


def test_overlap_rankings_use_one_category():
    reclass = pd.DataFrame(
        {
            "sample_id": ["a", "b", "c"],
            "category": ["HiSuit-HiVeg", "HiSuit-HiVeg", "LoSuit-LoVeg"],
            "blup": [0.9, 0.8, 0.1],
            "combined": [0.9, 0.7, 0.2],
            "ndvi": [0.3, 0.4, 0.05],
        }
    )
    rankings = overlap_rankings(reclass)
    assert sorted(rankings) == ["blup", "combined", "ndvi"]
    assert list(rankings["ndvi"].index) == ["a", "b"]


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

def test_map_pixels_match_sample_predictions(trained, bank, scene):
    cube, _, _, samples = scene
    models = [r.model for r in trained if r.model is not None]
    maps = predict_map(models, cube, bank, [2, 4])
    assert sorted(maps) == ["blup", "combined", "nn"]
    combined = maps["combined"]
    assert len(combined.provenance) == len(models)
    scores = model_scores(models, bank).groupby("sample_id")["score"].mean()
    for s in samples[:5]:
        i, j = cube.spec.nearest_index(s.lat, s.lon)
        assert combined.values[i, j] == pytest.approx(scores[s.sample_id], abs=1e-6)


def test_maps_refuse_foreign_lineage(trained, bank):
    model = dataclasses.replace(trained[0].model, lineage="0" * 64)
    with pytest.raises(LineageError):
        resolve_tables([model], bank, [2, 4])


def test_maps_refuse_a_model_stamped_with_another_size(trained, bank):
    blup = [r.model for r in trained if r.model is not None and r.model.kind == "blup"]
    small = next(m for m in blup if m.size == 2)
    large = next(m for m in blup if m.size == 4)
    resolve_tables([small, large], bank, [2, 4])
    with pytest.raises(LineageError, match="not in the feature artifact"):
        resolve_tables([dataclasses.replace(small, lineage=large.lineage)], bank, [2, 4])


def test_maps_refuse_a_missing_table(trained, bank):
    model = next(r.model for r in trained if r.model is not None and r.model.kind == "blup")
    with pytest.raises(LineageError, match="does not hold"):
        resolve_tables([model], bank, [])


def test_css_raster_needs_provenance(small_spec):
    with pytest.raises(DataError):
        CssRaster(small_spec, np.zeros(small_spec.shape), (), np.ones(small_spec.shape, bool))
