"""Prefect flows, one per pipeline stage, over a work directory of artifacts.

Work directory layout::

    manifest.json
    cube/  ndvi/  truth/  samples.csv          synth
    features/{tables.json, bank.*, ndvi_summer.*}
    models/<run>.*  train/{runs.json, metrics.csv, aggregate.csv, predictions.csv, ensemble.csv}
    predict/{css_<kind>.*, agreement.json}
    calibrate/{calibration.json, reclassified.csv, category_means.csv, overlap.csv}
    opportunity/{difference.*, css_ndvi_units.*}
    candidates/{candidates.csv, retained.csv}
    analogs/{matches.csv, no_analog.csv, uplift.json, uplift.csv, distance_site<NN>.*}
    report/{summary.txt, *.ppm}
"""
from __future__ import annotations

import hashlib
import json
import math
import shutil
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
from prefect import flow, get_run_logger, task
from prefect.cache_policies import NO_CACHE
from prefect.task_runners import ThreadPoolTaskRunner
from prefect.utilities.annotations import quote

from drycss import helper, metrics, opportunity, pipeline, spectral
from drycss.blup import load_blup, save_blup
from drycss.bundles import read_bundle, write_bundle
from drycss.config import RunConfig, load_config
from drycss.errors import ArtifactMissingError, CubeExistsError, DataError
from drycss.grid_store import (
    ClimateCube,
    load_cube,
    load_ndvi,
    read_grid,
    regrid_ndvi,
    save_cube,
    save_ndvi,
    summer_ndvi_mean,
    synth_cube,
    synth_disturbance,
    synth_ndvi,
    write_grid,
)
from drycss.neural import load_nn, save_nn

STAGES = ("synth", "features", "train", "predict", "calibrate", "opportunity", "candidates", "analogs", "report")
DATA_DIR = Path(__file__).parent / "data"
ROW_BLOCKS_PER_WORKER = 4


# ---------------------------------------------------------------------------
# Work directory and manifest
# ---------------------------------------------------------------------------

def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Workdir:
    def __init__(self, cfg: RunConfig, force: bool = False):
        self.root = Path(cfg.paths.workdir)
        self.cfg = cfg
        self.force = force
        self.root.mkdir(parents=True, exist_ok=True)

    def __truediv__(self, rel: str) -> Path:
        return self.root / rel

    def require(self, rel: str, stage: str) -> Path:
        path = self.root / rel
        if not path.exists():
            raise ArtifactMissingError(path, stage)
        return path

    def claim(self, *rels: str) -> None:
        """Refuse to overwrite earlier outputs unless forced; forced runs start from a clean slate."""
        existing = [self.root / r for r in rels if (self.root / r).exists()]
        if existing and not self.force:
            raise CubeExistsError(f"{existing[0]} already exists; pass --force to overwrite")
        for path in existing:
            if path.is_dir():
                shutil.rmtree(path)
            else:
                path.unlink()

    def record(self, stage: str, paths: list[Path]) -> dict[str, str]:
        files = []
        for p in paths:
            p = Path(p)
            if p.is_dir():
                files += [f for f in sorted(p.rglob("*")) if f.is_file()]
            else:
                files.append(p)
        artifacts = {f.relative_to(self.root).as_posix(): sha256_file(f) for f in files}
        manifest_path = self.root / "manifest.json"
        manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"stages": {}}
        manifest["root_seed"] = self.cfg.root_seed
        manifest["config_digest"] = self.cfg.digest()
        manifest["grid"] = self.cfg.grid.model_dump(mode="json")
        manifest["stages"][stage] = {
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "artifacts": artifacts,
        }
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return artifacts


def resolve_data_file(name: str | Path) -> Path:
    """A path as given, or a bare name from the shipped data directory."""
    path = Path(name)
    if path.exists():
        return path
    if (DATA_DIR / path.name).exists():
        return DATA_DIR / path.name
    raise DataError(f"file {name} not found (also looked in {DATA_DIR})")


def with_jobs(stage_flow, jobs: int):
    return stage_flow.with_options(task_runner=ThreadPoolTaskRunner(max_workers=jobs))


# ---------------------------------------------------------------------------
# Artifact loaders
# ---------------------------------------------------------------------------

def _cube_path(wd: Workdir) -> Path:
    return Path(wd.cfg.paths.cube) if wd.cfg.paths.cube else wd.require("cube", "synth")


def _samples_path(wd: Workdir) -> Path:
    return Path(wd.cfg.paths.samples) if wd.cfg.paths.samples else wd.require("samples.csv", "synth")


def load_feature_bank(wd: Workdir) -> pipeline.FeatureBank:
    tables = spectral.load_tables(wd.require("features/tables.json", "features"))
    header, arrays = read_bundle(wd / "features/bank", stage="features")
    names = [n for n in ("blup", "nn") if n in arrays]
    return pipeline.FeatureBank(
        tuple(header["sample_ids"]),
        np.asarray(header["labels"], dtype=np.float64),
        {n: tables[n] for n in names},
        {n: arrays[n].astype(np.float64) for n in names},
    )


def load_summer_ndvi(wd: Workdir) -> np.ndarray:
    values, _, _ = read_grid(wd.require("features/ndvi_summer.f32", "features"))
    return values


def load_models(wd: Workdir) -> list[pipeline.CssModel]:
    runs = json.loads(wd.require("train/runs.json", "train").read_text())
    models = []
    for rec in runs:
        if rec["status"] != "ok":
            continue
        path = wd / rec["bundle"]
        fitted = load_blup(path) if rec["kind"] == "blup" else load_nn(path)
        models.append(
            pipeline.CssModel(
                rec["kind"], rec["size"], rec["repetition"], rec["seed"], fitted.lineage, fitted, Path(rec["bundle"]).name
            )
        )
    if not models:
        raise DataError("no converged models in train/runs.json")
    return models


def _sample_ndvi(samples: list[pipeline.LabeledSample], summer: np.ndarray, cube: ClimateCube) -> list[pipeline.LabeledSample]:
    out = []
    for s in samples:
        if math.isfinite(s.ndvi):
            out.append(s)
        else:
            i, j = cube.spec.nearest_index(s.lat, s.lon)
            out.append(pipeline.LabeledSample(s.sample_id, s.lat, s.lon, s.category, float(summer[i, j])))
    return out


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

@task(cache_policy=NO_CACHE)
def train_run_task(spec: pipeline.RunSpec, bank, hyper, holdout, blup_lambda, tune_lambda) -> pipeline.RunResult:
    return pipeline.train_one(spec, bank, hyper, holdout, blup_lambda, tune_lambda)


@task(cache_policy=NO_CACHE)
def predict_rows_task(models, cube, bank, rows: list[int]):
    return pipeline.predict_rows(models, cube, bank, rows)


@task(cache_policy=NO_CACHE)
def analog_task(site: int, pixel: tuple[int, int], vectors, ndvi, spec, exclusion, analogs_cfg):
    distances = opportunity.climate_distance_map(vectors, pixel)
    result = opportunity.find_analog(
        site,
        pixel,
        distances,
        ndvi,
        spec,
        exclusion=exclusion,
        max_climate_dist=analogs_cfg.max_climate_dist,
        min_ndvi_margin=analogs_cfg.min_ndvi_margin,
        distance_percentile=analogs_cfg.distance_percentile,
    )
    return result, distances


# ---------------------------------------------------------------------------
# Stage flows
# ---------------------------------------------------------------------------

@flow(name="drycss-synth")
def synth_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    wd.claim("cube", "ndvi", "truth", "samples.csv")
    spec, seed = cfg.grid.spec(), cfg.root_seed
    cube, suitability = synth_cube(spec, cfg.grid.time(), seed, tuple(cfg.grid.variables))
    save_cube(cube, wd / "cube", force=True)
    degraded, irrigated = synth_disturbance(suitability, seed, margin=cfg.training.sample_margin)
    raster = synth_ndvi(
        spec, suitability, seed, cfg.grid.ndvi_years, degraded, irrigated, refine=cfg.grid.ndvi_refine
    )
    save_ndvi(raster, wd / "ndvi", force=True)
    summer = regrid_ndvi(summer_ndvi_mean(raster, cfg.grid.ndvi_years), raster.spec, spec)
    samples = pipeline.synth_samples(
        spec,
        suitability,
        summer,
        seed,
        cfg.training.counts,
        margin=cfg.training.sample_margin,
        ndvi_threshold=cfg.thresholds.ndvi_vegetation,
        min_spacing_km=cfg.thresholds.min_spacing_km,
        valid=cube.mask,
    )
    pipeline.save_samples(samples, wd / "samples.csv")
    write_grid(wd / "truth/suitability", suitability, spec, kind="planted suitability")
    write_grid(wd / "truth/degraded", degraded.astype(np.float32), spec, kind="degraded mask")
    write_grid(wd / "truth/irrigated", irrigated.astype(np.float32), spec, kind="irrigated mask")
    logger.info(f"Synthetic scene: {spec.n_lat}x{spec.n_lon} grid, {cube.time.n_steps} steps, {len(samples)} samples")
    return wd.record("synth", [wd / "cube", wd / "ndvi", wd / "truth", wd / "samples.csv"])


@flow(name="drycss-features")
def features_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    cube = load_cube(_cube_path(wd))
    raster = load_ndvi(cfg.paths.ndvi or wd.require("ndvi", "synth"))
    samples = pipeline.load_samples(_samples_path(wd), cfg.thresholds.min_spacing_km)
    wd.claim("features")

    summer = regrid_ndvi(summer_ndvi_mean(raster, cfg.grid.ndvi_years), raster.spec, cube.spec)
    write_grid(wd / "features/ndvi_summer", summer, cube.spec, kind="summer NDVI mean", years=cfg.grid.ndvi_years)
    series = pipeline.extract_sample_series(cube, samples)
    bank = pipeline.build_feature_bank(
        series, samples, cube.variables, cfg.training.blup_sizes, cfg.training.ae_bins, cfg.training.kinds
    )
    distance = spectral.distance_tables(series, cube.variables, cfg.analogs.channels, cfg.analogs.mode)
    spectral.save_tables({**bank.tables, "distance": distance}, wd / "features/tables.json")
    write_bundle(
        wd / "features/bank",
        {"kind": "features", "sample_ids": list(bank.sample_ids), "labels": bank.labels.tolist()},
        bank.matrices,
    )
    logger.info(f"Features for {len(samples)} samples: " + ", ".join(f"{k} {m.shape[1]}" for k, m in bank.matrices.items()))
    return wd.record("features", [wd / "features"])


@flow(name="drycss-train")
def train_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    bank = load_feature_bank(wd)
    wd.claim("models", "train")
    t = cfg.training
    specs = pipeline.plan_runs(t.kinds, t.blup_sizes, t.nn_sizes, t.repetitions, cfg.root_seed)
    hyper = cfg.network.hyperparams()
    logger.info(f"Training {len(specs)} runs on {cfg.jobs} workers")
    futures = [train_run_task.submit(s, quote(bank), hyper, t.holdout, t.blup_lambda, t.select_lambda) for s in specs]
    results = [f.result() for f in futures]

    for res in results:
        if res.model is None:
            continue
        save = save_blup if res.model.kind == "blup" else save_nn
        stem = save(res.model.model, wd / "models" / res.run.spec.run_id)
        res.run.bundle = stem.relative_to(wd.root).as_posix()

    runs = [r.run for r in results]
    (wd / "train").mkdir(parents=True, exist_ok=True)
    (wd / "train/runs.json").write_text(json.dumps([r.record() for r in runs], indent=2))
    helper.write_csv(pipeline.metrics_frame(runs), wd / "train/metrics.csv")
    helper.write_csv(pipeline.aggregate_runs(runs), wd / "train/aggregate.csv")
    predictions = [r.predictions for r in results if not r.predictions.empty]
    helper.write_csv(pd.concat(predictions, ignore_index=True) if predictions else pd.DataFrame(), wd / "train/predictions.csv")
    if predictions:
        ensemble = pipeline.ensemble_validation(pd.concat(predictions, ignore_index=True))
        helper.write_csv(ensemble, wd / "train/ensemble.csv")
        logger.info(f"Combined ensemble validation r {ensemble['val_r'].mean():.3f} over {len(ensemble)} repetitions")
    diverged = sum(r.status != "ok" for r in runs)
    print(f"Trained {len(runs) - diverged} models ({diverged} diverged)")
    return wd.record("train", [wd / "models", wd / "train"])


@flow(name="drycss-predict")
def predict_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    models = load_models(wd)
    bank = load_feature_bank(wd)
    cube = load_cube(_cube_path(wd))
    pipeline.resolve_tables(models, bank, cfg.training.blup_sizes)
    wd.claim("predict")

    n_lat = cube.spec.n_lat
    block = max(1, math.ceil(n_lat / (ROW_BLOCKS_PER_WORKER * cfg.jobs)))
    blocks = [list(range(r, min(r + block, n_lat))) for r in range(0, n_lat, block)]
    futures = [predict_rows_task.submit(quote(models), quote(cube), quote(bank), rows) for rows in blocks]
    parts = [f.result() for f in futures]
    maps = pipeline.assemble_maps(models, cube.spec, cube.mask, parts)
    for name, raster in maps.items():
        write_grid(wd / f"predict/css_{name}", raster.values, raster.spec, provenance=list(raster.provenance))

    agreement = {"threshold": cfg.thresholds.css}
    if "blup" in maps and "nn" in maps:
        agreement["iou_blup_nn"] = metrics.map_agreement_iou(
            maps["blup"].values, maps["nn"].values, cfg.thresholds.css, cube.mask
        )
    truth = wd / "truth/suitability.f32"
    if truth.exists() and cfg.paths.cube is None:
        planted, _, _ = read_grid(truth)
        valid = cube.mask & np.isfinite(maps["combined"].values)
        agreement["pixel_r_planted"] = {
            name: metrics.pearson(r.values[valid], planted[valid]) for name, r in maps.items()
        }
    (wd / "predict/agreement.json").write_text(json.dumps(agreement, indent=2, sort_keys=True))
    logger.info(f"CSS maps from {len(models)} models: {sorted(maps)}")
    return wd.record("predict", [wd / "predict"])


@flow(name="drycss-calibrate")
def calibrate_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    models = load_models(wd)
    bank = load_feature_bank(wd)
    cube = load_cube(_cube_path(wd))
    samples = _sample_ndvi(
        pipeline.load_samples(_samples_path(wd), cfg.thresholds.min_spacing_km), load_summer_ndvi(wd), cube
    )
    wd.claim("calibrate")

    reclass = pipeline.reclassify(pipeline.model_scores(models, bank), samples)
    cal = pipeline.fit_calibration(reclass["combined"], reclass["ndvi"], reclass["category"])
    out = wd / "calibrate"
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.json").write_text(json.dumps(cal.to_dict(), indent=2, sort_keys=True))
    helper.write_csv(reclass, out / "reclassified.csv")
    score_columns = [c for c in ("blup", "nn", "combined") if c in reclass]
    helper.write_csv(reclass.groupby("category", sort=True)[score_columns].mean().reset_index(), out / "category_means.csv")

    rankings = pipeline.overlap_rankings(reclass)
    n = min(cfg.thresholds.overlap_n, len(next(iter(rankings.values()))))
    if n >= 1:
        helper.write_csv(metrics.ranking_overlap(rankings, n), out / "overlap.csv")
    logger.info(f"Calibration NDVI = {cal.slope:.4f} * CSS + {cal.intercept:.4f} (r2 {cal.r2:.3f}, n {cal.n})")
    return wd.record("calibrate", [out])


@flow(name="drycss-opportunity")
def opportunity_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    wd = Workdir(cfg, force)
    values, spec, meta = read_grid(wd.require("predict/css_combined.f32", "predict"))
    css = pipeline.CssRaster(spec, values, tuple(meta["provenance"]), np.isfinite(values))
    cal = pipeline.Calibration.from_dict(json.loads(wd.require("calibrate/calibration.json", "calibrate").read_text()))
    ndvi = load_summer_ndvi(wd)
    wd.claim("opportunity")

    diff = opportunity.opportunity_map(css, ndvi, cal)
    write_grid(wd / "opportunity/difference", diff, spec, calibration=cal.to_dict())
    write_grid(wd / "opportunity/css_ndvi_units", pipeline.calibrated(cal, css.values), spec)
    positive = int(np.sum(diff > 0))
    print(f"Opportunity map: {positive} pixels with calibrated CSS above NDVI")
    return wd.record("opportunity", [wd / "opportunity"])


@flow(name="drycss-candidates")
def candidates_flow(
    cfg: RunConfig,
    force: bool = False,
    rules: str | None = None,
    attributes: str | None = None,
    sites_from_attributes: bool = False,
) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    table = opportunity.load_attribute_table(resolve_data_file(attributes)) if attributes else None
    have_scene = (wd / "opportunity/difference.f32").exists()

    if sites_from_attributes or (table is not None and not have_scene):
        if table is None:
            raise DataError("--sites-from-attributes needs --attributes")
        sites = opportunity.sites_from_table(table)
        logger.info(f"{len(sites)} candidates taken from the attribute table")
    else:
        diff, spec, _ = read_grid(wd.require("opportunity/difference.f32", "opportunity"))
        css, _, _ = read_grid(wd.require("predict/css_combined.f32", "predict"))
        sites = opportunity.extract_candidates(
            diff, spec, cfg.thresholds.candidate_count, cfg.thresholds.min_spacing_km, css, load_summer_ndvi(wd)
        )
        if table is not None:
            sites = opportunity.join_attributes(sites, table, spec)
    if rules:
        sites = opportunity.apply_rules(sites, opportunity.load_rules(resolve_data_file(rules)))

    wd.claim("candidates")
    frame = opportunity.candidates_frame(sites)
    helper.write_csv(frame, wd / "candidates/candidates.csv")
    retained = [s for s in sites if s.retained]
    helper.write_csv(opportunity.candidates_frame(retained), wd / "candidates/retained.csv")
    print(f"Candidates: {len(sites)} extracted, {len(retained)} retained" if rules else f"Candidates: {len(sites)} extracted")
    return wd.record("candidates", [wd / "candidates"])


@flow(name="drycss-analogs")
def analogs_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    logger = get_run_logger()
    wd = Workdir(cfg, force)
    cube = load_cube(_cube_path(wd))
    ndvi = load_summer_ndvi(wd)
    distance = spectral.load_tables(wd.require("features/tables.json", "features"))["distance"]
    table = pd.read_csv(wd.require("candidates/candidates.csv", "candidates"), keep_default_na=False, na_values=[""])
    exclusion = None
    if cfg.paths.exclusion:
        mask, _, _ = read_grid(cfg.paths.exclusion)
        exclusion = np.nan_to_num(mask) > 0
    wd.claim("analogs")

    table = opportunity.analog_targets(table)

    vectors = opportunity.distance_vectors(cube, distance, cfg.analogs.normalized)
    sites = [(int(r.site), cube.spec.nearest_index(r.lat, r.lon)) for r in table.itertuples(index=False)]
    futures = [
        analog_task.submit(site, pixel, quote(vectors), quote(ndvi), cube.spec, quote(exclusion), cfg.analogs) for site, pixel in sites
    ]
    results = [f.result() for f in futures]

    out = wd / "analogs"
    matches, misses = [], []
    for (site, _), (result, dist_map) in zip(sites, results):
        write_grid(out / f"distance_site{site:02d}", dist_map, cube.spec, site=site)
        if isinstance(result, opportunity.AnalogMatch):
            matches.append(result)
        else:
            misses.append({"site": result.site, "constraint": result.constraint, "detail": result.detail})
            logger.warning(f"No analog for site {result.site}: {result.detail}")
    helper.write_csv(opportunity.matches_frame(matches), out / "matches.csv")
    helper.write_csv(pd.DataFrame(misses, columns=["site", "constraint", "detail"]), out / "no_analog.csv")
    if matches:
        uplift = opportunity.uplift_report(matches)
        helper.write_csv(uplift.per_site, out / "uplift.csv")
        (out / "uplift.json").write_text(json.dumps(uplift.summary(), indent=2, sort_keys=True))
    print(f"Analogs: {len(matches)} matched, {len(misses)} without analog")
    return wd.record("analogs", [out])


@flow(name="drycss-report")
def report_flow(cfg: RunConfig, force: bool = False) -> dict[str, str]:
    wd = Workdir(cfg, force)
    aggregate = pd.read_csv(wd.require("train/aggregate.csv", "train"))
    wd.claim("report")
    out = wd / "report"
    out.mkdir(parents=True, exist_ok=True)
    sections = [helper.format_metrics_table(aggregate)]
    ensemble = wd / "train/ensemble.csv"
    if ensemble.exists():
        sections.append(helper.format_table(pd.read_csv(ensemble), "COMBINED ENSEMBLE (validation, per repetition)"))

    for grid in sorted((wd / "predict").glob("css_*.f32")):
        values, _, _ = read_grid(grid)
        helper.write_heatmap(values, out / grid.stem, vmin=0.0, vmax=1.0)
    heatmaps = {
        "features/ndvi_summer.f32": "ndvi_summer",
        "opportunity/difference.f32": "difference",
    }
    heatmaps.update({f"analogs/{p.name}": p.stem for p in sorted((wd / "analogs").glob("distance_site*.f32"))})
    for rel, name in heatmaps.items():
        if (wd / rel).exists():
            values, _, _ = read_grid(wd / rel)
            helper.write_heatmap(values, out / name)

    agreement = wd / "predict/agreement.json"
    if agreement.exists():
        doc = json.loads(agreement.read_text())
        lines = [f"Map agreement at CSS threshold {doc['threshold']}"]
        if "iou_blup_nn" in doc:
            lines.append(f"  IoU blup vs nn        : {doc['iou_blup_nn']:.4f}")
        for name, r in sorted(doc.get("pixel_r_planted", {}).items()):
            lines.append(f"  pixel r vs planted ({name}): {r:.4f}")
        sections.append("\n".join(lines))
    means = wd / "calibrate/category_means.csv"
    if means.exists():
        sections.append(helper.format_table(pd.read_csv(means), "RECLASSIFICATION (mean score per category)"))
    overlap = wd / "calibrate/overlap.csv"
    if overlap.exists():
        sections.append(helper.format_table(pd.read_csv(overlap), "RANKING OVERLAP"))
    uplift = wd / "analogs/uplift.json"
    if uplift.exists():
        sections.append(helper.format_uplift_summary(json.loads(uplift.read_text())))

    summary = "\n\n".join(sections) + "\n"
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary)
    return wd.record("report", [out])


@flow(name="drycss-run-all")
def run_all_flow(cfg: RunConfig | None = None, config_path: str | None = None, force: bool = False) -> dict[str, dict]:
    """synth -> features -> train -> predict -> calibrate -> opportunity -> candidates -> analogs -> report."""
    cfg = cfg or load_config(config_path)
    runs = {
        "synth": synth_flow,
        "features": features_flow,
        "train": with_jobs(train_flow, cfg.jobs),
        "predict": with_jobs(predict_flow, cfg.jobs),
        "calibrate": calibrate_flow,
        "opportunity": opportunity_flow,
        "candidates": candidates_flow,
        "analogs": with_jobs(analogs_flow, cfg.jobs),
        "report": report_flow,
    }
    return {stage: stage_flow(cfg, force) for stage, stage_flow in runs.items()}
