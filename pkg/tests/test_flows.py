import json

import numpy as np
import pandas as pd
import pytest

from drycss import flows
from drycss.config import load_config
from drycss.errors import ArtifactMissingError, CubeExistsError
from drycss.grid_store import read_grid

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def staged(prefect_harness, overrides_for, tmp_path_factory):
    """One full small run, driven stage by stage."""
    cfg = load_config(None, overrides_for(tmp_path_factory.mktemp("staged")) | {"jobs": 2})
    artifacts = {}
    for stage in ("synth", "features", "train", "predict", "calibrate", "opportunity"):
        artifacts[stage] = getattr(flows, f"{stage}_flow")(cfg)
    artifacts["candidates"] = flows.candidates_flow(cfg)
    artifacts["analogs"] = flows.analogs_flow(cfg)
    artifacts["report"] = flows.report_flow(cfg)
    return cfg, artifacts


def test_manifest_lists_every_stage(staged):
    cfg, artifacts = staged
    manifest = json.loads((cfg.paths.workdir / "manifest.json").read_text())
    assert list(artifacts) == list(flows.STAGES)
    assert set(manifest["stages"]) == set(flows.STAGES)
    assert manifest["root_seed"] == cfg.root_seed
    assert manifest["config_digest"] == cfg.digest()
    for stage, files in artifacts.items():
        assert manifest["stages"][stage]["artifacts"] == files
        for rel, digest in files.items():
            assert flows.sha256_file(cfg.paths.workdir / rel) == digest


def test_training_outputs(staged):
    cfg, _ = staged
    runs = json.loads((cfg.paths.workdir / "train/runs.json").read_text())
    # 2 blup sizes + 2 nn sizes, 2 repetitions each
    assert len(runs) == 8
    ok = [r for r in runs if r["status"] == "ok"]
    assert ok and all((cfg.paths.workdir / f"{r['bundle']}.json").exists() for r in ok)
    aggregate = pd.read_csv(cfg.paths.workdir / "train/aggregate.csv")
    assert set(aggregate["kind"]) <= {"blup", "nn"}


def test_maps_cover_valid_pixels(staged):
    cfg, _ = staged
    combined, spec, meta = read_grid(cfg.paths.workdir / "predict/css_combined.f32")
    assert spec == cfg.grid.spec()
    assert np.isfinite(combined).any()
    assert len(meta["provenance"]) > 0
    agreement = json.loads((cfg.paths.workdir / "predict/agreement.json").read_text())
    assert agreement["threshold"] == cfg.thresholds.css
    assert set(agreement["pixel_r_planted"]) == {"blup", "nn", "combined"}


def test_candidates_and_analogs(staged):
    cfg, _ = staged
    candidates = pd.read_csv(cfg.paths.workdir / "candidates/candidates.csv")
    assert len(candidates) <= cfg.thresholds.candidate_count
    assert candidates["opportunity"].is_monotonic_decreasing
    matches = pd.read_csv(cfg.paths.workdir / "analogs/matches.csv")
    misses = pd.read_csv(cfg.paths.workdir / "analogs/no_analog.csv")
    assert len(matches) + len(misses) == len(candidates)
    assert len(list((cfg.paths.workdir / "analogs").glob("distance_site*.f32"))) == len(candidates)


def test_report_summary(staged):
    cfg, _ = staged
    summary = (cfg.paths.workdir / "report/summary.txt").read_text(encoding="utf-8")
    assert "TRAINING METRICS" in summary
    assert "RECLASSIFICATION" in summary
    assert (cfg.paths.workdir / "report/css_combined.ppm").exists()


def test_stage_refuses_to_overwrite(staged):
    cfg, _ = staged
    with pytest.raises(CubeExistsError, match="--force"):
        flows.opportunity_flow(cfg)


def test_stage_needs_upstream_artifacts(prefect_harness, small_config):
    with pytest.raises(ArtifactMissingError, match="drycss synth"):
        flows.features_flow(small_config)


def test_same_seed_same_artifacts_for_any_worker_count(staged, prefect_harness, overrides_for, tmp_path):
    cfg, artifacts = staged
    again = load_config(None, overrides_for(tmp_path / "again") | {"jobs": 1})
    results = flows.run_all_flow(again)
    for stage in ("synth", "features", "train", "predict", "calibrate", "opportunity", "candidates"):
        assert results[stage] == artifacts[stage], stage
