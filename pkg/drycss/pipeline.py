"""Training grid, ensembles, reclassification, calibration and CSS maps.

Everything here is plain, deterministic Python; ``drycss.flows`` wraps the
parallel pieces (one training run, one block of map rows) as Prefect tasks.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import pandas as pd
from prefect.logging import get_logger
from scipy.stats import linregress

from drycss import spectral
from drycss.blup import BlupModel, fit_blup, predict_blup, select_lambda
from drycss.bundles import check_lineage
from drycss.errors import (
    CalibrationError,
    DataError,
    LineageError,
    NumericalError,
    TrainingDivergedError,
)
from drycss.grid_store import ClimateCube, GridSpec, sample_series
from drycss.metrics import pearson, rmse
from drycss.neural import Hyperparams, NnModel, encode, predict_nn, train_autoencoder, train_classifier
from drycss.opportunity import great_circle_km

logger = get_logger(__name__)

MIN_SAMPLE_SPACING_KM = 9.0
KIND_CODES = {"blup": 1, "nn": 2}


# ---------------------------------------------------------------------------
# Labeled samples
# ---------------------------------------------------------------------------

class Category(StrEnum):
    HISUIT_HIVEG = "HiSuit-HiVeg"
    LOSUIT_HIVEG = "LoSuit-HiVeg"
    HISUIT_LOVEG = "HiSuit-LoVeg"
    LOSUIT_LOVEG = "LoSuit-LoVeg"

    @property
    def label(self) -> int:
        return int(self in (Category.HISUIT_HIVEG, Category.HISUIT_LOVEG))


CALIBRATION_CATEGORIES = (Category.HISUIT_HIVEG, Category.LOSUIT_LOVEG)


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    lat: float
    lon: float
    category: Category
    ndvi: float = float("nan")

    @property
    def label(self) -> int:
        return self.category.label


def check_spacing(samples: list[LabeledSample], min_km: float = MIN_SAMPLE_SPACING_KM) -> None:
    if len(samples) < 2:
        return
    lat = np.array([s.lat for s in samples])
    lon = np.array([s.lon for s in samples])
    dist = great_circle_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
    np.fill_diagonal(dist, np.inf)
    i, j = np.unravel_index(np.argmin(dist), dist.shape)
    if dist[i, j] < min_km:
        raise DataError(
            f"samples {samples[i].sample_id} and {samples[j].sample_id} are {dist[i, j]:.2f} km apart "
            f"(minimum {min_km} km)"
        )


def samples_frame(samples: list[LabeledSample]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "sample_id": [s.sample_id for s in samples],
            "lat": [s.lat for s in samples],
            "lon": [s.lon for s in samples],
            "category": [s.category.value for s in samples],
            "label": [s.label for s in samples],
            "ndvi": [s.ndvi for s in samples],
        }
    )


def save_samples(samples: list[LabeledSample], path: str | Path) -> None:
    samples_frame(samples).to_csv(path, index=False, float_format="%.17g")


def load_samples(path: str | Path, min_spacing_km: float = MIN_SAMPLE_SPACING_KM) -> list[LabeledSample]:
    df = pd.read_csv(path)
    missing = {"sample_id", "lat", "lon", "category"} - set(df.columns)
    if missing:
        raise DataError(f"samples file {path} lacks columns {sorted(missing)}")
    if df["sample_id"].duplicated().any():
        raise DataError(f"samples file {path} has duplicate sample ids")
    samples = []
    for row in df.itertuples(index=False):
        try:
            category = Category(row.category)
        except ValueError as e:
            raise DataError(f"samples file {path}: unknown category {row.category!r}") from e
        sample = LabeledSample(
            str(row.sample_id), float(row.lat), float(row.lon), category, float(getattr(row, "ndvi", np.nan))
        )
        if "label" in df.columns and int(row.label) != sample.label:
            raise DataError(f"samples file {path}: label of {row.sample_id} contradicts category {row.category}")
        samples.append(sample)
    check_spacing(samples, min_spacing_km)
    return samples


def synth_samples(
    spec: GridSpec,
    suitability: np.ndarray,
    ndvi: np.ndarray,
    seed: int,
    counts: dict[str, int],
    margin: float = 0.15,
    ndvi_threshold: float = 0.15,
    min_spacing_km: float = MIN_SAMPLE_SPACING_KM,
    valid: np.ndarray | None = None,
) -> list[LabeledSample]:
    """Unambiguous reference sites per category on a synthetic scene.

    Suitable sites sit above 0.5 + margin, unsuitable below 0.5 − margin;
    vegetated means summer NDVI at or above ``ndvi_threshold``.
    """
    valid = np.ones(spec.shape, bool) if valid is None else valid
    hi = suitability > 0.5 + margin
    lo = suitability < 0.5 - margin
    veg = ndvi >= ndvi_threshold
    pools = {
        Category.HISUIT_HIVEG: hi & veg,
        Category.LOSUIT_HIVEG: lo & veg,
        Category.HISUIT_LOVEG: hi & ~veg,
        Category.LOSUIT_LOVEG: lo & ~veg,
    }
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    lats, lons = spec.lats, spec.lons
    chosen: list[tuple[int, int, Category]] = []
    taken_lat: list[float] = []
    taken_lon: list[float] = []
    # scarce categories first so the large ones cannot crowd them out
    for category in sorted(pools, key=lambda c: (counts.get(c.value, 0), c.value)):
        want = counts.get(category.value, 0)
        candidates = np.argwhere(pools[category] & valid & np.isfinite(ndvi))
        got = 0
        for i, j in candidates[rng.permutation(len(candidates))]:
            if got == want:
                break
            if taken_lat:
                d = great_circle_km(lats[i], lons[j], np.array(taken_lat), np.array(taken_lon))
                if d.min() < min_spacing_km:
                    continue
            chosen.append((int(i), int(j), category))
            taken_lat.append(float(lats[i]))
            taken_lon.append(float(lons[j]))
            got += 1
        if got < want:
            raise DataError(f"only {got} of {want} {category.value} sites fit the synthetic scene")
    chosen.sort(key=lambda c: (c[0], c[1]))
    return [
        LabeledSample(f"s{n:04d}", float(lats[i]), float(lons[j]), category, float(ndvi[i, j]))
        for n, (i, j, category) in enumerate(chosen)
    ]


# ---------------------------------------------------------------------------
# Seeds and splits
# ---------------------------------------------------------------------------

def _key_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    if part in KIND_CODES:
        return KIND_CODES[part]
    return int.from_bytes(hashlib.sha256(str(part).encode()).digest()[:4], "little")


def derive_seed(root: int, *key) -> int:
    """Per-run seed: the root seed spawned along a counter key such as (kind, size, rep)."""
    seq = np.random.SeedSequence(entropy=root, spawn_key=tuple(_key_int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def split_holdout(sample_ids: list[str], fraction: float = 0.1, seed: int = 0) -> tuple[list[str], list[str]]:
    if not 0.0 < fraction < 1.0:
        raise DataError(f"holdout fraction {fraction} outside (0, 1)")
    n = len(sample_ids)
    n_val = int(round(fraction * n))
    if n_val < 1 or n_val >= n:
        raise DataError(f"holdout of {fraction} on {n} samples leaves no validation or no training set")
    held = set(np.random.default_rng(seed).permutation(n)[:n_val].tolist())
    train = [sid for k, sid in enumerate(sample_ids) if k not in held]
    val = [sid for k, sid in enumerate(sample_ids) if k in held]
    return train, val


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureBank:
    """Feature tables fit once on all labeled samples, plus their feature matrices.

    BLUP tables are fit at the largest size; each smaller size uses their
    prefix. Network inputs use their own ``ae_bins`` tables.
    """

    sample_ids: tuple[str, ...]
    labels: np.ndarray
    tables: dict[str, spectral.SpectralTables]
    matrices: dict[str, np.ndarray]

    def table_for(self, kind: str, size: int) -> spectral.SpectralTables:
        if kind == "blup":
            return self.tables["blup"].truncate(size)
        return self.tables["nn"]

    def matrix(self, kind: str, size: int) -> np.ndarray:
        if kind == "blup":
            base = self.tables["blup"]
            return self.matrices["blup"][:, feature_columns(len(base.selection.variables), base.k, size)]
        return self.matrices["nn"]

    def lineages(self, blup_sizes: Iterable[int]) -> dict[str, tuple[str, int]]:
        """lineage digest -> (table name, size)."""
        out = {}
        if "blup" in self.tables:
            for k in blup_sizes:
                out[self.tables["blup"].truncate(k).lineage] = ("blup", k)
        if "nn" in self.tables:
            out[self.tables["nn"].lineage] = ("nn", self.tables["nn"].k)
        return out


def feature_columns(n_vars: int, k_full: int, k: int) -> np.ndarray:
    """Columns of a ``k_full`` feature vector that make up the ``k``-bin prefix vector."""
    per_var = np.arange(2 * k)
    return (np.arange(n_vars)[:, None] * 2 * k_full + per_var[None, :]).ravel()


def build_feature_bank(
    series: np.ndarray,
    samples: list[LabeledSample],
    variables: tuple[str, ...],
    blup_sizes: list[int],
    ae_bins: int,
    kinds: Iterable[str] = ("blup", "nn"),
) -> FeatureBank:
    sets: dict[str, spectral.SpectralFeatureSet] = {}
    kinds = set(kinds)
    if "blup" in kinds and blup_sizes:
        sets["blup"] = spectral.build_feature_set(series, max(blup_sizes), variables)
    if "nn" in kinds:
        sets["nn"] = spectral.build_feature_set(series, ae_bins, variables)
    return FeatureBank(
        tuple(s.sample_id for s in samples),
        np.array([s.label for s in samples], dtype=np.float64),
        {name: fs.tables for name, fs in sets.items()},
        {name: fs.features for name, fs in sets.items()},
    )


def extract_sample_series(cube: ClimateCube, samples: list[LabeledSample]) -> np.ndarray:
    return sample_series(cube, [(s.lat, s.lon) for s in samples])


# ---------------------------------------------------------------------------
# Training grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    kind: str
    size: int
    repetition: int
    seed: int
    split_seed: int

    @property
    def run_id(self) -> str:
        return f"{self.kind}-{self.size:04d}-r{self.repetition:02d}"


@dataclass(frozen=True)
class CssModel:
    kind: str
    size: int
    repetition: int
    seed: int
    lineage: str
    model: BlupModel | NnModel
    bundle_id: str = ""

    def predict(self, X) -> np.ndarray:
        if self.kind == "blup":
            return predict_blup(self.model, X)
        return predict_nn(self.model.classifier, self.model.codec, X)


@dataclass
class TrainingRun:
    spec: RunSpec
    holdout: tuple[str, ...]
    train_rmse: float = float("nan")
    val_rmse: float = float("nan")
    train_r: float = float("nan")
    val_r: float = float("nan")
    status: str = "ok"
    message: str = ""
    bundle: str = ""

    def record(self) -> dict:
        return {
            "kind": self.spec.kind,
            "size": self.spec.size,
            "repetition": self.spec.repetition,
            "seed": self.spec.seed,
            "split_seed": self.spec.split_seed,
            "status": self.status,
            "message": self.message,
            "bundle": self.bundle,
            "holdout": list(self.holdout),
            "train_rmse": self.train_rmse,
            "val_rmse": self.val_rmse,
            "train_r": self.train_r,
            "val_r": self.val_r,
        }


@dataclass
class RunResult:
    run: TrainingRun
    model: CssModel | None = None
    predictions: pd.DataFrame = field(default_factory=pd.DataFrame)


def plan_runs(
    kinds: Iterable[str], blup_sizes: Iterable[int], nn_sizes: Iterable[int], repetitions: int, root_seed: int
) -> list[RunSpec]:
    """Every (kind, size, repetition); one split per repetition shared by all sizes and kinds."""
    sizes = {"blup": sorted(blup_sizes), "nn": sorted(nn_sizes)}
    return [
        RunSpec(kind, size, rep, derive_seed(root_seed, kind, size, rep), derive_seed(root_seed, "split", rep))
        for kind in kinds
        for size in sizes[kind]
        for rep in range(repetitions)
    ]


def train_one(
    spec: RunSpec,
    bank: FeatureBank,
    hyper: Hyperparams,
    holdout: float = 0.1,
    blup_lambda: float | None = None,
    tune_lambda: bool = False,
) -> RunResult:
    """Train one model on its split; divergence is recorded, not raised."""
    ids = list(bank.sample_ids)
    train_ids, val_ids = split_holdout(ids, holdout, spec.split_seed)
    val_set = set(val_ids)
    is_val = np.array([sid in val_set for sid in ids])
    X = bank.matrix(spec.kind, spec.size)
    y = bank.labels
    lineage = bank.table_for(spec.kind, spec.size).lineage
    run = TrainingRun(spec, tuple(val_ids))
    try:
        if spec.kind == "blup":
            lam = blup_lambda
            if tune_lambda:
                lam, _ = select_lambda(X[~is_val], y[~is_val])
            fitted = fit_blup(
                X[~is_val], y[~is_val], lam, k=spec.size, seed=spec.seed,
                variables=bank.tables["blup"].selection.variables, lineage=lineage,
            )
        else:
            n_vars = len(bank.tables["nn"].selection.variables)
            codec = train_autoencoder(
                X[~is_val], spec.size, hyper, derive_seed(spec.seed, 0), n_variables=n_vars
            )
            classifier = train_classifier(encode(codec, X[~is_val]), y[~is_val], hyper, derive_seed(spec.seed, 1))
            fitted = NnModel(codec, classifier, spec.size, spec.seed, lineage)
    except (TrainingDivergedError, NumericalError) as e:
        run.status, run.message = "diverged", str(e)
        logger.warning(f"Run {spec.run_id} excluded: {e}")
        return RunResult(run)

    model = CssModel(spec.kind, spec.size, spec.repetition, spec.seed, lineage, fitted, spec.run_id)
    pred = model.predict(X)
    run.train_rmse = rmse(pred[~is_val], y[~is_val])
    run.val_rmse = rmse(pred[is_val], y[is_val])
    run.train_r = pearson(pred[~is_val], y[~is_val])
    run.val_r = pearson(pred[is_val], y[is_val])
    predictions = pd.DataFrame(
        {
            "kind": spec.kind,
            "size": spec.size,
            "repetition": spec.repetition,
            "sample_id": ids,
            "split": np.where(is_val, "val", "train"),
            "label": y,
            "prediction": pred,
        }
    )
    return RunResult(run, model, predictions)


def run_training_grid(
    bank: FeatureBank,
    specs: list[RunSpec],
    hyper: Hyperparams,
    holdout: float = 0.1,
    blup_lambda: float | None = None,
    tune_lambda: bool = False,
    runner: Callable = map,
) -> list[RunResult]:
    """All runs of the grid. ``runner`` maps a callable over specs and must keep their order."""

    def one(spec):
        return train_one(spec, bank, hyper, holdout, blup_lambda, tune_lambda)

    return list(runner(one, specs))


METRIC_COLUMNS = ["train_rmse", "val_rmse", "train_r", "val_r"]


def metrics_frame(runs: list[TrainingRun]) -> pd.DataFrame:
    rows = [
        {
            "kind": r.spec.kind,
            "size": r.spec.size,
            "repetition": r.spec.repetition,
            **{m: getattr(r, m) for m in METRIC_COLUMNS},
        }
        for r in runs
        if r.status == "ok"
    ]
    return pd.DataFrame(rows, columns=["kind", "size", "repetition", *METRIC_COLUMNS])


def aggregate_runs(runs: list[TrainingRun]) -> pd.DataFrame:
    """Mean and standard deviation of each metric per (kind, size) over converged runs."""
    df = metrics_frame(runs)
    excluded = sum(1 for r in runs if r.status != "ok")
    if excluded:
        logger.warning(f"{excluded} diverged runs excluded from aggregates")
    grouped = df.groupby(["kind", "size"], sort=True)[METRIC_COLUMNS].agg(["mean", "std"])
    grouped.columns = [f"{metric}_{stat}" for metric, stat in grouped.columns]
    grouped.insert(0, "n_runs", df.groupby(["kind", "size"], sort=True).size())
    return grouped.reset_index()


def recompute_metrics(predictions: pd.DataFrame) -> pd.DataFrame:
    """Metrics of every run from its persisted predictions."""
    rows = []
    for (kind, size, rep), group in predictions.groupby(["kind", "size", "repetition"], sort=True):
        train = group[group["split"] == "train"]
        val = group[group["split"] == "val"]
        rows.append(
            {
                "kind": kind,
                "size": size,
                "repetition": rep,
                "train_rmse": rmse(train["prediction"], train["label"]),
                "val_rmse": rmse(val["prediction"], val["label"]),
                "train_r": pearson(train["prediction"], train["label"]),
                "val_r": pearson(val["prediction"], val["label"]),
            }
        )
    return pd.DataFrame(rows, columns=["kind", "size", "repetition", *METRIC_COLUMNS])


def ensemble_validation(predictions: pd.DataFrame) -> pd.DataFrame:
    """Validation metrics of the combined ensemble, one row per repetition.

    Every repetition shares one split across kinds and sizes, so the ensemble
    score of a held-out sample is the unweighted mean over all converged models
    of that repetition.
    """
    rows = []
    val = predictions[predictions["split"] == "val"]
    for rep, group in val.groupby("repetition", sort=True):
        mean = group.groupby("sample_id", sort=True).agg(prediction=("prediction", "mean"), label=("label", "first"))
        n_models = group.groupby(["kind", "size"]).ngroups
        rows.append(
            {
                "repetition": rep,
                "n_models": n_models,
                "val_rmse": rmse(mean["prediction"], mean["label"]),
                "val_r": pearson(mean["prediction"], mean["label"]),
            }
        )
    return pd.DataFrame(rows, columns=["repetition", "n_models", "val_rmse", "val_r"])


# ---------------------------------------------------------------------------
# Reclassification and calibration
# ---------------------------------------------------------------------------

def model_scores(models: list[CssModel], bank: FeatureBank) -> pd.DataFrame:
    """In-sample score of every model on every labeled sample (long format)."""
    frames = [
        pd.DataFrame(
            {
                "model_id": m.bundle_id,
                "kind": m.kind,
                "sample_id": list(bank.sample_ids),
                "score": m.predict(bank.matrix(m.kind, m.size)),
            }
        )
        for m in models
    ]
    if not frames:
        raise DataError("no models to reclassify with")
    return pd.concat(frames, ignore_index=True)


def reclassify(scores: pd.DataFrame, samples: list[LabeledSample]) -> pd.DataFrame:
    """Per-sample mean score per model kind and over all models (model-level mean)."""
    if scores.empty:
        raise DataError("no models to reclassify with")
    table = samples_frame(samples).set_index("sample_id")
    for kind, group in scores.groupby("kind", sort=True):
        table[kind] = group.groupby("sample_id", sort=False)["score"].mean()
    table["combined"] = scores.groupby("sample_id", sort=False)["score"].mean()
    return table.reset_index()


def category_means(reclassified: pd.DataFrame, column: str = "combined") -> pd.Series:
    return reclassified.groupby("category", sort=True)[column].mean()


@dataclass(frozen=True)
class Calibration:
    slope: float
    intercept: float
    r2: float
    n: int

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "n": self.n}

    @classmethod
    def from_dict(cls, data: dict) -> "Calibration":
        return cls(float(data["slope"]), float(data["intercept"]), float(data["r2"]), int(data["n"]))


def fit_calibration(scores, ndvi, categories) -> Calibration:
    """Least-squares NDVI ≈ slope·score + intercept on the two main categories only."""
    scores = np.asarray(scores, dtype=np.float64)
    ndvi = np.asarray(ndvi, dtype=np.float64)
    keep = np.array([Category(c) in CALIBRATION_CATEGORIES for c in categories])
    keep &= np.isfinite(scores) & np.isfinite(ndvi)
    x, y = scores[keep], ndvi[keep]
    if x.size < 2 or np.ptp(x) == 0.0:
        raise CalibrationError(f"calibration needs two or more distinct scores, got {x.size} qualifying samples")
    fit = linregress(x, y)
    cal = Calibration(float(fit.slope), float(fit.intercept), float(fit.rvalue**2), int(x.size))
    if not (np.isfinite(cal.slope) and np.isfinite(cal.intercept)):
        raise CalibrationError("calibration produced non-finite coefficients")
    return cal


def calibrated(cal: Calibration, scores) -> np.ndarray:
    return cal.slope * np.asarray(scores, dtype=np.float64) + cal.intercept


def overlap_rankings(reclassified: pd.DataFrame, category: str = Category.HISUIT_HIVEG.value) -> dict[str, pd.Series]:
    """Model scores and NDVI of one category, as rankings over the same sample ids."""
    part = reclassified[reclassified["category"] == category].set_index("sample_id")
    columns = [c for c in ("blup", "nn", "combined", "ndvi") if c in part.columns]
    return {c: part[c] for c in columns}


# ---------------------------------------------------------------------------
# Maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CssRaster:
    spec: GridSpec
    values: np.ndarray
    provenance: tuple[str, ...]
    mask: np.ndarray

    def __post_init__(self):
        if not self.provenance:
            raise DataError("a CSS map needs at least one contributing model")


def resolve_tables(models: list[CssModel], bank: FeatureBank, blup_sizes: Iterable[int]) -> dict[str, tuple[str, int]]:
    """Every model must come from the feature table its kind and size read; returns lineage -> (table, size)."""
    known = bank.lineages(blup_sizes)
    table_of = {entry: lineage for lineage, entry in known.items()}
    groups: dict[tuple[str, int], list[CssModel]] = {}
    for m in models:
        size = bank.tables["nn"].k if m.kind == "nn" and "nn" in bank.tables else m.size
        groups.setdefault((m.kind, size), []).append(m)
    for (kind, size), group in sorted(groups.items()):
        ids = ", ".join(m.bundle_id for m in group)
        if (kind, size) not in table_of:
            raise LineageError(f"models {ids} need a {kind} feature table the feature artifact does not hold")
        try:
            check_lineage([{"lineage": m.lineage} for m in group], expected=table_of[(kind, size)])
        except LineageError as e:
            raise LineageError(f"models {ids} were trained on feature tables not in the feature artifact: {e}") from e
    return known


def predict_rows(
    models: list[CssModel], cube: ClimateCube, bank: FeatureBank, rows: Iterable[int]
) -> tuple[list[int], np.ndarray]:
    """Scores of every model on the valid pixels of some grid rows -> (rows, [model, row, lon])."""
    rows = list(rows)
    n_lon = cube.spec.n_lon
    out = np.full((len(models), len(rows), n_lon), np.nan)
    for r, i in enumerate(rows):
        cols = [j for j in range(n_lon) if cube.mask[i, j]]
        if not cols:
            continue
        block = np.stack(
            [np.stack([np.asarray(cube.values[v][:, i, j], dtype=np.float64) for v in cube.variables]) for j in cols]
        )
        features = {name: spectral.featurize(block, tables) for name, tables in bank.tables.items()}
        for m_idx, m in enumerate(models):
            if m.kind == "blup":
                base = bank.tables["blup"]
                X = features["blup"][:, feature_columns(len(base.selection.variables), base.k, m.size)]
            else:
                X = features["nn"]
            out[m_idx, r, cols] = m.predict(X)
    return rows, out


def assemble_maps(
    models: list[CssModel], spec: GridSpec, mask: np.ndarray, parts: list[tuple[list[int], np.ndarray]]
) -> dict[str, CssRaster]:
    """Per-kind and combined maps as unweighted model-level means."""
    stack = np.full((len(models), *spec.shape), np.nan)
    for rows, scores in parts:
        stack[:, rows, :] = scores
    maps = {}
    groups = {kind: [k for k, m in enumerate(models) if m.kind == kind] for kind in sorted({m.kind for m in models})}
    groups["combined"] = list(range(len(models)))
    for name, members in groups.items():
        values = stack[members].sum(axis=0) / len(members)
        values[~mask] = np.nan
        maps[name] = CssRaster(spec, values, tuple(models[k].bundle_id for k in members), mask.copy())
    return maps


def predict_map(models: list[CssModel], cube: ClimateCube, bank: FeatureBank, blup_sizes: Iterable[int] = ()) -> dict[str, CssRaster]:
    if not models:
        raise DataError("no models to map with")
    resolve_tables(models, bank, blup_sizes or sorted({m.size for m in models if m.kind == "blup"}))
    part = predict_rows(models, cube, bank, range(cube.spec.n_lat))
    return assemble_maps(models, cube.spec, cube.mask, [part])
