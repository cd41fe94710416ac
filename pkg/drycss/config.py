"""Run configuration.

Values come from (lowest to highest precedence) the defaults below, a JSON
config file, and command-line overrides. ``.env`` is loaded first so
``DRYCSS_JOBS`` can stand in for ``--jobs``.
"""
from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from drycss.errors import UsageError
from drycss.grid_store import DEFAULT_VARIABLES, DESK_GRID, EPOCH_2020, GridSpec, TimeAxis
from drycss.neural import Hyperparams

CATEGORY_COUNTS = {"HiSuit-HiVeg": 101, "LoSuit-HiVeg": 14, "HiSuit-LoVeg": 14, "LoSuit-LoVeg": 101}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    workdir: Path = Path("drycss-run")
    cube: Path | None = None
    ndvi: Path | None = None
    samples: Path | None = None
    exclusion: Path | None = None


class GridConfig(_Section):
    lat_min: float = DESK_GRID.lat_min
    lat_max: float = DESK_GRID.lat_max
    lon_min: float = DESK_GRID.lon_min
    lon_max: float = DESK_GRID.lon_max
    n_lat: int = Field(DESK_GRID.n_lat, ge=2)
    n_lon: int = Field(DESK_GRID.n_lon, ge=2)
    start: datetime = EPOCH_2020
    step_hours: float = Field(3.0, gt=0)
    n_steps: int = Field(2920, ge=2)
    variables: list[str] = Field(default_factory=lambda: list(DEFAULT_VARIABLES), min_length=1)
    ndvi_refine: int = Field(3, ge=1)
    ndvi_years: list[int] = Field(default_factory=lambda: [2020, 2021, 2022, 2023, 2024], min_length=1)

    def spec(self) -> GridSpec:
        return GridSpec(self.lat_min, self.lat_max, self.lon_min, self.lon_max, self.n_lat, self.n_lon)

    def time(self) -> TimeAxis:
        return TimeAxis(self.start, self.n_steps, self.step_hours)


class TrainingConfig(_Section):
    kinds: list[Literal["blup", "nn"]] = Field(default_factory=lambda: ["blup", "nn"], min_length=1)
    blup_sizes: list[int] = Field(default_factory=lambda: [2, 4, 8, 16, 32, 64])
    nn_sizes: list[int] = Field(default_factory=lambda: [4, 8, 16, 32])
    repetitions: int = Field(10, ge=1)
    holdout: float = Field(0.1, gt=0, lt=1)
    counts: dict[str, int] = Field(default_factory=lambda: dict(CATEGORY_COUNTS))
    sample_margin: float = Field(0.15, ge=0, lt=0.5)
    blup_lambda: float | None = Field(None, gt=0)
    select_lambda: bool = False
    ae_bins: int = Field(4, ge=1)

    @field_validator("blup_sizes", "nn_sizes")
    @classmethod
    def _positive_sizes(cls, sizes: list[int]) -> list[int]:
        if any(s < 1 for s in sizes):
            raise ValueError(f"sizes must be >= 1, got {sizes}")
        return sorted(set(sizes))

    @field_validator("counts")
    @classmethod
    def _known_categories(cls, counts: dict[str, int]) -> dict[str, int]:
        unknown = set(counts) - set(CATEGORY_COUNTS)
        if unknown:
            raise ValueError(f"unknown sample categories {sorted(unknown)}")
        if any(v < 0 for v in counts.values()):
            raise ValueError("sample counts must be >= 0")
        return counts


class NetworkConfig(_Section):
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(1000, ge=1)
    noise_std: float = Field(0.05, ge=0)
    dropout: float = Field(0.1, ge=0, lt=1)

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            noise_std=self.noise_std,
            dropout=self.dropout,
        )


class ThresholdsConfig(_Section):
    ndvi_vegetation: float = Field(0.15, ge=-1, le=1)
    css: float = 0.5
    candidate_count: int = Field(25, ge=1)
    min_spacing_km: float = Field(9.0, ge=0)
    overlap_n: int = Field(20, ge=1)


class AnalogConfig(_Section):
    channels: int = Field(32, ge=1)
    mode: Literal["lowest", "ranked"] = "lowest"
    normalized: bool = False
    max_climate_dist: float | None = Field(None, ge=0)
    distance_percentile: float = Field(10.0, gt=0, le=100)
    min_ndvi_margin: float = Field(0.02, ge=0)


class RunConfig(_Section):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    thresholds: ThresholdsConfig = Field(default_factory=ThresholdsConfig)
    analogs: AnalogConfig = Field(default_factory=AnalogConfig)
    root_seed: int = Field(7, ge=0)
    jobs: int = Field(1, ge=1)

    def digest(self) -> str:
        payload = json.dumps(self.model_dump(mode="json", exclude={"jobs"}), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus nested overrides."""
    load_dotenv()
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise UsageError(f"config file {path} is not valid JSON: {e}") from e
    env_jobs = os.getenv("DRYCSS_JOBS")
    if env_jobs and "jobs" not in data:
        data["jobs"] = env_jobs
    data = _merge(data, overrides or {})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise UsageError(f"invalid config field {field}: {first['msg']}") from e
