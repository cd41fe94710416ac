"""Gridded climate cubes and NDVI rasters on regular, node-centered lat/lon grids.

On-disk cube: ``meta.json`` plus one little-endian float32 file ``<var>.f32`` per
variable, laid out [time, lat, lon] row-major. NDVI raster: ``meta.json`` plus
``ndvi/<year>_<doy>.f32`` grids laid out [lat, lon]. No-data is quiet NaN.
Single 2-D grids (CSS maps, summer NDVI, difference maps) are ``<name>.f32``
with a ``<name>.json`` sidecar.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import numpy as np
from prefect.logging import get_logger

from drycss.errors import (
    ArrayLengthError,
    CubeExistsError,
    DataError,
    GridMismatchError,
    GridSpecError,
    MaskedPixelError,
    MetadataError,
    MissingVariableError,
    NdviCoverageError,
    NdviRangeError,
    NonFiniteValueError,
    OutOfBoundsError,
    RegridError,
)

logger = get_logger(__name__)

FORMAT_VERSION = 1
DTYPE = np.dtype("<f4")
SUMMER_WINDOW = (80, 256)

ERA5_VARIABLES = {
    "d2m": "K",
    "evabs": "m of water equivalent",
    "evaow": "m of water equivalent",
    "evatc": "m of water equivalent",
    "evavt": "m of water equivalent",
    "sp": "Pa",
    "src": "m of water equivalent",
    "sro": "kg m-2",
    "ssrd": "J m-2",
    "ssro": "m",
    "stl1": "K",
    "stl2": "K",
    "stl3": "K",
    "stl4": "K",
    "strd": "J m-2",
    "swvl1": "m3 m-3",
    "swvl2": "m3 m-3",
    "swvl3": "m3 m-3",
    "swvl4": "m3 m-3",
    "t2m": "K",
    "tp": "m",
    "u10": "m s-1",
    "v10": "m s-1",
}
DEFAULT_VARIABLES = tuple(ERA5_VARIABLES)


# ---------------------------------------------------------------------------
# Axes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    n_lat: int
    n_lon: int

    def __post_init__(self):
        if not self.lat_max > self.lat_min:
            raise GridSpecError(f"lat_max {self.lat_max} must exceed lat_min {self.lat_min}")
        if not self.lon_max > self.lon_min:
            raise GridSpecError(f"lon_max {self.lon_max} must exceed lon_min {self.lon_min}")
        if self.n_lat < 2 or self.n_lon < 2:
            raise GridSpecError(f"grid needs at least 2 nodes per axis, got {self.n_lat}x{self.n_lon}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def lat_step(self) -> float:
        return (self.lat_max - self.lat_min) / (self.n_lat - 1)

    @property
    def lon_step(self) -> float:
        return (self.lon_max - self.lon_min) / (self.n_lon - 1)

    @property
    def lats(self) -> np.ndarray:
        return np.linspace(self.lat_min, self.lat_max, self.n_lat)

    @property
    def lons(self) -> np.ndarray:
        return np.linspace(self.lon_min, self.lon_max, self.n_lon)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.lats, self.lons, indexing="ij")

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def nearest_index(self, lat: float, lon: float) -> tuple[int, int]:
        if not self.contains(lat, lon):
            raise OutOfBoundsError(
                f"location ({lat}, {lon}) outside grid "
                f"[{self.lat_min}, {self.lat_max}] x [{self.lon_min}, {self.lon_max}]"
            )
        i = int(np.rint((lat - self.lat_min) / self.lat_step))
        j = int(np.rint((lon - self.lon_min) / self.lon_step))
        return min(max(i, 0), self.n_lat - 1), min(max(j, 0), self.n_lon - 1)

    def node(self, i: int, j: int) -> tuple[float, float]:
        return float(self.lats[i]), float(self.lons[j])

    def same_as(self, other: "GridSpec") -> bool:
        return self.shape == other.shape and np.allclose(
            [self.lat_min, self.lat_max, self.lon_min, self.lon_max],
            [other.lat_min, other.lat_max, other.lon_min, other.lon_max],
            rtol=0.0,
            atol=1e-9,
        )

    def to_dict(self) -> dict:
        return {
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
            "n_lat": self.n_lat,
            "n_lon": self.n_lon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(
            lat_min=float(data["lat_min"]),
            lat_max=float(data["lat_max"]),
            lon_min=float(data["lon_min"]),
            lon_max=float(data["lon_max"]),
            n_lat=int(data["n_lat"]),
            n_lon=int(data["n_lon"]),
        )


DESK_GRID = GridSpec(20.0, 23.1, 40.0, 43.1, 32, 32)
NATIONAL_GRID = GridSpec(12.0, 34.0, 34.0, 56.0, 221, 221)


@dataclass(frozen=True)
class TimeAxis:
    start: datetime
    n_steps: int
    step_hours: float = 3.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise GridSpecError(f"time axis needs at least one step, got {self.n_steps}")
        if self.step_hours <= 0:
            raise GridSpecError(f"time step must be positive, got {self.step_hours}")

    def to_dict(self) -> dict:
        return {
            "start": self.start.isoformat(),
            "step_hours": self.step_hours,
            "n_steps": self.n_steps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TimeAxis":
        start = datetime.fromisoformat(data["start"])
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        return cls(start=start, n_steps=int(data["n_steps"]), step_hours=float(data["step_hours"]))


EPOCH_2020 = datetime(2020, 1, 1, tzinfo=timezone.utc)
DESK_TIME = TimeAxis(EPOCH_2020, 2920)
NATIONAL_TIME = TimeAxis(EPOCH_2020, 14616)


# ---------------------------------------------------------------------------
# Climate cube
# ---------------------------------------------------------------------------

@dataclass
class ClimateCube:
    """Per-variable arrays [time, lat, lon]; ``mask`` is True on valid pixels.

    Arrays may be copy-on-write memory maps; the files on disk are never written.
    """

    spec: GridSpec
    time: TimeAxis
    variables: tuple[str, ...]
    values: dict[str, np.ndarray]
    mask: np.ndarray
    units: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_arrays(
        cls,
        spec: GridSpec,
        time: TimeAxis,
        values: dict[str, np.ndarray],
        units: dict[str, str] | None = None,
    ) -> "ClimateCube":
        variables = tuple(values)
        _check_variables(variables)
        arrays = {}
        for var in variables:
            arr = np.asarray(values[var], dtype=DTYPE)
            if arr.shape != (time.n_steps, *spec.shape):
                raise ArrayLengthError(
                    f"variable {var} has shape {arr.shape}, expected {(time.n_steps, *spec.shape)}",
                    var,
                )
            arrays[var] = arr
        mask = _valid_mask(arrays, spec, time.n_steps)
        if not mask.all():
            # masked pixels carry the sentinel in every variable
            for var in variables:
                arrays[var] = arrays[var].copy()
                arrays[var][:, ~mask] = np.nan
        units = dict(units or {})
        for var in variables:
            units.setdefault(var, ERA5_VARIABLES.get(var, ""))
        return cls(spec=spec, time=time, variables=variables, values=arrays, mask=mask, units=units)

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


def _check_variables(variables) -> None:
    if not variables:
        raise DataError("cube has an empty variable list")
    seen = set()
    for var in variables:
        if var in seen:
            raise DataError(f"duplicate variable {var}")
        seen.add(var)


def _valid_mask(arrays: dict[str, np.ndarray], spec: GridSpec, n_steps: int, chunk: int = 512) -> np.ndarray:
    invalid = np.zeros(spec.shape, dtype=bool)
    infinite = {}
    for var, arr in arrays.items():
        inf_here = np.zeros(spec.shape, dtype=bool)
        for t0 in range(0, n_steps, chunk):
            block = np.asarray(arr[t0 : t0 + chunk])
            invalid |= np.isnan(block).any(axis=0)
            inf_here |= np.isinf(block).any(axis=0)
        infinite[var] = inf_here
    for var, inf_here in infinite.items():
        bad = inf_here & ~invalid
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise NonFiniteValueError(
                f"variable {var} has non-finite values at unmasked pixel ({i}, {j})", var
            )
    return ~invalid


def _prepare_directory(path: Path, force: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CubeExistsError(f"{path} already exists; pass force to overwrite")
        for old in list(path.glob("*.f32")) + list(path.glob("*.json")):
            old.unlink()
    path.mkdir(parents=True, exist_ok=True)


def save_cube(cube: ClimateCube, path: str | Path, force: bool = False) -> None:
    _check_variables(cube.variables)
    path = Path(path)
    try:
        _prepare_directory(path, force)
        meta = {
            "format_version": FORMAT_VERSION,
            "grid": cube.spec.to_dict(),
            "time": cube.time.to_dict(),
            "variables": list(cube.variables),
            "units": {var: cube.units.get(var, "") for var in cube.variables},
            "layout": "time,lat,lon",
            "dtype": "<f4",
        }
        (path / "meta.json").write_text(json.dumps(meta, indent=2))
        for var in cube.variables:
            np.ascontiguousarray(cube.values[var], dtype=DTYPE).tofile(path / f"{var}.f32")
    except OSError as e:
        raise DataError(f"cannot write cube to {path}: {e}") from e
    logger.info(f"Saved cube with {len(cube.variables)} variables to {path}")


def load_cube(path: str | Path) -> ClimateCube:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise MetadataError(f"missing cube metadata {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
        spec = GridSpec.from_dict(meta["grid"])
        time = TimeAxis.from_dict(meta["time"])
        variables = tuple(meta["variables"])
    except (KeyError, TypeError, ValueError) as e:
        raise MetadataError(f"inconsistent cube metadata in {meta_path}: {e}") from e
    if meta.get("format_version") != FORMAT_VERSION:
        raise MetadataError(f"unsupported cube format version {meta.get('format_version')}")
    try:
        _check_variables(variables)
    except DataError as e:
        raise MetadataError(str(e)) from e

    shape = (time.n_steps, *spec.shape)
    expected_bytes = int(np.prod(shape)) * DTYPE.itemsize
    values = {}
    for var in variables:
        var_path = path / f"{var}.f32"
        if not var_path.exists():
            raise MissingVariableError(f"missing variable {var}", var)
        size = var_path.stat().st_size
        if size != expected_bytes:
            raise ArrayLengthError(
                f"variable {var} holds {size // DTYPE.itemsize} values, expected {np.prod(shape)}",
                var,
            )
        # copy-on-write: masking never touches the files
        values[var] = np.memmap(var_path, dtype=DTYPE, mode="c", shape=shape)

    mask = _valid_mask(values, spec, time.n_steps)
    if not mask.all():
        logger.warning(f"{(~mask).sum()} of {mask.size} pixels masked invalid in {path}")
        for var in variables:
            values[var][:, ~mask] = np.nan
    units = meta.get("units", {})
    return ClimateCube(spec=spec, time=time, variables=variables, values=values, mask=mask, units=units)


# ---------------------------------------------------------------------------
# Per-pixel series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PixelSeries:
    i: int
    j: int
    lat: float
    lon: float
    values: dict[str, np.ndarray]

    def matrix(self, variables: tuple[str, ...] | None = None) -> np.ndarray:
        keys = variables or tuple(self.values)
        return np.stack([self.values[v] for v in keys])


def pixel_matrix(cube: ClimateCube, i: int, j: int) -> np.ndarray:
    """(n_vars, n_steps) float64 series of one grid node."""
    return np.stack([np.asarray(cube.values[v][:, i, j], dtype=np.float64) for v in cube.variables])


def extract_series(cube: ClimateCube, lat: float, lon: float) -> PixelSeries:
    i, j = cube.spec.nearest_index(lat, lon)
    if not cube.mask[i, j]:
        raise MaskedPixelError(f"pixel ({i}, {j}) nearest to ({lat}, {lon}) is masked invalid")
    node_lat, node_lon = cube.spec.node(i, j)
    values = {v: np.array(cube.values[v][:, i, j], dtype=np.float32) for v in cube.variables}
    return PixelSeries(i=i, j=j, lat=node_lat, lon=node_lon, values=values)


def sample_series(cube: ClimateCube, locations) -> np.ndarray:
    """Stack of (n_vars, n_steps) series for (lat, lon) pairs -> (n, n_vars, n_steps)."""
    return np.stack(
        [extract_series(cube, lat, lon).matrix(cube.variables).astype(np.float64) for lat, lon in locations]
    )


def iter_pixel_series(cube: ClimateCube, rows=None) -> Iterator[tuple[int, int, np.ndarray]]:
    """Valid pixels in row-major order; one pixel's series in memory at a time."""
    for i in rows if rows is not None else range(cube.spec.n_lat):
        for j in range(cube.spec.n_lon):
            if cube.mask[i, j]:
                yield i, j, pixel_matrix(cube, i, j)


# ---------------------------------------------------------------------------
# Single 2-D grids
# ---------------------------------------------------------------------------

def write_grid(path: str | Path, values: np.ndarray, spec: GridSpec, **meta) -> Path:
    path = Path(path).with_suffix(".f32")
    values = np.asarray(values)
    if values.shape != spec.shape:
        raise GridMismatchError(f"grid {path.name} has shape {values.shape}, expected {spec.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(values, dtype=DTYPE).tofile(path)
    sidecar = {"format_version": FORMAT_VERSION, "grid": spec.to_dict(), "dtype": "<f4", **meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def read_grid(path: str | Path) -> tuple[np.ndarray, GridSpec, dict]:
    path = Path(path).with_suffix(".f32")
    sidecar = path.with_suffix(".json")
    if not path.exists() or not sidecar.exists():
        raise MetadataError(f"missing grid {path} or its sidecar")
    meta = json.loads(sidecar.read_text())
    spec = GridSpec.from_dict(meta["grid"])
    values = np.fromfile(path, dtype=DTYPE)
    if values.size != spec.n_lat * spec.n_lon:
        raise ArrayLengthError(f"grid {path.name} holds {values.size} values, expected {spec.n_lat * spec.n_lon}")
    return values.reshape(spec.shape).astype(np.float64), spec, meta


# ---------------------------------------------------------------------------
# NDVI
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NdviObservation:
    year: int
    doy: int
    values: np.ndarray


@dataclass
class NdviRaster:
    spec: GridSpec
    observations: list[NdviObservation]

    def __post_init__(self):
        for obs in self.observations:
            if obs.values.shape != self.spec.shape:
                raise GridMismatchError(
                    f"NDVI observation {obs.year}_{obs.doy:03d} has shape {obs.values.shape}, "
                    f"expected {self.spec.shape}"
                )
            _check_ndvi_range(obs)

    @property
    def years(self) -> list[int]:
        return sorted({obs.year for obs in self.observations})


def _check_ndvi_range(obs: NdviObservation) -> None:
    finite = obs.values[np.isfinite(obs.values)]
    if finite.size and (finite.min() < -1.0 or finite.max() > 1.0):
        raise NdviRangeError(
            f"NDVI observation {obs.year}_{obs.doy:03d} has values in "
            f"[{finite.min():.4f}, {finite.max():.4f}], outside [-1, 1]"
        )
    if np.isinf(obs.values).any():
        raise NdviRangeError(f"NDVI observation {obs.year}_{obs.doy:03d} contains infinite values")


def save_ndvi(raster: NdviRaster, path: str | Path, force: bool = False) -> None:
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise CubeExistsError(f"{path} already exists; pass force to overwrite")
    obs_dir = path / "ndvi"
    obs_dir.mkdir(parents=True, exist_ok=True)
    for old in obs_dir.glob("*.f32"):
        old.unlink()
    meta = {"format_version": FORMAT_VERSION, "grid": raster.spec.to_dict(), "nodata": "nan", "dtype": "<f4"}
    (path / "meta.json").write_text(json.dumps(meta, indent=2))
    for obs in raster.observations:
        np.ascontiguousarray(obs.values, dtype=DTYPE).tofile(obs_dir / f"{obs.year}_{obs.doy:03d}.f32")


def load_ndvi(path: str | Path) -> NdviRaster:
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise MetadataError(f"missing NDVI metadata {meta_path}")
    spec = GridSpec.from_dict(json.loads(meta_path.read_text())["grid"])
    observations = []
    for obs_path in sorted((path / "ndvi").glob("*.f32")):
        try:
            year, doy = (int(part) for part in obs_path.stem.split("_"))
        except ValueError as e:
            raise MetadataError(f"NDVI file {obs_path.name} is not named <year>_<doy>.f32") from e
        values = np.fromfile(obs_path, dtype=DTYPE)
        if values.size != spec.n_lat * spec.n_lon:
            raise ArrayLengthError(f"NDVI file {obs_path.name} holds {values.size} values")
        observations.append(NdviObservation(year, doy, values.reshape(spec.shape)))
    return NdviRaster(spec=spec, observations=observations)


def summer_ndvi_mean(raster: NdviRaster, years, window: tuple[int, int] = SUMMER_WINDOW) -> np.ndarray:
    """Per-pixel mean of observations with day-of-year inside ``window`` (inclusive).

    Observations are summed in (year, doy) order, so the result does not depend
    on the order they were loaded in. A no-data value in any qualifying
    observation makes the pixel no-data.
    """
    years = sorted(set(int(y) for y in years))
    lo, hi = window
    qualifying = sorted(
        (obs for obs in raster.observations if obs.year in years and lo <= obs.doy <= hi),
        key=lambda obs: (obs.year, obs.doy),
    )
    covered = {obs.year for obs in qualifying}
    missing = [y for y in years if y not in covered]
    if missing:
        raise NdviCoverageError(missing)
    total = np.zeros(raster.spec.shape, dtype=np.float64)
    for obs in qualifying:
        total += obs.values
    return total / len(qualifying)


def regrid_ndvi(values: np.ndarray, source: GridSpec, target: GridSpec) -> np.ndarray:
    """Block-average a source grid onto a coarser target grid.

    Every source node contributes to the target node whose Voronoi cell holds
    it; no-data sources are skipped and target cells without contributors are
    no-data.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != source.shape:
        raise GridMismatchError(f"NDVI grid shape {values.shape} does not match source grid {source.shape}")
    tol = 1e-9
    if target.lat_step < source.lat_step * (1 - tol) or target.lon_step < source.lon_step * (1 - tol):
        raise RegridError("target grid is finer than the NDVI grid")

    ti = np.rint((source.lats - target.lat_min) / target.lat_step).astype(np.int64)
    tj = np.rint((source.lons - target.lon_min) / target.lon_step).astype(np.int64)
    row_ok = (ti >= 0) & (ti < target.n_lat)
    col_ok = (tj >= 0) & (tj < target.n_lon)
    inside = row_ok[:, None] & col_ok[None, :]
    if not inside.any():
        raise RegridError("NDVI grid and target grid extents are disjoint")

    flat = ti[:, None] * target.n_lon + tj[None, :]
    use = inside & np.isfinite(values)
    n_cells = target.n_lat * target.n_lon
    sums = np.bincount(flat[use], weights=values[use], minlength=n_cells)
    counts = np.bincount(flat[use], minlength=n_cells)
    out = np.full(n_cells, np.nan)
    filled = counts > 0
    out[filled] = sums[filled] / counts[filled]
    return out.reshape(target.shape)


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

# (base level, annual amplitude, diurnal amplitude) per variable; annual always
# dominates diurnal so the annual bin ranks right after the mean.
VARIABLE_PROFILES = {
    "d2m": (285.0, 6.0, 3.0),
    "evabs": (-1e-4, 8e-5, 5e-5),
    "evaow": (-2e-4, 1e-4, 8e-5),
    "evatc": (-1e-5, 8e-6, 5e-6),
    "evavt": (-5e-5, 4e-5, 3e-5),
    "sp": (95000.0, 400.0, 150.0),
    "src": (1e-5, 8e-6, 4e-6),
    "sro": (1e-5, 8e-6, 3e-6),
    "ssrd": (7e6, 3e6, 2e6),
    "ssro": (5e-6, 4e-6, 2e-6),
    "stl1": (303.0, 9.0, 6.0),
    "stl2": (302.0, 8.0, 3.0),
    "stl3": (301.0, 7.0, 1.0),
    "stl4": (300.0, 5.0, 0.3),
    "strd": (1.2e6, 2e5, 1e5),
    "swvl1": (0.08, 0.05, 0.01),
    "swvl2": (0.1, 0.04, 0.005),
    "swvl3": (0.12, 0.03, 0.002),
    "swvl4": (0.15, 0.02, 0.001),
    "t2m": (300.0, 10.0, 6.0),
    "tp": (2e-4, 1.5e-4, 5e-5),
    "u10": (1.0, 2.0, 1.0),
    "v10": (-0.5, 1.5, 0.8),
}
DEFAULT_PROFILE = (0.0, 1.0, 0.5)
SUITABILITY_SLOPE = 2.5
SYNTH_NOISE = 0.05


def cycle_bins(time: TimeAxis) -> tuple[int, int]:
    """Whole-cycle DFT bins of the synthetic annual and diurnal components."""
    hours = time.n_steps * time.step_hours
    annual = max(1, int(round(hours / 8760.0)))
    diurnal = max(annual + 1, int(round(hours / 24.0)))
    return annual, diurnal


def _standardize(values: np.ndarray) -> np.ndarray:
    centered = values - values.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


def planted_suitability(tp_amplitude: np.ndarray, t2m_amplitude: np.ndarray) -> np.ndarray:
    """Logistic in standardized precipitation amplitude minus temperature amplitude."""
    d = _standardize(_standardize(tp_amplitude) - _standardize(t2m_amplitude))
    return 1.0 / (1.0 + np.exp(-SUITABILITY_SLOPE * d))


def _smooth_field(rng: np.random.Generator, spec: GridSpec) -> np.ndarray:
    lat, lon = spec.mesh()
    u = (lat - spec.lat_min) / (spec.lat_max - spec.lat_min)
    w = (lon - spec.lon_min) / (spec.lon_max - spec.lon_min)
    out = np.zeros(spec.shape)
    for _ in range(3):
        fx, fy = rng.uniform(0.3, 1.2, size=2)
        phase = rng.uniform(0.0, 2 * np.pi)
        weight = rng.uniform(0.5, 1.0)
        out += weight * np.sin(2 * np.pi * (fx * u + fy * w) + phase)
    return _standardize(out)


def _suitability_pair(variables: tuple[str, ...]) -> tuple[str, str]:
    if "tp" in variables and "t2m" in variables:
        return "tp", "t2m"
    if len(variables) < 2:
        return variables[0], variables[0]
    return variables[0], variables[1]


def synth_amplitudes(spec: GridSpec, seed: int, variables=DEFAULT_VARIABLES) -> dict[str, dict[str, np.ndarray]]:
    """Spatial base/annual/diurnal fields of every variable for one seed."""
    children = np.random.SeedSequence(seed).spawn(len(variables))
    fields = {}
    for var, child in zip(variables, children):
        rng = np.random.default_rng(child)
        base, annual, diurnal = VARIABLE_PROFILES.get(var, DEFAULT_PROFILE)
        fields[var] = {
            "base": base + 0.05 * abs(annual) * np.tanh(_smooth_field(rng, spec)),
            "annual": annual * (1.0 + 0.5 * np.tanh(_smooth_field(rng, spec))),
            "diurnal": diurnal * (1.0 + 0.3 * np.tanh(_smooth_field(rng, spec))),
            "phases": rng.uniform(0.0, 2 * np.pi, size=2),
            "noise_rng": rng,
        }
    return fields


def synth_cube(
    spec: GridSpec,
    time: TimeAxis,
    seed: int,
    variables=DEFAULT_VARIABLES,
    noise: float = SYNTH_NOISE,
) -> tuple[ClimateCube, np.ndarray]:
    """Deterministic cube plus planted suitability in [0, 1].

    Each variable is base + annual sinusoid + diurnal sinusoid + Gaussian noise
    with smooth, spatially varying amplitudes. Suitability is
    ``planted_suitability`` of the annual amplitude fields of ``tp`` and ``t2m``
    (the first two variables when those are absent); label 1 iff > 0.5.
    """
    variables = tuple(variables)
    _check_variables(variables)
    annual_bin, diurnal_bin = cycle_bins(time)
    t = np.arange(time.n_steps)
    fields = synth_amplitudes(spec, seed, variables)
    values = {}
    for var in variables:
        f = fields[var]
        annual_wave = np.cos(2 * np.pi * annual_bin * t / time.n_steps + f["phases"][0])
        diurnal_wave = np.cos(2 * np.pi * diurnal_bin * t / time.n_steps + f["phases"][1])
        _, annual_scale, _ = VARIABLE_PROFILES.get(var, DEFAULT_PROFILE)
        series = (
            f["base"][None]
            + f["annual"][None] * annual_wave[:, None, None]
            + f["diurnal"][None] * diurnal_wave[:, None, None]
            + noise * annual_scale * f["noise_rng"].standard_normal((time.n_steps, *spec.shape))
        )
        values[var] = series.astype(DTYPE)
    wet, hot = _suitability_pair(variables)
    suitability = planted_suitability(fields[wet]["annual"], fields[hot]["annual"])
    return ClimateCube.from_arrays(spec, time, values), suitability


def refine_grid(spec: GridSpec, factor: int) -> GridSpec:
    """Same extent with ``factor`` times finer node spacing."""
    return GridSpec(
        spec.lat_min,
        spec.lat_max,
        spec.lon_min,
        spec.lon_max,
        (spec.n_lat - 1) * factor + 1,
        (spec.n_lon - 1) * factor + 1,
    )


def synth_disturbance(
    suitability: np.ndarray, seed: int, margin: float = 0.15, degraded_fraction: float = 0.12,
    irrigated_fraction: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """Degraded (suitable but barren) and irrigated (unsuitable but green) pixel masks."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    draw = rng.random(suitability.shape)
    degraded = (suitability > 0.5 + margin) & (draw < degraded_fraction)
    irrigated = (suitability < 0.5 - margin) & (draw < irrigated_fraction)
    return degraded, irrigated


def synth_ndvi(
    spec: GridSpec,
    suitability: np.ndarray,
    seed: int,
    years=(2020, 2021, 2022, 2023, 2024),
    degraded: np.ndarray | None = None,
    irrigated: np.ndarray | None = None,
    refine: int = 3,
    every_days: int = 10,
) -> NdviRaster:
    """NDVI on a ``refine``-times finer grid consistent with planted suitability.

    Natural cover rises with suitability; degraded pixels stay barren and
    irrigated pixels stay green. A winter green-up outside the summer window
    checks that seasonal vegetation is excluded downstream.
    """
    degraded = np.zeros(spec.shape, bool) if degraded is None else degraded
    irrigated = np.zeros(spec.shape, bool) if irrigated is None else irrigated
    fine = refine_grid(spec, refine)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    coarse = 0.05 + 0.3 * suitability**2
    coarse = np.where(degraded, 0.03, coarse)
    coarse = np.where(irrigated, 0.45, coarse)
    ii = np.rint((fine.lats - spec.lat_min) / spec.lat_step).astype(int)
    jj = np.rint((fine.lons - spec.lon_min) / spec.lon_step).astype(int)
    level = coarse[np.ix_(ii, jj)] + 0.01 * rng.standard_normal(fine.shape)
    observations = []
    for year in years:
        for doy in range(1, 366, every_days):
            winter = 0.08 if (doy < SUMMER_WINDOW[0] or doy > SUMMER_WINDOW[1]) else 0.0
            grid = level + winter + 0.005 * rng.standard_normal(fine.shape)
            observations.append(NdviObservation(int(year), doy, np.clip(grid, -1.0, 1.0).astype(DTYPE)))
    return NdviRaster(spec=fine, observations=observations)
