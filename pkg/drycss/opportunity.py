"""Opportunity maps, restoration candidates, attribute rules and climate analogs."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

import numpy as np
import pandas as pd
from prefect.logging import get_logger

from drycss import spectral
from drycss.errors import AttributeJoinError, DataError, GridMismatchError, RuleError
from drycss.grid_store import ClimateCube, GridSpec, iter_pixel_series

if TYPE_CHECKING:
    from drycss.pipeline import Calibration, CssRaster

logger = get_logger(__name__)

EARTH_RADIUS_KM = 6371.0
ATTRIBUTE_COLUMNS = [
    "province",
    "climate_zone",
    "terrain",
    "elevation_m",
    "vegetation",
    "anthropogenic_influence",
    "accessibility",
]


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def great_circle_km(lat1, lon1, lat2, lon2):
    """Haversine distance on a sphere of radius 6371 km; broadcasts over arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


_DMS = re.compile(r"""(\d+)\s*°\s*(\d+)\s*'\s*([\d.]+)\s*"\s*([NSEW])""")


def parse_dms(text: str) -> tuple[float, float]:
    """``25°59'35.9"N 38°00'42.5"E`` -> (25.99331, 38.01181)."""
    parts = _DMS.findall(text)
    if len(parts) != 2:
        raise DataError(f"cannot read a latitude/longitude pair from {text!r}")
    values = {}
    for deg, minutes, seconds, hemi in parts:
        value = int(deg) + int(minutes) / 60 + float(seconds) / 3600
        axis = "lat" if hemi in "NS" else "lon"
        if axis in values:
            raise DataError(f"{text!r} gives two {axis} values")
        values[axis] = -value if hemi in "SW" else value
    return values["lat"], values["lon"]


def format_dms(lat: float, lon: float) -> str:
    def one(value: float, pos: str, neg: str) -> str:
        total = round(abs(value) * 36000)  # tenths of a second
        deg, rest = divmod(total, 36000)
        minutes, tenths = divmod(rest, 600)
        return f"{deg}°{minutes:02d}'{tenths / 10:04.1f}\"{pos if value >= 0 else neg}"

    return f"{one(lat, 'N', 'S')} {one(lon, 'E', 'W')}"


# ---------------------------------------------------------------------------
# Opportunity and candidates
# ---------------------------------------------------------------------------

def opportunity_map(css: "CssRaster", ndvi: np.ndarray, cal: "Calibration") -> np.ndarray:
    """Calibrated CSS in NDVI units minus observed NDVI; positive means under-realized potential."""
    ndvi = np.asarray(ndvi, dtype=np.float64)
    if ndvi.shape != css.values.shape:
        raise GridMismatchError(f"NDVI grid {ndvi.shape} is not aligned with the CSS grid {css.values.shape}")
    diff = cal.slope * css.values + cal.intercept - ndvi
    diff[~css.mask] = np.nan
    return diff


@dataclass(frozen=True)
class CandidateSite:
    rank: int
    lat: float
    lon: float
    css: float = float("nan")
    ndvi: float = float("nan")
    opportunity: float = float("nan")
    pixel: tuple[int, int] | None = None
    attributes: dict = field(default_factory=dict)
    status: str = "unannotated"
    retained: bool | None = None


def extract_candidates(
    diff: np.ndarray,
    spec: GridSpec,
    count: int = 25,
    min_spacing_km: float = 9.0,
    css: np.ndarray | None = None,
    ndvi: np.ndarray | None = None,
) -> list[CandidateSite]:
    """Greedy spatial non-maximum suppression over positive opportunity pixels.

    Pixels are visited by decreasing value, ties by (lat, lon); each kept pixel
    suppresses everything closer than ``min_spacing_km``.
    """
    diff = np.asarray(diff, dtype=np.float64)
    if diff.shape != spec.shape:
        raise GridMismatchError(f"difference grid {diff.shape} does not match grid {spec.shape}")
    lat, lon = spec.mesh()
    eligible = np.isfinite(diff) & (diff > 0)
    lat_e, lon_e, val_e = lat[eligible], lon[eligible], diff[eligible]
    ii, jj = np.nonzero(eligible)
    order = np.lexsort((lon_e, lat_e, -val_e))

    keep = []
    while order.size > 0 and len(keep) < count:
        k = order[0]
        keep.append(k)
        rest = order[1:]
        dist = great_circle_km(lat_e[k], lon_e[k], lat_e[rest], lon_e[rest])
        order = rest[dist >= min_spacing_km]
    if len(keep) < count:
        logger.warning(f"Only {len(keep)} of {count} candidates fit the grid at {min_spacing_km} km spacing")

    sites = []
    for rank, k in enumerate(keep, start=1):
        i, j = int(ii[k]), int(jj[k])
        sites.append(
            CandidateSite(
                rank=rank,
                lat=float(lat_e[k]),
                lon=float(lon_e[k]),
                css=float(css[i, j]) if css is not None else float("nan"),
                ndvi=float(ndvi[i, j]) if ndvi is not None else float("nan"),
                opportunity=float(val_e[k]),
                pixel=(i, j),
            )
        )
    return sites


def candidates_frame(sites: list[CandidateSite]) -> pd.DataFrame:
    rows = []
    for s in sites:
        row = {"site": s.rank, "lat": s.lat, "lon": s.lon, "css": s.css, "ndvi": s.ndvi, "opportunity": s.opportunity}
        row.update({c: s.attributes.get(c) for c in ATTRIBUTE_COLUMNS})
        row.update({k: v for k, v in s.attributes.items() if k not in row})
        row["status"] = s.status
        row["retained"] = s.retained
        rows.append(row)
    return pd.DataFrame(rows)


def analog_targets(table: pd.DataFrame) -> pd.DataFrame:
    """Rows of a candidates table to search analogs for.

    Once rules have flagged any row, only retained rows count; otherwise every
    candidate does. Rows without coordinates are dropped.
    """
    if "retained" in table:
        flags = table["retained"].astype(str)
        if flags.isin(["True", "False"]).any():
            table = table[flags.eq("True")]
            if table.empty:
                raise DataError("the rules retained no candidate to search analogs for")
    table = table[np.isfinite(table["lat"].astype(float)) & np.isfinite(table["lon"].astype(float))]
    if table.empty:
        raise DataError("no candidate with a grid location to search analogs for")
    return table


# ---------------------------------------------------------------------------
# Attributes and rules
# ---------------------------------------------------------------------------

def load_attribute_table(path: str | Path) -> pd.DataFrame:
    # "None" is a real anthropogenic-influence value, not a missing one
    try:
        return pd.read_csv(path, encoding="utf-8", keep_default_na=False, na_values=[""])
    except pd.errors.EmptyDataError:
        return pd.DataFrame()
    except (OSError, pd.errors.ParserError) as e:
        raise DataError(f"cannot read attribute table {path}: {e}") from e


def _attributes(row: pd.Series, skip: set[str]) -> dict:
    return {k: (None if pd.isna(v) else v) for k, v in row.items() if k not in skip}


def sites_from_table(table: pd.DataFrame) -> list[CandidateSite]:
    """Annotated candidates straight from an attribute table keyed by site number."""
    if "site" not in table.columns:
        raise AttributeJoinError("attribute table needs a 'site' column to build candidates from it")
    if table["site"].duplicated().any():
        raise AttributeJoinError(f"duplicate site numbers {sorted(table.loc[table['site'].duplicated(), 'site'])}")
    skip = {"site", "lat", "lon", "css", "ndvi", "opportunity"}
    sites = []
    for _, row in table.sort_values("site").iterrows():
        sites.append(
            CandidateSite(
                rank=int(row["site"]),
                lat=float(row.get("lat", np.nan)),
                lon=float(row.get("lon", np.nan)),
                css=float(row.get("css", np.nan)),
                ndvi=float(row.get("ndvi", np.nan)),
                opportunity=float(row.get("opportunity", np.nan)),
                attributes=_attributes(row, skip),
                status="annotated",
            )
        )
    return sites


def join_attributes(sites: list[CandidateSite], table: pd.DataFrame, spec: GridSpec | None = None) -> list[CandidateSite]:
    """Left join by site number, or by coordinates within half a pixel when the table has no site column."""
    if table.empty:
        logger.warning(f"Attribute table is empty; all {len(sites)} candidates stay unannotated")
        return [replace(s, status="unannotated") for s in sites]

    if "site" in table.columns:
        dupes = table["site"][table["site"].duplicated()]
        if not dupes.empty:
            raise AttributeJoinError(f"attribute table repeats site numbers {sorted(dupes.tolist())}")
        rows = {int(r["site"]): r for _, r in table.iterrows()}

        def match(site):
            return rows.get(site.rank)

        skip = {"site", "lat", "lon"}
    elif {"lat", "lon"} <= set(table.columns):
        if spec is None:
            raise AttributeJoinError("coordinate-keyed attributes need the grid to know the pixel size")
        half_lat, half_lon = spec.lat_step / 2, spec.lon_step / 2

        def match(site):
            hits = table[(abs(table["lat"] - site.lat) <= half_lat) & (abs(table["lon"] - site.lon) <= half_lon)]
            if len(hits) > 1:
                raise AttributeJoinError(f"{len(hits)} attribute rows match candidate {site.rank} at ({site.lat}, {site.lon})")
            return None if hits.empty else hits.iloc[0]

        skip = {"lat", "lon"}
    else:
        raise AttributeJoinError("attribute table needs a 'site' column or 'lat' and 'lon' columns")

    joined = []
    for site in sites:
        row = match(site)
        if row is None:
            joined.append(replace(site, status="unannotated"))
        else:
            joined.append(replace(site, attributes=_attributes(row, skip), status="annotated"))
    missing = [s.rank for s in joined if s.status == "unannotated"]
    if missing:
        logger.warning(f"Candidates without attributes: {missing}")
    return joined


OPERATORS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "in": lambda a, b: a in b,
    "not in": lambda a, b: a not in b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class Rule:
    field: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in OPERATORS:
            raise RuleError(f"unknown operator {self.op!r} in rule on {self.field!r}")
        if self.op in ("in", "not in") and not isinstance(self.value, (list, tuple)):
            raise RuleError(f"rule {self.field} {self.op} needs a list value")

    def holds(self, attributes: dict) -> bool:
        actual = attributes[self.field]
        expected = self.value
        if self.op in ("<", "<=", ">", ">="):
            try:
                actual, expected = float(actual), float(expected)
            except (TypeError, ValueError) as e:
                raise RuleError(f"rule {self.field} {self.op} {expected!r}: {actual!r} is not a number") from e
        elif isinstance(expected, (list, tuple)):
            expected = tuple(expected)
        return bool(OPERATORS[self.op](actual, expected))


def parse_rules(doc) -> list[Rule]:
    if not isinstance(doc, list):
        raise RuleError("a rules document is a JSON list of {field, op, value} objects")
    rules = []
    for n, entry in enumerate(doc):
        if not isinstance(entry, dict) or set(entry) != {"field", "op", "value"}:
            raise RuleError(f"rule #{n} must have exactly the keys field, op, value")
        rules.append(Rule(str(entry["field"]), str(entry["op"]), entry["value"]))
    return rules


def load_rules(path: str | Path) -> list[Rule]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise RuleError(f"cannot read rules file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise RuleError(f"rules file {path} is not valid JSON: {e}") from e
    return parse_rules(doc)


def apply_rules(sites: list[CandidateSite], rules: list[Rule]) -> list[CandidateSite]:
    """Every site with its ``retained`` flag set; sites lacking a ruled attribute are flagged and not retained."""
    out = []
    for site in sites:
        missing = [r.field for r in rules if site.attributes.get(r.field) is None]
        if site.status == "unannotated" or missing:
            logger.warning(f"Candidate {site.rank} lacks attributes {missing or 'all'}; excluded from filtering")
            out.append(replace(site, status="missing attributes", retained=False))
            continue
        out.append(replace(site, retained=all(r.holds(site.attributes) for r in rules)))
    return out


def filter_candidates(sites: list[CandidateSite], rules: list[Rule]) -> list[CandidateSite]:
    return [s for s in apply_rules(sites, rules) if s.retained]


# ---------------------------------------------------------------------------
# Climate analogs
# ---------------------------------------------------------------------------

def distance_vectors(cube: ClimateCube, tables: spectral.SpectralTables, normalized: bool = False) -> np.ndarray:
    """Climate-distance vector of every valid pixel -> (n_lat, n_lon, p), NaN where masked."""
    out = np.full((*cube.spec.shape, tables.n_features), np.nan)
    for i, j, series in iter_pixel_series(cube):
        out[i, j] = spectral.truncated_coefficients(series, tables, normalized)
    return out


def climate_distance_map(vectors: np.ndarray, pixel: tuple[int, int]) -> np.ndarray:
    ref = vectors[pixel]
    if not np.isfinite(ref).all():
        raise DataError(f"pixel {pixel} has no climate vector (masked)")
    return np.linalg.norm(vectors - ref, axis=-1)


@dataclass(frozen=True)
class AnalogMatch:
    site: int
    candidate: tuple[float, float]
    analog: tuple[float, float]
    climate_distance: float
    spatial_km: float
    candidate_ndvi: float
    analog_ndvi: float

    @property
    def ratio(self) -> float:
        return self.analog_ndvi / self.candidate_ndvi if self.candidate_ndvi > 0 else float("nan")


@dataclass(frozen=True)
class NoAnalog:
    site: int
    constraint: str
    detail: str


def find_analog(
    site: int,
    pixel: tuple[int, int],
    distances: np.ndarray,
    ndvi: np.ndarray,
    spec: GridSpec,
    exclusion: np.ndarray | None = None,
    max_climate_dist: float | None = None,
    min_ndvi_margin: float = 0.02,
    distance_percentile: float = 10.0,
) -> AnalogMatch | NoAnalog:
    """Greenest climatically close pixel; ties by climate distance, then (lat, lon)."""
    ndvi = np.asarray(ndvi, dtype=np.float64)
    if ndvi.shape != spec.shape or distances.shape != spec.shape:
        raise GridMismatchError("analog search needs NDVI and distance grids on the climate grid")
    cand_ndvi = float(ndvi[pixel])
    if not math.isfinite(cand_ndvi):
        raise DataError(f"candidate {site} has no NDVI value")

    pool = np.isfinite(distances) & np.isfinite(ndvi)
    pool[pixel] = False
    if exclusion is not None:
        pool &= ~np.asarray(exclusion, dtype=bool)
    if not pool.any():
        return NoAnalog(site, "exclusion", "every other pixel is masked or excluded")

    if max_climate_dist is None:
        max_climate_dist = float(np.percentile(distances[pool], distance_percentile))
    close = pool & (distances <= max_climate_dist)
    if not close.any():
        return NoAnalog(site, "max_climate_dist", f"no pixel within climate distance {max_climate_dist:.4g}")
    green = close & (ndvi >= cand_ndvi + min_ndvi_margin)
    if not green.any():
        return NoAnalog(
            site,
            "min_ndvi_margin",
            f"no climatically close pixel reaches NDVI {cand_ndvi + min_ndvi_margin:.4f}",
        )

    lat, lon = spec.mesh()
    order = np.lexsort((lon[green], lat[green], distances[green], -ndvi[green]))
    ii, jj = np.nonzero(green)
    i, j = int(ii[order[0]]), int(jj[order[0]])
    cand_lat, cand_lon = spec.node(*pixel)
    a_lat, a_lon = spec.node(i, j)
    return AnalogMatch(
        site=site,
        candidate=(cand_lat, cand_lon),
        analog=(a_lat, a_lon),
        climate_distance=float(distances[i, j]),
        spatial_km=float(great_circle_km(cand_lat, cand_lon, a_lat, a_lon)),
        candidate_ndvi=cand_ndvi,
        analog_ndvi=float(ndvi[i, j]),
    )


def matches_frame(matches: Iterable[AnalogMatch]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "site": m.site,
                "candidate_location": format_dms(*m.candidate),
                "analog_location": format_dms(*m.analog),
                "candidate_ndvi": m.candidate_ndvi,
                "analog_ndvi": m.analog_ndvi,
                "climate_distance": m.climate_distance,
                "spatial_km": m.spatial_km,
            }
            for m in matches
        ],
        columns=["site", "candidate_location", "analog_location", "candidate_ndvi", "analog_ndvi", "climate_distance", "spatial_km"],
    )


def matches_from_table(table: pd.DataFrame) -> list[AnalogMatch]:
    """Matches read back from a candidate/analog table such as the shipped one."""
    required = {"site", "candidate_location", "analog_location", "candidate_ndvi", "analog_ndvi", "climate_distance", "spatial_km"}
    missing = required - set(table.columns)
    if missing:
        raise DataError(f"match table lacks columns {sorted(missing)}")
    return [
        AnalogMatch(
            site=int(r.site),
            candidate=parse_dms(r.candidate_location),
            analog=parse_dms(r.analog_location),
            climate_distance=float(r.climate_distance),
            spatial_km=float(r.spatial_km),
            candidate_ndvi=float(r.candidate_ndvi),
            analog_ndvi=float(r.analog_ndvi),
        )
        for r in table.itertuples(index=False)
    ]


@dataclass(frozen=True)
class UpliftReport:
    per_site: pd.DataFrame
    mean_of_ratios: float
    ratio_of_means: float
    excluded: tuple[int, ...]

    def summary(self) -> dict:
        return {
            "sites": int(len(self.per_site)),
            "excluded_sites": list(self.excluded),
            "mean_of_ratios": self.mean_of_ratios,
            "ratio_of_means": self.ratio_of_means,
        }


def uplift_report(matches: list[AnalogMatch]) -> UpliftReport:
    """Per-site NDVI uplift plus both averages: the mean of per-site ratios and the ratio of mean NDVIs."""
    if not matches:
        raise DataError("uplift report needs at least one analog match")
    usable = [m for m in matches if m.candidate_ndvi > 0]
    excluded = tuple(m.site for m in matches if m.candidate_ndvi <= 0)
    if excluded:
        logger.warning(f"Sites {list(excluded)} have candidate NDVI <= 0 and are left out of the ratios")
    per_site = pd.DataFrame(
        {
            "site": [m.site for m in usable],
            "candidate_ndvi": [m.candidate_ndvi for m in usable],
            "analog_ndvi": [m.analog_ndvi for m in usable],
            "ratio": [m.ratio for m in usable],
        }
    )
    if per_site.empty:
        return UpliftReport(per_site, float("nan"), float("nan"), excluded)
    return UpliftReport(
        per_site,
        mean_of_ratios=float(per_site["ratio"].mean()),
        ratio_of_means=float(per_site["analog_ndvi"].mean() / per_site["candidate_ndvi"].mean()),
        excluded=excluded,
    )
