import math

import numpy as np
import pandas as pd
import pytest

from drycss import helper, spectral
from drycss.errors import AttributeJoinError, DataError, GridMismatchError, RuleError
from drycss.flows import DATA_DIR
from drycss.grid_store import EPOCH_2020, ClimateCube, GridSpec, TimeAxis, pixel_matrix
from drycss.opportunity import (
    AnalogMatch,
    CandidateSite,
    NoAnalog,
    Rule,
    analog_targets,
    apply_rules,
    candidates_frame,
    climate_distance_map,
    distance_vectors,
    extract_candidates,
    filter_candidates,
    find_analog,
    format_dms,
    great_circle_km,
    join_attributes,
    load_attribute_table,
    load_rules,
    matches_from_table,
    opportunity_map,
    parse_dms,
    parse_rules,
    sites_from_table,
    uplift_report,
)
from drycss.pipeline import Calibration, CssRaster

GRID = GridSpec(0.0, 1.0, 0.0, 1.0, 11, 11)
SMALL = GridSpec(0.0, 0.2, 0.0, 0.2, 3, 3)


@pytest.fixture(scope="module")
def table_s4():
    return load_attribute_table(DATA_DIR / "table_s4.csv")


@pytest.fixture(scope="module")
def table_s5():
    return pd.read_csv(DATA_DIR / "table_s5.csv")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def test_one_degree_of_latitude():
    assert great_circle_km(0.0, 0.0, 1.0, 0.0) == pytest.approx(111.195, abs=1e-3)


def test_distance_broadcasts():
    d = great_circle_km(np.zeros(3), np.zeros(3), np.array([0.0, 1.0, 2.0]), np.zeros(3))
    np.testing.assert_allclose(d, [0.0, 111.195, 222.39], atol=1e-2)


def test_dms_parsing_and_formatting():
    lat, lon = parse_dms("25°59'35.9\"N 38°00'42.5\"E")
    assert lat == pytest.approx(25.99331, abs=1e-5)
    assert lon == pytest.approx(38.01181, abs=1e-5)
    assert format_dms(lat, lon) == "25°59'35.9\"N 38°00'42.5\"E"
    assert parse_dms("10°00'00.0\"S 5°30'00.0\"W") == pytest.approx((-10.0, -5.5))


def test_dms_needs_both_axes():
    with pytest.raises(DataError):
        parse_dms("25°59'35.9\"N")
    with pytest.raises(DataError):
        parse_dms("25°59'35.9\"N 26°00'00.0\"N")


# ---------------------------------------------------------------------------
# Opportunity map and candidates
# ---------------------------------------------------------------------------

def test_opportunity_is_calibrated_css_minus_ndvi():
    values = np.array([[0.0, 1.0], [0.5, np.nan]])
    mask = np.isfinite(values)
    spec = GridSpec(0.0, 1.0, 0.0, 1.0, 2, 2)
    css = CssRaster(spec, values, ("blup-0002-r00",), mask)
    diff = opportunity_map(css, np.full((2, 2), 0.1), Calibration(0.3, 0.05, 1.0, 10))
    np.testing.assert_allclose(diff[mask], [-0.05, 0.25, 0.1])
    assert np.isnan(diff[1, 1])
    with pytest.raises(GridMismatchError):
        opportunity_map(css, np.zeros((3, 3)), Calibration(0.3, 0.05, 1.0, 10))


def test_candidates_respect_spacing_and_order():
    diff = np.full(GRID.shape, -0.1)
    diff[5, 5] = 1.0
    diff[5, 6] = 0.9  # about 11 km east of the peak
    diff[0, 0] = 0.5
    diff[2, 8] = 0.2
    diff[2, 2] = 0.2
    sites = extract_candidates(diff, GRID, count=10, min_spacing_km=15.0)
    assert [s.pixel for s in sites] == [(5, 5), (0, 0), (2, 2), (2, 8)]
    assert [s.rank for s in sites] == [1, 2, 3, 4]
    assert sites[0].opportunity == 1.0
    closer = extract_candidates(diff, GRID, count=10, min_spacing_km=5.0)
    assert (5, 6) in [s.pixel for s in closer]


def test_candidates_stop_at_count():
    diff = np.ones(GRID.shape)
    sites = extract_candidates(diff, GRID, count=3, min_spacing_km=0.0)
    assert len(sites) == 3
    # equal values fall back to (lat, lon) order
    assert [s.pixel for s in sites] == [(0, 0), (0, 1), (0, 2)]


def test_candidate_spacing_on_random_grids(rng):
    for _ in range(100):
        n_lat, n_lon = rng.integers(2, 16, size=2)
        lat0, lon0 = rng.uniform(10.0, 30.0), rng.uniform(35.0, 50.0)
        spec = GridSpec(lat0, lat0 + 0.1 * (n_lat - 1), lon0, lon0 + 0.1 * (n_lon - 1), int(n_lat), int(n_lon))
        diff = rng.normal(0.1, 0.3, spec.shape)
        diff[rng.random(spec.shape) < 0.1] = np.nan
        min_km = float(rng.uniform(5.0, 40.0))
        sites = extract_candidates(diff, spec, count=int(rng.integers(1, 30)), min_spacing_km=min_km)
        lat = np.array([s.lat for s in sites])
        lon = np.array([s.lon for s in sites])
        dist = great_circle_km(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
        np.fill_diagonal(dist, np.inf)
        assert (dist >= min_km).all()
        values = [s.opportunity for s in sites]
        assert all(v > 0 for v in values)
        assert values == sorted(values, reverse=True)


def test_candidates_carry_css_and_ndvi():
    diff = np.zeros(GRID.shape)
    diff[3, 4] = 0.4
    css = np.full(GRID.shape, 0.7)
    ndvi = np.full(GRID.shape, 0.05)
    (site,) = extract_candidates(diff, GRID, count=5, css=css, ndvi=ndvi)
    assert (site.lat, site.lon) == GRID.node(3, 4)
    assert (site.css, site.ndvi) == (0.7, 0.05)
    assert site.status == "unannotated"


# ---------------------------------------------------------------------------
# Attributes and rules
# ---------------------------------------------------------------------------

def test_attribute_table_keeps_none_as_a_value(table_s4):
    assert len(table_s4) == 25
    assert (table_s4["anthropogenic_influence"] == "None").sum() == 10
    assert table_s4.loc[table_s4.site == 2, "terrain"].item() == "Hill or Mountain, Wadi"


def test_default_rules_keep_thirteen_sites(table_s4):
    rules = load_rules(DATA_DIR / "default.rules")
    kept = filter_candidates(sites_from_table(table_s4), rules)
    assert [s.rank for s in kept] == [3, 4, 5, 7, 9, 14, 15, 16, 18, 19, 21, 22, 24]


def test_numeric_rule(table_s4):
    rules = parse_rules([{"field": "elevation_m", "op": ">", "value": 2100}])
    assert [s.rank for s in filter_candidates(sites_from_table(table_s4), rules)] == [20]


def test_membership_rule():
    rule = Rule("vegetation", "in", ["Sparse Vegetation", "Significant Vegetation"])
    assert rule.holds({"vegetation": "Sparse Vegetation"})
    assert not rule.holds({"vegetation": "No Vegetation"})


@pytest.mark.parametrize(
    "doc",
    [
        {"field": "a", "op": "==", "value": 1},
        [{"field": "a", "op": "~", "value": 1}],
        [{"field": "a", "op": "in", "value": "x"}],
        [{"field": "a", "op": "=="}],
    ],
)
def test_malformed_rules(doc):
    with pytest.raises(RuleError):
        parse_rules(doc)


def test_rules_file_must_be_json(tmp_path):
    (tmp_path / "bad.rules").write_text("accessibility == Yes")
    with pytest.raises(RuleError):
        load_rules(tmp_path / "bad.rules")


def test_numeric_rule_on_text_attribute():
    with pytest.raises(RuleError):
        Rule("terrain", ">", 3).holds({"terrain": "Wadi"})


def test_sites_without_attributes_are_flagged():
    rules = parse_rules([{"field": "accessibility", "op": "==", "value": "Yes"}])
    sites = [
        CandidateSite(1, 20.0, 40.0, attributes={"accessibility": "Yes"}, status="annotated"),
        CandidateSite(2, 20.5, 40.0, attributes={"accessibility": None}, status="annotated"),
        CandidateSite(3, 21.0, 40.0),
    ]
    out = apply_rules(sites, rules)
    assert [s.retained for s in out] == [True, False, False]
    assert [s.status for s in out] == ["annotated", "missing attributes", "missing attributes"]


def test_join_by_site_number(table_s4):
    sites = [CandidateSite(4, 25.3, 38.2), CandidateSite(99, 25.0, 38.0)]
    joined = join_attributes(sites, table_s4)
    assert joined[0].attributes["anthropogenic_influence"] == "Farm"
    assert joined[0].status == "annotated"
    assert joined[1].status == "unannotated"


def test_join_by_coordinates_within_half_a_pixel():
    sites = [CandidateSite(1, *GRID.node(2, 3)), CandidateSite(2, *GRID.node(7, 7))]
    lat, lon = GRID.node(2, 3)
    table = pd.DataFrame({"lat": [lat + 0.04], "lon": [lon - 0.04], "accessibility": ["No"]})
    joined = join_attributes(sites, table, GRID)
    assert joined[0].attributes == {"accessibility": "No"}
    assert joined[1].status == "unannotated"


def test_join_rejects_ambiguous_tables(table_s4):
    with pytest.raises(AttributeJoinError):
        join_attributes([CandidateSite(1, 0.0, 0.0)], pd.concat([table_s4, table_s4.head(1)]))
    lat, lon = GRID.node(2, 3)
    twice = pd.DataFrame({"lat": [lat, lat + 0.01], "lon": [lon, lon], "accessibility": ["No", "Yes"]})
    with pytest.raises(AttributeJoinError):
        join_attributes([CandidateSite(1, lat, lon)], twice, GRID)


def test_empty_attribute_table_leaves_sites_unannotated():
    joined = join_attributes([CandidateSite(1, 0.0, 0.0)], pd.DataFrame())
    assert joined[0].status == "unannotated"


def test_candidates_frame_columns(table_s4):
    frame = candidates_frame(sites_from_table(table_s4))
    assert list(frame.columns[:6]) == ["site", "lat", "lon", "css", "ndvi", "opportunity"]
    assert frame["status"].eq("annotated").all()
    assert frame.loc[frame.site == 9, "css"].item() == pytest.approx(1.025)


def _through_csv(sites, tmp_path):
    path = tmp_path / "candidates.csv"
    helper.write_csv(candidates_frame(sites), path)
    return pd.read_csv(path, keep_default_na=False, na_values=[""])


def test_analog_targets_need_a_retained_site(tmp_path):
    sites = [CandidateSite(r, 0.1 * r, 0.1, retained=False) for r in (1, 2, 3)]
    with pytest.raises(DataError, match="retained no candidate"):
        analog_targets(_through_csv(sites, tmp_path))


def test_analog_targets_keep_only_retained_sites(tmp_path):
    sites = [CandidateSite(r, 0.1 * r, 0.1, retained=r != 2) for r in (1, 2, 3)]
    assert analog_targets(_through_csv(sites, tmp_path))["site"].tolist() == [1, 3]


def test_analog_targets_without_rules_keep_every_site(tmp_path):
    sites = [CandidateSite(r, 0.1 * r, 0.1) for r in (1, 2, 3)]
    assert analog_targets(_through_csv(sites, tmp_path))["site"].tolist() == [1, 2, 3]


def test_analog_targets_need_coordinates(tmp_path):
    sites = [CandidateSite(1, float("nan"), float("nan"), retained=True)]
    with pytest.raises(DataError, match="grid location"):
        analog_targets(_through_csv(sites, tmp_path))


# ---------------------------------------------------------------------------
# Climate analogs
# ---------------------------------------------------------------------------

DIST = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 5.0], [3.0, 1.0, 1.0]])
NDVI = np.array([[0.5, 0.3, 0.3], [0.2, 0.1, 0.9], [0.3, 0.3, 0.1]])


def test_greenest_close_pixel_wins():
    match = find_analog(3, (1, 1), DIST, NDVI, SMALL, max_climate_dist=1.0)
    assert isinstance(match, AnalogMatch)
    assert match.analog == SMALL.node(0, 0)
    assert match.analog_ndvi == 0.5
    assert match.ratio == pytest.approx(5.0)
    assert match.spatial_km == pytest.approx(great_circle_km(0.1, 0.1, 0.0, 0.0))


def test_ties_break_by_distance_then_position():
    exclusion = np.zeros((3, 3), bool)
    exclusion[0, 0] = True
    match = find_analog(3, (1, 1), DIST, NDVI, SMALL, exclusion=exclusion, max_climate_dist=1.0)
    assert match.analog == SMALL.node(0, 1)


def test_default_limit_is_a_distance_percentile():
    # 10th percentile of the other pixels' distances is 0.7
    match = find_analog(3, (1, 1), DIST, NDVI, SMALL)
    assert match.analog == SMALL.node(0, 0)
    assert match.climate_distance == 0.0


@pytest.mark.parametrize(
    "kwargs, constraint",
    [
        ({"exclusion": ~np.eye(3, dtype=bool) | np.eye(3, dtype=bool)}, "exclusion"),
        ({"max_climate_dist": -1.0}, "max_climate_dist"),
        ({"max_climate_dist": 1.0, "min_ndvi_margin": 0.5}, "min_ndvi_margin"),
    ],
)
def test_unmet_constraint_is_named(kwargs, constraint):
    result = find_analog(3, (1, 1), DIST, NDVI, SMALL, **kwargs)
    assert isinstance(result, NoAnalog)
    assert result.constraint == constraint


def test_candidate_without_ndvi():
    ndvi = NDVI.copy()
    ndvi[1, 1] = np.nan
    with pytest.raises(DataError):
        find_analog(3, (1, 1), DIST, ndvi, SMALL)


def test_distance_map_from_cube():
    rng = np.random.default_rng(5)
    time = TimeAxis(EPOCH_2020, 16)
    values = {"tp": rng.random((16, 3, 3)), "t2m": rng.random((16, 3, 3))}
    values["tp"][:, 2, 2] = np.nan
    cube = ClimateCube.from_arrays(SMALL, time, values)
    tables = spectral.distance_tables(np.stack([pixel_matrix(cube, 0, 0), pixel_matrix(cube, 1, 1)]), cube.variables, 4)
    vectors = distance_vectors(cube, tables)
    assert vectors.shape == (3, 3, tables.n_features)
    assert np.isnan(vectors[2, 2]).all()
    dist = climate_distance_map(vectors, (0, 0))
    assert dist[0, 0] == 0.0
    expected = spectral.climate_distance(
        spectral.truncated_coefficients(pixel_matrix(cube, 0, 0), tables),
        spectral.truncated_coefficients(pixel_matrix(cube, 1, 2), tables),
    )
    assert dist[1, 2] == pytest.approx(expected)
    assert np.isnan(dist[2, 2])
    with pytest.raises(DataError):
        climate_distance_map(vectors, (2, 2))


# ---------------------------------------------------------------------------
# Uplift
# ---------------------------------------------------------------------------

def test_shipped_matches_give_both_uplift_averages(table_s5):
    report = uplift_report(matches_from_table(table_s5))
    assert len(report.per_site) == 13
    assert report.ratio_of_means == pytest.approx(1.4087 / 0.5706, rel=1e-9)
    assert report.ratio_of_means == pytest.approx(2.469, abs=1e-3)
    assert report.mean_of_ratios == pytest.approx(2.666, abs=1e-2)
    assert report.excluded == ()


def test_shipped_spatial_distances(table_s5):
    matches = {m.site: m for m in matches_from_table(table_s5)}
    for site in (14, 15):
        m = matches[site]
        assert great_circle_km(*m.candidate, *m.analog) == pytest.approx(m.spatial_km, abs=0.1)


def test_non_positive_candidate_ndvi_is_excluded():
    matches = [
        AnalogMatch(1, (0.0, 0.0), (0.1, 0.1), 1.0, 15.0, 0.05, 0.10),
        AnalogMatch(2, (0.0, 0.0), (0.1, 0.1), 1.0, 15.0, 0.0, 0.10),
    ]
    report = uplift_report(matches)
    assert report.excluded == (2,)
    assert report.mean_of_ratios == pytest.approx(2.0)
    assert report.summary()["excluded_sites"] == [2]
    assert math.isnan(matches[1].ratio)


def test_uplift_needs_matches():
    with pytest.raises(DataError):
        uplift_report([])
