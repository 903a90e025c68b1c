from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from shapely.geometry import Point, Polygon, box

from agroevo.landscape import (
    ALL_DIRECTIONS,
    Direction,
    EconomicParams,
    GenerationError,
    InterventionRecord,
    LandscapeParseError,
    Plot,
    PlotType,
    _partition_with_retries,
    direction_set,
    farm_to_feature_collection,
    generate_landscape,
    parse_farm_collection,
    quadrants,
    read_interventions,
    read_landscape,
    read_landscape_file,
    realize_intervention_geometry,
    validate_farm,
    validate_landscape,
    voronoi_partition,
    write_interventions,
    write_landscape_file,
)

UNIT = box(0, 0, 1, 1)


def test_default_landscape_has_five_farms_of_nine_plots():
    land = generate_landscape(7, n_farms=5, plots_per_farm=9)
    assert len(land.farms) == 5
    assert [len(f.plots) for f in land.farms] == [9] * 5
    assert len(land.plots()) == 45
    assert validate_landscape(land) == []


def test_single_plot_farm_equals_farm_polygon():
    land = generate_landscape(3, n_farms=1, plots_per_farm=1)
    farm = land.farms[0]
    assert farm.plots[0].geometry.equals(farm.geometry)
    assert farm.geometry.equals(land.boundary)


def test_ag_fraction_matches_bernoulli_rate():
    ag = 0
    for seed in range(1000):
        land = generate_landscape(seed, n_farms=1, plots_per_farm=1, ag_probability=0.6)
        ag += land.farms[0].plots[0].plot_type is PlotType.AG
    assert abs(ag / 1000 - 0.6) <= 0.03


def test_ag_probability_extremes():
    all_ag = generate_landscape(1, n_farms=2, plots_per_farm=4, ag_probability=1.0)
    assert all(p.plot_type is PlotType.AG and p.yield_value is not None for p in all_ag.plots())
    no_ag = generate_landscape(1, n_farms=2, plots_per_farm=4, ag_probability=0.0)
    assert all(p.plot_type is PlotType.HAB and p.yield_value is None for p in no_ag.plots())


def test_generation_preconditions():
    with pytest.raises(ValueError):
        generate_landscape(1, n_farms=0)
    with pytest.raises(ValueError):
        generate_landscape(1, ag_probability=1.5)
    with pytest.raises(ValueError):
        generate_landscape(1, label_weights={"ag_plot": {"Corn": -1.0}, "hab_plot": {"Wetland": 1.0}})


class _StuckRng:
    """Always proposes the same point, so every partition attempt is degenerate."""

    def uniform(self, lo, hi, size):
        return np.full(size, (lo + hi) / 2)


def test_coincident_seed_points_fail_after_bounded_retries():
    with pytest.raises(GenerationError, match="after 3 retries"):
        _partition_with_retries(_StuckRng(), box(0, 0, 10, 10), 3, 3, "boundary")


# -- Voronoi ---------------------------------------------------------------

def test_voronoi_single_point_is_boundary():
    cells = voronoi_partition(UNIT, [(0.3, 0.6)])
    assert len(cells) == 1 and cells[0].equals(UNIT)


def test_voronoi_two_sites_split_at_bisector():
    left, right = voronoi_partition(UNIT, [(0.25, 0.5), (0.75, 0.5)])
    assert left.symmetric_difference(box(0, 0, 0.5, 1)).area < 1e-12
    assert right.symmetric_difference(box(0.5, 0, 1, 1)).area < 1e-12


def test_voronoi_four_symmetric_sites_give_quadrants():
    pts = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    cells = voronoi_partition(UNIT, pts)
    for cell, pt in zip(cells, pts):
        assert cell.area == pytest.approx(0.25, abs=1e-12)
        assert cell.contains(Point(pt))


def test_voronoi_rejects_outside_and_duplicate_points():
    with pytest.raises(ValueError, match="outside"):
        voronoi_partition(UNIT, [(0.5, 0.5), (1.5, 0.5)])
    with pytest.raises(ValueError, match="distinct"):
        voronoi_partition(UNIT, [(0.5, 0.5), (0.5, 0.5)])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=1, max_size=12, unique=True))
@example([(0.5498310908615217, 0.27805121554051276), (0.06401206750373664, 0.6328125),
          (0.5089217013822361, 0.5), (0.46875, 0.546875)])
def test_voronoi_partition_property(points):
    # sites closer than this make slivers that are fine mathematically but noisy numerically
    for i, a in enumerate(points):
        for b in points[i + 1:]:
            if abs(a[0] - b[0]) + abs(a[1] - b[1]) < 1e-3:
                return
    cells = voronoi_partition(UNIT, points)
    assert sum(c.area for c in cells) == pytest.approx(1.0, rel=1e-6)
    for i, a in enumerate(cells):
        assert a.distance(Point(points[i])) < 1e-9
        for b in cells[i + 1:]:
            assert not a.relate_pattern(b, "2********")
            assert a.intersection(b).area < 1e-9


# -- invariants over many seeds ---------------------------------------------

@pytest.mark.parametrize("seed", [1, 17, 33, 50])
def test_generated_landscape_invariants(seed):
    land = generate_landscape(seed)
    assert validate_landscape(land) == []
    for farm in land.farms:
        ids = {p.id for p in farm.plots}
        for p in farm.plots:
            assert set(p.nbs) <= ids and p.id not in p.nbs


def test_determinism_gives_byte_identical_files(tmp_path):
    write_landscape_file(generate_landscape(11), tmp_path / "a")
    write_landscape_file(generate_landscape(11), tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.geojson"))
    assert len(files) == 6
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_different_seeds_differ():
    a = farm_to_feature_collection(generate_landscape(1).farms[0])
    b = farm_to_feature_collection(generate_landscape(2).farms[0])
    assert a != b


# -- files -------------------------------------------------------------------

def test_round_trip_preserves_every_field(tmp_path, landscape7):
    farm = landscape7.farm(2)
    path = tmp_path / "farm_2" / "input.geojson"
    write_landscape_file(farm, path)
    back = read_landscape_file(path)
    assert back.id == 2
    for a, b in zip(farm.plots, back.plots):
        assert (a.id, a.plot_type, a.label, a.yield_value, a.nbs) == (b.id, b.plot_type, b.label, b.yield_value, b.nbs)
        assert a.geometry.equals_exact(b.geometry, 1e-9)


def test_landscape_directory_round_trip(tmp_path, landscape7):
    write_landscape_file(landscape7, tmp_path / "land")
    back = read_landscape(tmp_path / "land")
    assert [f.id for f in back.farms] == [1, 2, 3, 4, 5]
    assert back.boundary.equals(landscape7.boundary)
    assert validate_landscape(back) == []


def _collection(landscape7):
    return farm_to_feature_collection(landscape7.farm(1))


def test_missing_type_names_the_feature(landscape7):
    doc = _collection(landscape7)
    del doc["features"][3]["properties"]["type"]
    with pytest.raises(LandscapeParseError, match="feature id=4.*'type'"):
        parse_farm_collection(doc)


def test_yield_on_habitat_plot_is_rejected(landscape7):
    doc = _collection(landscape7)
    hab = next(f for f in doc["features"] if f["properties"]["type"] == "hab_plot")
    hab["properties"]["yield"] = 2.0
    with pytest.raises(LandscapeParseError, match=f"feature id={hab['properties']['id']}"):
        parse_farm_collection(doc)


def test_non_polygon_geometry_is_rejected(landscape7):
    doc = _collection(landscape7)
    doc["features"][0]["geometry"] = {"type": "Point", "coordinates": [0, 0]}
    with pytest.raises(LandscapeParseError, match="feature id=1: geometry must be a Polygon"):
        parse_farm_collection(doc)


def test_malformed_json_is_a_parse_error(tmp_path):
    p = tmp_path / "bad.geojson"
    p.write_text("{not json")
    with pytest.raises(LandscapeParseError):
        read_landscape_file(p)


def test_interventions_round_trip_and_missing_values(tmp_path, landscape7):
    farm = landscape7.farm(1)
    recs = {1: InterventionRecord(1, 0.25, 0.0), 2: InterventionRecord(2, 0.0, 1.0)}
    write_interventions(tmp_path / "out.geojson", recs, farm)
    assert read_interventions(tmp_path / "out.geojson") == recs
    doc = {"type": "FeatureCollection", "features": [{"type": "Feature", "properties": {"id": 5}, "geometry": None}]}
    (tmp_path / "sparse.geojson").write_text(json.dumps(doc))
    assert read_interventions(tmp_path / "sparse.geojson") == {5: InterventionRecord(5, 0.0, 0.0)}


def test_out_of_range_intervention_is_rejected(tmp_path):
    doc = {"type": "FeatureCollection",
           "features": [{"type": "Feature", "properties": {"id": 1, "margin_intervention": 1.5}, "geometry": None}]}
    (tmp_path / "o.geojson").write_text(json.dumps(doc))
    with pytest.raises(LandscapeParseError, match="feature id=1: margin_intervention"):
        read_interventions(tmp_path / "o.geojson")


# -- domain types --------------------------------------------------------------

def test_plot_invariants():
    with pytest.raises(ValueError):
        Plot(1, 1, UNIT, PlotType.HAB, "Wetland", yield_value=1.0)
    with pytest.raises(ValueError):
        Plot(1, 1, UNIT, PlotType.AG, "Corn", yield_value=None)
    with pytest.raises(ValueError):
        Plot(1, 1, Polygon([(0, 0), (1, 1), (0, 1), (1, 0)]), PlotType.HAB, "Wetland")


def test_intervention_record_bounds():
    assert InterventionRecord(1) == InterventionRecord(1, 0.0, 0.0)
    with pytest.raises(ValueError):
        InterventionRecord(1, -0.1, 0.0)


def test_direction_sets_reject_duplicates_and_unknown_names():
    assert direction_set(["north-west", "south-east"]) == {Direction.NW, Direction.SE}
    with pytest.raises(ValueError, match="duplicate"):
        direction_set(["north-west", "north-west"])
    with pytest.raises(ValueError, match="unknown"):
        direction_set(["north"])


def test_economic_params_defaults_and_validation():
    econ = EconomicParams.default()
    assert econ.crop_prices["Soybeans"] == 370 and econ.crop_prices["Oats"] == 95
    assert econ.costs["margin"] == {"implementation": 400, "maintenance": 60}
    assert econ.costs["habitat"] == {"implementation": 300, "maintenance": 70}
    doc = econ.to_document()
    assert EconomicParams.from_document(doc) == econ
    del doc["crop_prices"]["Corn"]
    with pytest.raises(ValueError, match="Corn"):
        EconomicParams.from_document(doc)


# -- quadrant realization --------------------------------------------------------

def _unit_plot(geom=UNIT):
    return Plot(1, 1, geom, PlotType.AG, "Corn", 1.0)


def test_all_habitat_quadrants_cover_the_plot():
    geo = realize_intervention_geometry(_unit_plot(), [], ALL_DIRECTIONS, 0.1)
    union = geo.habitat_regions[Direction.NW]
    for d in ALL_DIRECTIONS[1:]:
        union = union.union(geo.habitat_regions[d])
    assert abs(union.area - 1.0) < 1e-9
    assert geo.margin_strips == {}


def test_no_directions_give_no_geometry():
    geo = realize_intervention_geometry(_unit_plot(), [], [], 0.1)
    assert geo.habitat_regions == {} and geo.margin_strips == {}


def test_unit_square_north_east_quadrant():
    geo = realize_intervention_geometry(_unit_plot(), [], [Direction.NE], 0.1)
    region = geo.habitat_regions[Direction.NE]
    assert region.area == pytest.approx(0.25, abs=1e-12)
    assert region.symmetric_difference(box(0.5, 0.5, 1, 1)).area < 1e-12


def test_margin_strip_lies_in_its_quadrant_boundary_band():
    geo = realize_intervention_geometry(_unit_plot(), [Direction.SW], [], 0.1)
    strip = geo.margin_strips[Direction.SW]
    # L-shaped band of width 0.1 along the south and west edges of the SW quadrant
    assert strip.area == pytest.approx(0.5 * 0.1 * 2 - 0.01, abs=1e-12)
    assert box(0, 0, 0.5, 0.5).buffer(1e-12).covers(strip)


def test_margin_width_precondition():
    with pytest.raises(ValueError):
        realize_intervention_geometry(_unit_plot(), [Direction.NE], [], 0.6)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_quadrant_areas_sum_to_plot_area(seed):
    land = generate_landscape(seed, n_farms=2, plots_per_farm=4)
    for plot in land.plots():
        total = sum(q.area for q in quadrants(plot.geometry).values())
        assert abs(total - plot.geometry.area) <= 1e-9 * plot.geometry.area


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 10))
def test_partition_property_over_random_configs(seed, n_farms, plots):
    land = generate_landscape(seed, n_farms=n_farms, plots_per_farm=plots)
    assert validate_landscape(land) == []
    for farm in land.farms:
        assert validate_farm(farm) == []
