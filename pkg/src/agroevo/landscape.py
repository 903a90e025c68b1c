"""Farm/plot domain model, synthetic landscape generation and landscape files.

Landscapes are a rectangular cluster boundary split into farms by a clipped
Voronoi tessellation; each farm is split again into plots. Plots carry a type
(``ag_plot`` or ``hab_plot``), a land-use label and, for agricultural plots,
a yield in tonnes/ha.

Farm files are GeoJSON FeatureCollections whose feature properties are
exactly ``id``, ``type``, ``label``, ``yield`` (ag plots only) and ``nbs``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, Union

import numpy as np
import shapely
from shapely.geometry import Polygon, box, mapping, shape
from shapely.ops import unary_union

AREA_RTOL = 1e-6
COORD_TOL = 1e-9


class GenerationError(RuntimeError):
    """Raised when a landscape cannot be generated from the given inputs."""


class LandscapeParseError(ValueError):
    """Raised for malformed landscape or intervention files."""


class PlotType(str, Enum):
    AG = "ag_plot"
    HAB = "hab_plot"


class Direction(str, Enum):
    NW = "north-west"
    NE = "north-east"
    SW = "south-west"
    SE = "south-east"


ALL_DIRECTIONS: tuple[Direction, ...] = (Direction.NW, Direction.NE, Direction.SW, Direction.SE)

DirectionSet = frozenset  # frozenset[Direction]


def direction_set(items: Iterable[Union[str, Direction]] = ()) -> frozenset[Direction]:
    """Build a DirectionSet from direction strings, rejecting duplicates and unknown names."""
    seen: list[Direction] = []
    for item in items:
        try:
            d = Direction(item)
        except ValueError:
            raise ValueError(f"unknown direction {item!r}") from None
        if d in seen:
            raise ValueError(f"duplicate direction {d.value!r}")
        seen.append(d)
    return frozenset(seen)


def direction_strings(dirs: Iterable[Direction]) -> list[str]:
    """Directions in canonical NW, NE, SW, SE order as plain strings."""
    dirs = set(dirs)
    return [d.value for d in ALL_DIRECTIONS if d in dirs]


@dataclass
class Plot:
    id: int
    farm_id: int
    geometry: Polygon
    plot_type: PlotType
    label: str
    yield_value: float | None = None
    nbs: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.plot_type = PlotType(self.plot_type)
        if not isinstance(self.geometry, Polygon) or self.geometry.is_empty:
            raise ValueError(f"plot {self.id}: geometry must be a non-empty Polygon")
        if not self.geometry.is_valid or self.geometry.area <= 0:
            raise ValueError(f"plot {self.id}: geometry must be a valid polygon with nonzero area")
        if self.plot_type is PlotType.HAB and self.yield_value is not None:
            raise ValueError(f"plot {self.id}: hab_plot must not carry a yield")
        if self.plot_type is PlotType.AG:
            if self.yield_value is None or self.yield_value < 0:
                raise ValueError(f"plot {self.id}: ag_plot needs a yield >= 0")


@dataclass
class Farm:
    id: int
    geometry: Polygon
    plots: list[Plot]

    def plot(self, plot_id: int) -> Plot:
        for p in self.plots:
            if p.id == plot_id:
                return p
        raise KeyError(plot_id)

    @property
    def plot_ids(self) -> list[int]:
        return [p.id for p in self.plots]

    @property
    def ag_plot_ids(self) -> list[int]:
        return [p.id for p in self.plots if p.plot_type is PlotType.AG]


@dataclass
class Landscape:
    farms: list[Farm]
    boundary: Polygon
    crs_note: str = "planar coordinates in metres; areas reported in hectares"

    def farm(self, farm_id: int) -> Farm:
        for f in self.farms:
            if f.id == farm_id:
                return f
        raise KeyError(farm_id)

    def plots(self) -> list[Plot]:
        return [p for f in self.farms for p in f.plots]


@dataclass(frozen=True)
class InterventionRecord:
    plot_id: int
    margin_intervention: float = 0.0
    habitat_conversion: float = 0.0

    def __post_init__(self) -> None:
        for name in ("margin_intervention", "habitat_conversion"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"plot {self.plot_id}: {name}={v} outside [0, 1]")


@dataclass
class EconomicParams:
    crop_prices: dict[str, float]
    costs: dict[str, dict[str, float]]
    ag_maintenance: float

    REQUIRED_CROPS = ("Soybeans", "Oats", "Corn", "Canola/rapeseed", "Barley", "Spring wheat")

    def __post_init__(self) -> None:
        missing = [c for c in self.REQUIRED_CROPS if c not in self.crop_prices]
        if missing:
            raise ValueError(f"crop prices missing for {missing}")
        values = list(self.crop_prices.values()) + [self.ag_maintenance]
        for kind in ("margin", "habitat"):
            entry = self.costs.get(kind)
            if entry is None or "implementation" not in entry or "maintenance" not in entry:
                raise ValueError(f"costs for {kind!r} need implementation and maintenance")
            values += [entry["implementation"], entry["maintenance"]]
        if any(v <= 0 for v in values):
            raise ValueError("economic parameters must be positive")

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "EconomicParams":
        costs = {k: dict(v) for k, v in doc["costs"].items()}
        ag = costs.pop("agriculture", {}).get("maintenance", doc.get("ag_maintenance"))
        return cls(crop_prices=dict(doc["crop_prices"]), costs=costs, ag_maintenance=ag)

    @classmethod
    def default(cls) -> "EconomicParams":
        return cls.from_document(load_defaults()["economics"])

    @classmethod
    def load(cls, path: str | Path) -> "EconomicParams":
        return cls.from_document(json.loads(Path(path).read_text()))

    def to_document(self) -> dict[str, Any]:
        costs = {k: dict(v) for k, v in self.costs.items()}
        costs["agriculture"] = {"maintenance": self.ag_maintenance}
        return {"crop_prices": dict(self.crop_prices), "costs": costs}


def load_defaults() -> dict[str, Any]:
    text = resources.files("agroevo.data").joinpath("landscape_defaults.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# Voronoi partition
# ---------------------------------------------------------------------------

def _clip_halfplane(coords: list[tuple[float, float]], a: float, b: float, c: float) -> list[tuple[float, float]]:
    # Sutherland-Hodgman against a*x + b*y <= c
    out: list[tuple[float, float]] = []
    n = len(coords)
    for i in range(n):
        p, q = coords[i], coords[(i + 1) % n]
        fp = a * p[0] + b * p[1] - c
        fq = a * q[0] + b * q[1] - c
        if fp <= 0:
            out.append(p)
        if (fp < 0 < fq) or (fq < 0 < fp):
            t = fp / (fp - fq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


def _polygon_part(geom):
    """The single areal piece of an overlay result, or None when there isn't exactly one."""
    parts = [g for g in getattr(geom, "geoms", [geom]) if isinstance(g, Polygon) and g.area > 0]
    return parts[0] if len(parts) == 1 else None


def voronoi_partition(boundary: Polygon, points: Sequence[tuple[float, float]]) -> list[Polygon]:
    """Voronoi cells of ``points`` clipped to ``boundary``; cell k contains point k."""
    pts = [(float(x), float(y)) for x, y in points]
    if not pts:
        raise ValueError("at least one point is required")
    for k, (x, y) in enumerate(pts):
        if not boundary.covers(shapely.Point(x, y)):
            raise ValueError(f"point {k} ({x}, {y}) lies outside the boundary")
    if len(set(pts)) != len(pts):
        raise ValueError("points must be pairwise distinct")
    if len(pts) == 1:
        return [boundary]

    minx, miny, maxx, maxy = boundary.bounds
    frame = [(minx, miny), (maxx, miny), (maxx, maxy), (minx, maxy)]
    is_frame = boundary.equals(box(minx, miny, maxx, maxy))
    # neighbours compute their shared vertices separately; a common grid makes them identical
    grid = 1e-9 * max(maxx - minx, maxy - miny)
    cells = []
    for k, (xk, yk) in enumerate(pts):
        ring = frame
        for j, (xj, yj) in enumerate(pts):
            if j == k:
                continue
            a, b = xj - xk, yj - yk
            c = 0.5 * ((xj * xj + yj * yj) - (xk * xk + yk * yk))
            ring = _clip_halfplane(ring, a, b, c)
            if len(ring) < 3:
                raise GenerationError(f"Voronoi cell {k} collapsed")
        cell = shapely.set_precision(Polygon(ring), grid)
        if not is_frame:
            cell = _polygon_part(shapely.intersection(cell, boundary, grid_size=grid))
        if cell is None or not isinstance(cell, Polygon) or cell.is_empty or cell.area <= 0:
            raise GenerationError(f"Voronoi cell {k} is not a simple polygon after clipping")
        # keep the snapped coordinates but drop the grid so later overlays run at full precision
        cells.append(shapely.normalize(shapely.set_precision(cell, 0)))
    return cells


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedNormal:
    mean: float
    sd: float
    low: float = 0.0
    high: float = math.inf

    def sample(self, rng: np.random.Generator) -> float:
        for _ in range(1000):
            v = rng.normal(self.mean, self.sd)
            if self.low <= v <= self.high:
                return float(v)
        return float(min(max(self.mean, self.low), self.high))


YieldSampler = Union[TruncatedNormal, Callable[[np.random.Generator], float]]


def default_label_weights() -> dict[str, dict[str, float]]:
    d = load_defaults()
    return {PlotType.AG.value: dict(d["ag_labels"]), PlotType.HAB.value: dict(d["hab_labels"])}


def default_yield_distributions() -> dict[str, TruncatedNormal]:
    return {crop: TruncatedNormal(**spec) for crop, spec in load_defaults()["yields"].items()}


def _sample_points(rng: np.random.Generator, poly: Polygon, n: int) -> list[tuple[float, float]]:
    minx, miny, maxx, maxy = poly.bounds
    out: list[tuple[float, float]] = []
    while len(out) < n:
        xs = rng.uniform(minx, maxx, size=4 * n)
        ys = rng.uniform(miny, maxy, size=4 * n)
        inside = shapely.contains_xy(poly, xs, ys)
        for x, y in zip(xs[inside], ys[inside]):
            if len(out) < n:
                out.append((float(x), float(y)))
    return out


def _partition_with_retries(rng, poly, n, max_retries, what):
    for _ in range(max_retries + 1):
        pts = _sample_points(rng, poly, n)
        try:
            cells = voronoi_partition(poly, pts)
        except (ValueError, GenerationError):
            continue
        if min(c.area for c in cells) > 1e-6 * poly.area:
            return cells
    raise GenerationError(f"could not partition {what} into {n} cells after {max_retries} retries")


def _weighted_choice(rng: np.random.Generator, weights: Mapping[str, float]) -> str:
    labels = list(weights)
    w = np.array([weights[k] for k in labels], dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("label weights must be nonnegative and normalizable")
    return labels[int(rng.choice(len(labels), p=w / w.sum()))]


def plot_neighbors(plots: Sequence[Plot], tol: float | None = None) -> dict[int, list[int]]:
    """Plot ids sharing a boundary segment (not just a corner) with each plot."""
    if not plots:
        return {}
    if tol is None:
        total = sum(p.geometry.area for p in plots)
        tol = 1e-7 * math.sqrt(total)
    nbs: dict[int, list[int]] = {p.id: [] for p in plots}
    for i, a in enumerate(plots):
        for b in plots[i + 1:]:
            if a.geometry.distance(b.geometry) > tol:
                continue
            shared = a.geometry.boundary.intersection(b.geometry.buffer(tol)).length
            if shared > 4 * tol:
                nbs[a.id].append(b.id)
                nbs[b.id].append(a.id)
    return {k: sorted(v) for k, v in nbs.items()}


def generate_landscape(
    seed: int,
    n_farms: int = 5,
    plots_per_farm: int = 9,
    ag_probability: float = 0.6,
    label_weights: Mapping[str, Mapping[str, float]] | None = None,
    yield_distributions: Mapping[str, YieldSampler] | None = None,
    extent: tuple[float, float] = (1000.0, 1000.0),
    max_retries: int = 20,
) -> Landscape:
    """Generate a synthetic landscape; identical arguments give an identical landscape."""
    if n_farms < 1 or plots_per_farm < 1:
        raise ValueError("n_farms and plots_per_farm must be >= 1")
    if not 0.0 <= ag_probability <= 1.0:
        raise ValueError("ag_probability must lie in [0, 1]")
    label_weights = label_weights or default_label_weights()
    yield_distributions = yield_distributions or default_yield_distributions()
    for kind in (PlotType.AG.value, PlotType.HAB.value):
        if kind not in label_weights:
            raise ValueError(f"label weights missing for {kind}")
    for crop in label_weights[PlotType.AG.value]:
        if crop not in yield_distributions:
            raise ValueError(f"no yield distribution for crop {crop!r}")

    rng = np.random.default_rng(seed)
    boundary = box(0.0, 0.0, float(extent[0]), float(extent[1]))
    farm_cells = _partition_with_retries(rng, boundary, n_farms, max_retries, "boundary")

    farms = []
    for fi, farm_poly in enumerate(farm_cells, start=1):
        plot_cells = _partition_with_retries(rng, farm_poly, plots_per_farm, max_retries, f"farm {fi}")
        plots = []
        for pi, cell in enumerate(plot_cells, start=1):
            is_ag = bool(rng.random() < ag_probability)
            ptype = PlotType.AG if is_ag else PlotType.HAB
            label = _weighted_choice(rng, label_weights[ptype.value])
            yv = None
            if is_ag:
                sampler = yield_distributions[label]
                yv = sampler.sample(rng) if hasattr(sampler, "sample") else float(sampler(rng))
                yv = round(yv, 4)
            plots.append(Plot(pi, fi, cell, ptype, label, yv))
        nbs = plot_neighbors(plots)
        for p in plots:
            p.nbs = nbs[p.id]
        farms.append(Farm(fi, farm_poly, plots))
    return Landscape(farms, boundary)


def validate_landscape(landscape: Landscape, rtol: float = AREA_RTOL) -> list[str]:
    """Return human-readable invariant violations (empty when valid)."""
    problems = []
    farm_area = sum(f.geometry.area for f in landscape.farms)
    b_area = landscape.boundary.area
    if abs(farm_area - b_area) > rtol * b_area:
        problems.append(f"farm areas sum to {farm_area}, boundary area is {b_area}")
    for i, fa in enumerate(landscape.farms):
        for fb in landscape.farms[i + 1:]:
            ov = fa.geometry.intersection(fb.geometry).area
            if ov > 1e-9 * min(fa.geometry.area, fb.geometry.area):
                problems.append(f"farms {fa.id} and {fb.id} overlap by {ov}")
    for farm in landscape.farms:
        problems.extend(validate_farm(farm, rtol))
    return problems


def validate_farm(farm: Farm, rtol: float = AREA_RTOL) -> list[str]:
    problems = []
    area = farm.geometry.area
    total = sum(p.geometry.area for p in farm.plots)
    if abs(total - area) > rtol * area:
        problems.append(f"farm {farm.id}: plot areas sum to {total}, farm area is {area}")
    for i, a in enumerate(farm.plots):
        outside = a.geometry.difference(farm.geometry).area
        if outside > rtol * a.geometry.area:
            problems.append(f"farm {farm.id}: plot {a.id} extends outside its farm")
        for b in farm.plots[i + 1:]:
            ov = a.geometry.intersection(b.geometry).area
            if ov > 1e-9 * min(a.geometry.area, b.geometry.area):
                problems.append(f"farm {farm.id}: plots {a.id} and {b.id} overlap by {ov}")
    by_id = {p.id: p for p in farm.plots}
    for p in farm.plots:
        for n in p.nbs:
            if n not in by_id or p.id not in by_id[n].nbs:
                problems.append(f"farm {farm.id}: neighbor relation {p.id}->{n} is not symmetric")
    return problems


# ---------------------------------------------------------------------------
# Landscape files
# ---------------------------------------------------------------------------

def _geometry_json(poly: Polygon) -> dict[str, Any]:
    return json.loads(json.dumps(mapping(poly)))


def farm_to_feature_collection(farm: Farm) -> dict[str, Any]:
    features = []
    for p in farm.plots:
        props: dict[str, Any] = {"id": p.id, "type": p.plot_type.value, "label": p.label}
        if p.plot_type is PlotType.AG:
            props["yield"] = p.yield_value
        props["nbs"] = list(p.nbs)
        features.append({"type": "Feature", "properties": props, "geometry": _geometry_json(p.geometry)})
    return {"type": "FeatureCollection", "features": features}


def _feature_label(feature: Any, index: int) -> str:
    props = feature.get("properties") if isinstance(feature, dict) else None
    if isinstance(props, dict) and "id" in props:
        return f"feature id={props['id']}"
    return f"feature #{index}"


def parse_farm_collection(doc: Any, farm_id: int = 0) -> Farm:
    """Build a Farm from a FeatureCollection dict, raising LandscapeParseError on bad input."""
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise LandscapeParseError("document is not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list) or not features:
        raise LandscapeParseError("FeatureCollection has no features")
    plots = []
    for i, feat in enumerate(features):
        where = _feature_label(feat, i)
        if not isinstance(feat, dict) or not isinstance(feat.get("properties"), dict):
            raise LandscapeParseError(f"{where}: missing properties")
        props = feat["properties"]
        for key in ("id", "type", "label", "nbs"):
            if key not in props:
                raise LandscapeParseError(f"{where}: missing required property {key!r}")
        geom = feat.get("geometry")
        if not isinstance(geom, dict) or geom.get("type") != "Polygon":
            raise LandscapeParseError(f"{where}: geometry must be a Polygon")
        try:
            poly = shape(geom)
            plot = Plot(
                id=int(props["id"]),
                farm_id=farm_id,
                geometry=poly,
                plot_type=PlotType(props["type"]),
                label=str(props["label"]),
                yield_value=None if props.get("yield") is None else float(props["yield"]),
                nbs=[int(n) for n in props["nbs"]],
            )
        except (ValueError, TypeError, KeyError) as exc:
            raise LandscapeParseError(f"{where}: {exc}") from exc
        plots.append(plot)
    ids = [p.id for p in plots]
    if len(set(ids)) != len(ids):
        raise LandscapeParseError("duplicate plot ids in FeatureCollection")
    geometry = unary_union([p.geometry for p in plots])
    if not isinstance(geometry, Polygon):
        geometry = geometry.convex_hull
    return Farm(farm_id, geometry, plots)


def _farm_id_from_path(path: Path) -> int:
    name = path.parent.name
    if name.startswith("farm_"):
        try:
            return int(name[5:])
        except ValueError:
            pass
    return 0


def write_landscape_file(obj: Farm | Landscape, path: str | Path) -> None:
    """Write a farm to ``path`` or a whole landscape under directory ``path``.

    A landscape is written as ``farm_<k>/input.geojson`` per farm plus a
    ``landscape.geojson`` index of farm polygons and the cluster boundary.
    """
    path = Path(path)
    if isinstance(obj, Farm):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(farm_to_feature_collection(obj), indent=2) + "\n")
        return
    path.mkdir(parents=True, exist_ok=True)
    for farm in obj.farms:
        write_landscape_file(farm, path / f"farm_{farm.id}" / "input.geojson")
    index = {
        "type": "FeatureCollection",
        "crs_note": obj.crs_note,
        "boundary": _geometry_json(obj.boundary),
        "features": [
            {"type": "Feature", "properties": {"farm_id": f.id}, "geometry": _geometry_json(f.geometry)}
            for f in obj.farms
        ],
    }
    (path / "landscape.geojson").write_text(json.dumps(index, indent=2) + "\n")


def read_landscape_file(path: str | Path, farm_id: int | None = None) -> Farm:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise LandscapeParseError(f"{path}: invalid JSON ({exc})") from exc
    return parse_farm_collection(doc, _farm_id_from_path(path) if farm_id is None else farm_id)


def read_landscape(root: str | Path) -> Landscape:
    root = Path(root)
    index = json.loads((root / "landscape.geojson").read_text())
    farms = []
    for feat in index["features"]:
        fid = int(feat["properties"]["farm_id"])
        farm = read_landscape_file(root / f"farm_{fid}" / "input.geojson", fid)
        farm.geometry = shape(feat["geometry"])
        farms.append(farm)
    return Landscape(farms, shape(index["boundary"]), index.get("crs_note", ""))


# ---------------------------------------------------------------------------
# Intervention files (stage-2 ground truth and candidate outputs)
# ---------------------------------------------------------------------------

def _fraction(value: Any, where: str, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or math.isnan(value):
        raise LandscapeParseError(f"{where}: {name} must be a number, got {value!r}")
    if -COORD_TOL <= value < 0:
        value = 0.0
    elif 1 < value <= 1 + COORD_TOL:
        value = 1.0
    if not 0.0 <= value <= 1.0:
        raise LandscapeParseError(f"{where}: {name}={value} outside [0, 1]")
    return float(value)


def parse_interventions(doc: Any) -> dict[int, InterventionRecord]:
    """Per-plot interventions from a FeatureCollection; absent values read as 0."""
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise LandscapeParseError("intervention output is not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise LandscapeParseError("intervention output has no feature list")
    out: dict[int, InterventionRecord] = {}
    for i, feat in enumerate(features):
        where = _feature_label(feat, i)
        props = feat.get("properties") if isinstance(feat, dict) else None
        if not isinstance(props, dict) or "id" not in props:
            raise LandscapeParseError(f"{where}: missing property 'id'")
        try:
            pid = int(props["id"])
        except (TypeError, ValueError):
            raise LandscapeParseError(f"{where}: id is not an integer") from None
        if pid in out:
            raise LandscapeParseError(f"{where}: duplicate plot id")
        m = _fraction(props.get("margin_intervention", 0.0), where, "margin_intervention")
        h = _fraction(props.get("habitat_conversion", 0.0), where, "habitat_conversion")
        out[pid] = InterventionRecord(pid, m, h)
    return out


def read_interventions(path: str | Path) -> dict[int, InterventionRecord]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LandscapeParseError(f"{path}: invalid JSON ({exc})") from exc
    return parse_interventions(doc)


def interventions_to_collection(
    records: Mapping[int, InterventionRecord], farm: Farm | None = None, nonzero_only: bool = False
) -> dict[str, Any]:
    features = []
    for pid in sorted(records):
        r = records[pid]
        if nonzero_only and r.margin_intervention == 0 and r.habitat_conversion == 0:
            continue
        props = {"id": pid, "margin_intervention": r.margin_intervention, "habitat_conversion": r.habitat_conversion}
        geom = _geometry_json(farm.plot(pid).geometry) if farm is not None else None
        features.append({"type": "Feature", "properties": props, "geometry": geom})
    return {"type": "FeatureCollection", "features": features}


def write_interventions(path: str | Path, records: Mapping[int, InterventionRecord], farm: Farm | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(interventions_to_collection(records, farm), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Quadrant realization
# ---------------------------------------------------------------------------

@dataclass
class InterventionGeometry:
    margin_strips: dict[Direction, Any]
    habitat_regions: dict[Direction, Any]
    diagnostics: list[str] = field(default_factory=list)


def plot_centre(geometry: Polygon, split: str = "centroid") -> tuple[float, float]:
    if split == "centroid":
        c = geometry.centroid
        return c.x, c.y
    if split == "bbox":
        minx, miny, maxx, maxy = geometry.bounds
        return (minx + maxx) / 2, (miny + maxy) / 2
    raise ValueError(f"unknown split mode {split!r}")


def quadrants(geometry: Polygon, split: str = "centroid") -> dict[Direction, Any]:
    """Split a polygon by horizontal and vertical lines through its centre."""
    cx, cy = plot_centre(geometry, split)
    minx, miny, maxx, maxy = geometry.bounds
    pad = max(maxx - minx, maxy - miny)
    lo_x, hi_x, lo_y, hi_y = minx - pad, maxx + pad, miny - pad, maxy + pad
    boxes = {
        Direction.NW: box(lo_x, cy, cx, hi_y),
        Direction.NE: box(cx, cy, hi_x, hi_y),
        Direction.SW: box(lo_x, lo_y, cx, cy),
        Direction.SE: box(cx, lo_y, hi_x, cy),
    }
    return {d: geometry.intersection(b) for d, b in boxes.items()}


def realize_intervention_geometry(
    plot: Plot,
    margin_dirs: Iterable[Direction],
    habitat_dirs: Iterable[Direction],
    margin_width: float,
    split: str = "centroid",
) -> InterventionGeometry:
    """Habitat quadrants and boundary margin strips for the chosen directions."""
    margin_dirs, habitat_dirs = set(margin_dirs), set(habitat_dirs)
    strip = None
    if margin_dirs:
        minx, miny, maxx, maxy = plot.geometry.bounds
        half_extent = min(maxx - minx, maxy - miny) / 2
        if not 0 < margin_width < half_extent:
            raise ValueError(f"margin_width must be in (0, {half_extent}) for plot {plot.id}")
        strip = plot.geometry.difference(plot.geometry.buffer(-margin_width))
    quads = quadrants(plot.geometry, split)
    out = InterventionGeometry({}, {})
    for d in ALL_DIRECTIONS:
        if d in habitat_dirs:
            region = quads[d]
            if region.is_empty or region.area <= 0:
                out.diagnostics.append(f"plot {plot.id}: empty habitat quadrant {d.value}")
            out.habitat_regions[d] = region
        if d in margin_dirs:
            region = quads[d].intersection(strip)
            if region.is_empty or region.area <= 0:
                out.diagnostics.append(f"plot {plot.id}: empty margin strip {d.value}")
            out.margin_strips[d] = region
    return out
