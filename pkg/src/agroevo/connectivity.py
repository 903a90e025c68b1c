"""Habitat graphs, the Integral Index of Connectivity and quadrant directions.

IIC = sum_i sum_j a_i * a_j / (1 + nl_ij) / A_L**2, where nl_ij is the number
of links on the shortest path between patches i and j (0 on the diagonal) and
pairs in different components contribute nothing.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from shapely.geometry.base import BaseGeometry

from .landscape import (
    ALL_DIRECTIONS,
    Direction,
    Landscape,
    LandscapeParseError,
    Plot,
    PlotType,
    direction_set,
    direction_strings,
    realize_intervention_geometry,
)

SQ_M_PER_HA = 10_000.0


class PatchSource(str, Enum):
    EXISTING = "existing_habitat"
    CONVERTED = "converted_habitat"
    MARGIN = "margin_strip"


@dataclass
class Patch:
    id: str
    area: float
    source: PatchSource
    geometry: BaseGeometry | None = None


@dataclass
class HabitatGraph:
    nodes: list[Patch]
    edges: set[frozenset[str]]
    total_landscape_area: float

    def __post_init__(self) -> None:
        ids = {n.id for n in self.nodes}
        if len(ids) != len(self.nodes):
            raise ValueError("duplicate patch ids")
        for n in self.nodes:
            if n.area <= 0:
                raise ValueError(f"patch {n.id} has non-positive area")
        for e in self.edges:
            if len(e) != 2:
                raise ValueError("self-loops are not allowed")
            if not e <= ids:
                raise ValueError(f"edge {sorted(e)} references an unknown patch")

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for e in self.edges:
            u, v = sorted(e)
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass
class ConnectivityScore:
    iic: float
    component_sizes: list[int] = field(default_factory=list)


PlotKey = tuple[int, int]  # (farm_id, plot_id)


def build_habitat_graph(
    landscape: Landscape,
    interventions: Mapping[PlotKey, tuple[Iterable[Direction], Iterable[Direction]]],
    margin_width: float = 10.0,
    adjacency_buffer: float = 0.0,
    area_scale: float = 1.0 / SQ_M_PER_HA,
    split: str = "centroid",
) -> HabitatGraph:
    """Habitat graph from existing habitat plots plus realized interventions.

    ``interventions`` maps (farm_id, plot_id) to (margin directions, habitat
    directions). Two patches are linked when their geometries, each buffered by
    half of ``adjacency_buffer``, intersect.
    """
    plots: dict[PlotKey, Plot] = {(p.farm_id, p.id): p for p in landscape.plots()}
    for key in interventions:
        if key not in plots:
            raise KeyError(f"intervention references unknown plot {key}")

    patches: list[Patch] = []
    for key, p in sorted(plots.items()):
        if p.plot_type is PlotType.HAB:
            patches.append(Patch(f"{key[0]}:{key[1]}:hab", p.geometry.area * area_scale, PatchSource.EXISTING, p.geometry))
    for key in sorted(interventions):
        margin_dirs, habitat_dirs = interventions[key]
        geo = realize_intervention_geometry(plots[key], margin_dirs, habitat_dirs, margin_width, split)
        for d, g in geo.habitat_regions.items():
            if g.area > 0:
                patches.append(Patch(f"{key[0]}:{key[1]}:hab-{d.value}", g.area * area_scale, PatchSource.CONVERTED, g))
        for d, g in geo.margin_strips.items():
            if g.area > 0:
                patches.append(Patch(f"{key[0]}:{key[1]}:margin-{d.value}", g.area * area_scale, PatchSource.MARGIN, g))

    shapes = [p.geometry.buffer(adjacency_buffer / 2) if adjacency_buffer > 0 else p.geometry for p in patches]
    edges: set[frozenset[str]] = set()
    for i in range(len(patches)):
        for j in range(i + 1, len(patches)):
            if shapes[i].intersects(shapes[j]):
                edges.add(frozenset((patches[i].id, patches[j].id)))
    return HabitatGraph(patches, edges, landscape.boundary.area * area_scale)


def _bfs_lengths(adj: Mapping[str, list[str]], source: str) -> dict[str, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def compute_iic(graph: HabitatGraph) -> ConnectivityScore:
    if graph.total_landscape_area <= 0:
        raise ValueError("total landscape area must be positive")
    if not graph.nodes:
        return ConnectivityScore(0.0, [])
    area = {n.id: n.area for n in graph.nodes}
    adj = graph.adjacency()
    total = 0.0
    seen: set[str] = set()
    sizes = []
    for n in graph.nodes:
        dist = _bfs_lengths(adj, n.id)
        total += sum(area[n.id] * area[v] / (1 + k) for v, k in dist.items())
        if n.id not in seen:
            seen.update(dist)
            sizes.append(len(dist))
    return ConnectivityScore(total / graph.total_landscape_area**2, sorted(sizes, reverse=True))


def extract_directions(plot: Plot | None, fractions: Mapping[Direction | str, float], threshold: float) -> frozenset[Direction]:
    """Directions whose per-quadrant intervention fraction strictly exceeds ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    picked = []
    for d, v in fractions.items():
        if not 0.0 <= v <= 1.0:
            where = f" on plot {plot.id}" if plot is not None else ""
            raise ValueError(f"fraction {v} for {d}{where} outside [0, 1]")
        if v > threshold:
            picked.append(Direction(d))
    return frozenset(picked)


def quantize_directions(dirs: Iterable[Direction]) -> float:
    return len(set(dirs)) / 4


# ---------------------------------------------------------------------------
# Direction records (stage-3 targets and candidate outputs)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionRecord:
    plot_id: int
    margin_directions: frozenset[Direction]
    habitat_directions: frozenset[Direction]
    plot_type: str = ""
    label: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "plot_id": self.plot_id,
            "plot_type": self.plot_type,
            "label": self.label,
            "margin_directions": direction_strings(self.margin_directions),
            "habitat_directions": direction_strings(self.habitat_directions),
        }


def parse_direction_records(doc: Any) -> dict[int, DirectionRecord]:
    if not isinstance(doc, list):
        raise LandscapeParseError("direction output must be a JSON array of plot records")
    out: dict[int, DirectionRecord] = {}
    for i, rec in enumerate(doc):
        where = f"record #{i}"
        if not isinstance(rec, dict) or "plot_id" not in rec:
            raise LandscapeParseError(f"{where}: missing 'plot_id'")
        where = f"record plot_id={rec['plot_id']}"
        try:
            pid = int(rec["plot_id"])
        except (TypeError, ValueError):
            raise LandscapeParseError(f"{where}: plot_id is not an integer") from None
        if pid in out:
            raise LandscapeParseError(f"{where}: duplicate plot id")
        dirs = []
        for key in ("margin_directions", "habitat_directions"):
            value = rec.get(key, [])
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise LandscapeParseError(f"{where}: {key} must be a list of direction strings")
            try:
                dirs.append(direction_set(value))
            except ValueError as exc:
                raise LandscapeParseError(f"{where}: {exc}") from None
        out[pid] = DirectionRecord(pid, dirs[0], dirs[1], str(rec.get("plot_type", "")), str(rec.get("label", "")))
    return out


def read_direction_records(path: str | Path) -> dict[int, DirectionRecord]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LandscapeParseError(f"{path}: invalid JSON ({exc})") from exc
    return parse_direction_records(doc)


def write_direction_records(path: str | Path, records: Mapping[int, DirectionRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([records[k].to_json() for k in sorted(records)], indent=2) + "\n")


__all__ = [
    "ALL_DIRECTIONS",
    "ConnectivityScore",
    "DirectionRecord",
    "HabitatGraph",
    "Patch",
    "PatchSource",
    "build_habitat_graph",
    "compute_iic",
    "extract_directions",
    "parse_direction_records",
    "quantize_directions",
    "read_direction_records",
    "write_direction_records",
]
