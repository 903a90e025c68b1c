"""Ground-truth providers for the local (stage 1) and connectivity targets.

The optimisation models that produce real targets are outside this package.
``ReferenceGroundTruth`` is a small rule set that makes the pipeline run end
to end; it is not a model of farm economics:

* local plan: an ag plot whose revenue (yield x price) is below
  ``habitat_revenue_threshold`` is fully converted to habitat; one below
  ``margin_revenue_threshold`` gets ``margin_level`` of margins;
* connectivity plan: each quadrant of an ag plot that touches existing
  habitat anywhere in the landscape gets a margin, and also a habitat
  conversion when the local plan converted that plot. Directions are then
  picked with ``extract_directions``.

``CommandGroundTruth`` runs an external program instead (see its docstring).
"""

from __future__ import annotations

import json
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .connectivity import DirectionRecord, extract_directions, read_direction_records
from .landscape import (
    EconomicParams,
    InterventionRecord,
    Landscape,
    PlotType,
    quadrants,
    read_interventions,
    write_landscape_file,
)

FarmPlans = dict[int, dict[int, InterventionRecord]]
FarmDirections = dict[int, dict[int, DirectionRecord]]


class GroundTruthUnavailable(RuntimeError):
    pass


class GroundTruthProvider(Protocol):
    def baseline(self, landscape: Landscape, econ: EconomicParams) -> FarmPlans: ...

    def connectivity(self, landscape: Landscape, econ: EconomicParams, baseline: FarmPlans) -> FarmDirections: ...


@dataclass
class ReferenceGroundTruth:
    habitat_revenue_threshold: float = 400.0
    margin_revenue_threshold: float = 900.0
    margin_level: float = 0.5
    direction_threshold: float = 0.5
    touch_buffer: float = 1.0

    def baseline(self, landscape: Landscape, econ: EconomicParams) -> FarmPlans:
        plans: FarmPlans = {}
        for farm in landscape.farms:
            plan = {}
            for p in farm.plots:
                m = h = 0.0
                if p.plot_type is PlotType.AG:
                    revenue = (p.yield_value or 0.0) * econ.crop_prices.get(p.label, 0.0)
                    if revenue < self.habitat_revenue_threshold:
                        h = 1.0
                    elif revenue < self.margin_revenue_threshold:
                        m = self.margin_level
                plan[p.id] = InterventionRecord(p.id, m, h)
            plans[farm.id] = plan
        return plans

    def connectivity(self, landscape: Landscape, econ: EconomicParams, baseline: FarmPlans) -> FarmDirections:
        habitats = [p.geometry.buffer(self.touch_buffer) for p in landscape.plots() if p.plot_type is PlotType.HAB]
        out: FarmDirections = {}
        for farm in landscape.farms:
            recs = {}
            for p in farm.plots:
                margin_f = {}
                habitat_f = {}
                if p.plot_type is PlotType.AG:
                    converted = baseline.get(farm.id, {}).get(p.id, InterventionRecord(p.id)).habitat_conversion > 0
                    for d, q in quadrants(p.geometry).items():
                        touch = 1.0 if (not q.is_empty and any(q.intersects(h) for h in habitats)) else 0.0
                        margin_f[d] = touch
                        habitat_f[d] = touch if converted else 0.0
                md = extract_directions(p, margin_f, self.direction_threshold) if margin_f else frozenset()
                hd = extract_directions(p, habitat_f, self.direction_threshold) if habitat_f else frozenset()
                recs[p.id] = DirectionRecord(p.id, md, hd, p.plot_type.value, p.label)
            out[farm.id] = recs
        return out


class CommandGroundTruth:
    """Adapter for an external solver.

    The command is called as ``<command...> <stage> <landscape_dir> <out_dir>``
    with stage ``baseline`` or ``connectivity``. ``landscape_dir`` uses the
    package's landscape layout (``farm_<k>/input.geojson``) plus
    ``economics.json``; for the connectivity stage each farm directory also
    holds ``baseline.geojson``. The solver writes ``<out_dir>/farm_<k>/output.geojson``
    (baseline) or ``output.json`` (connectivity) in the candidate output formats.
    """

    def __init__(self, command: Sequence[str], timeout: float = 3600.0) -> None:
        if not command:
            raise ValueError("empty ground-truth command")
        self.command = list(command)
        self.timeout = timeout

    def _run(self, stage: str, landscape: Landscape, econ: EconomicParams, baseline: FarmPlans | None) -> Path:
        from .landscape import write_interventions

        tmp = Path(tempfile.mkdtemp(prefix="agroevo-gt-"))
        land_dir, out_dir = tmp / "landscape", tmp / "out"
        write_landscape_file(landscape, land_dir)
        (land_dir / "economics.json").write_text(json.dumps(econ.to_document(), indent=2))
        if baseline is not None:
            for farm in landscape.farms:
                write_interventions(land_dir / f"farm_{farm.id}" / "baseline.geojson", baseline[farm.id], farm)
        out_dir.mkdir()
        try:
            proc = subprocess.run([*self.command, stage, str(land_dir), str(out_dir)], capture_output=True,
                                  text=True, timeout=self.timeout)
        except FileNotFoundError as exc:
            shutil.rmtree(tmp, ignore_errors=True)
            raise GroundTruthUnavailable(
                f"ground-truth command not found: {self.command[0]!r}; install the solver or set "
                "ground_truth.kind: reference in the run config") from exc
        except subprocess.TimeoutExpired as exc:
            shutil.rmtree(tmp, ignore_errors=True)
            raise GroundTruthUnavailable(f"ground-truth command timed out after {self.timeout} s") from exc
        if proc.returncode != 0:
            shutil.rmtree(tmp, ignore_errors=True)
            raise GroundTruthUnavailable(f"ground-truth command failed ({proc.returncode}): {proc.stderr[-2000:]}")
        return out_dir

    def baseline(self, landscape: Landscape, econ: EconomicParams) -> FarmPlans:
        out = self._run("baseline", landscape, econ, None)
        plans = {}
        try:
            for farm in landscape.farms:
                path = out / f"farm_{farm.id}" / "output.geojson"
                if not path.is_file():
                    raise GroundTruthUnavailable(f"ground-truth command wrote no {path.relative_to(out)}")
                recs = read_interventions(path)
                plans[farm.id] = {pid: recs.get(pid, InterventionRecord(pid)) for pid in farm.plot_ids}
        finally:
            shutil.rmtree(out.parent, ignore_errors=True)
        return plans

    def connectivity(self, landscape: Landscape, econ: EconomicParams, baseline: FarmPlans) -> FarmDirections:
        out = self._run("connectivity", landscape, econ, baseline)
        dirs = {}
        try:
            for farm in landscape.farms:
                path = out / f"farm_{farm.id}" / "output.json"
                if not path.is_file():
                    raise GroundTruthUnavailable(f"ground-truth command wrote no {path.relative_to(out)}")
                dirs[farm.id] = read_direction_records(path)
        finally:
            shutil.rmtree(out.parent, ignore_errors=True)
        return dirs


def provider_from_config(cfg: Mapping) -> GroundTruthProvider:
    kind = cfg.get("kind", "reference")
    if kind == "reference":
        params = {k: v for k, v in cfg.items() if k != "kind"}
        return ReferenceGroundTruth(**params)
    if kind == "command":
        return CommandGroundTruth(cfg["command"], float(cfg.get("timeout", 3600.0)))
    raise ValueError(f"unknown ground_truth.kind {kind!r}")
