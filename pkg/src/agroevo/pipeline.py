"""End-to-end orchestration: landscape, ground truth, the three searches,
explanations and reports, all under one run directory.

Run directory layout::

    config.yaml  manifest.json  audit.jsonl
    landscape/              farm_<k>/input.geojson, landscape.geojson, economics.json
    stage1/farm_<k>/        ground_truth.geojson
    stage2/farm_<k>/        evolution run, best.py, best_output.geojson
    stage3/farm_<k>/        evolution run, best.py, best_output.json, targets.json
    stage4/farm_<k>/<persona>_<mechanism>/   message search
    stage4/matrix.csv
    explain/farm_<k>/<stage>/   programs, checkpoints, summary.txt
    reports/                PNG + CSV pairs
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import yaml

from .connectivity import DirectionRecord, read_direction_records, write_direction_records
from .evolution import EngineConfig, EvolutionResult, EvolutionRun, Proposal
from .fitness import DEFAULT_EPSILON, FitnessReport, conn_report, npv_report
from .groundtruth import provider_from_config
from .landscape import (
    EconomicParams,
    Farm,
    InterventionRecord,
    Landscape,
    farm_to_feature_collection,
    generate_landscape,
    interventions_to_collection,
    read_interventions,
    read_landscape,
    validate_landscape,
    write_interventions,
    write_landscape_file,
)
from .llm_gateway import (
    CassetteProvider,
    Gateway,
    OpenAICompatibleProvider,
    ProviderError,
    RetryPolicy,
    ScriptedProvider,
    format_neighbors,
)
from .mimic import (
    MECHANISMS,
    PERSONAS,
    FarmNudgeContext,
    MechanismSpec,
    Persona,
    evolve_messages,
)
from .offline import OfflineStrategy
from .sandbox import Candidate, CandidateKind, ExecStage, ExecutionLimits, evaluate_script, execute_candidate

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A user-fixable problem: bad config, missing prerequisite artifacts."""


class PreconditionError(PipelineError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "landscape": {"n_farms": 5, "plots_per_farm": 9, "ag_probability": 0.6, "extent": [1000.0, 1000.0]},
    "economics": None,
    "stages": {"1": True, "2": True, "3": True, "4": True},
    "farms": None,
    "icl_neighbors": 2,
    "evolution": {"population_size": 25, "generations": 25, "elitism_k": 2, "offspring": None,
                  "schedule": None, "reflect_per_generation": 1, "workers": 1},
    "nudge_evolution": None,
    "sandbox": {"timeout": 30.0, "memory_mb": 512, "repair_attempts": 1},
    "provider": {"kind": "offline", "cassette_dir": None, "model": None, "base_url": None,
                 "temperature": None, "rate_limit": None, "max_attempts": 3, "base_delay": 1.0},
    "ground_truth": {"kind": "reference"},
    "nudge": {"personas": list(PERSONAS), "mechanisms": list(MECHANISMS), "budget_per_farm": 10000.0,
              "pv_factor": 12.46, "enforce_offer_ranges": False},
    "explain": {"group_size": 3},
}


def _merge(base: Mapping, override: Mapping, path: str = "") -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        k = str(k) if path == "stages." else k
        if k not in base:
            raise PipelineError(f"unknown config key {path}{k!r}")
        if isinstance(base[k], Mapping) and isinstance(v, Mapping):
            out[k] = _merge(base[k], v, f"{path}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class RunConfig:
    data: dict[str, Any]

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any] | None) -> "RunConfig":
        cfg = cls(_merge(DEFAULT_CONFIG, doc or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise PipelineError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, Mapping):
            raise PipelineError(f"config {path} must be a mapping")
        return cls.from_dict(doc)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def validate(self) -> None:
        d = self.data
        if not isinstance(d["seed"], int):
            raise PipelineError("seed must be an integer")
        self.engine_config("evolution")
        if d["nudge_evolution"] is not None:
            self.engine_config("nudge_evolution")
        for p in d["nudge"]["personas"]:
            if p not in PERSONAS:
                raise PipelineError(f"unknown persona {p!r}")
        for m in d["nudge"]["mechanisms"]:
            if m not in MECHANISMS:
                raise PipelineError(f"unknown mechanism {m!r}")
        if d["provider"]["kind"] not in ("offline", "cassette", "record", "live"):
            raise PipelineError(f"unknown provider kind {d['provider']['kind']!r}")
        if d["ground_truth"].get("kind", "reference") not in ("reference", "command"):
            raise PipelineError("ground_truth.kind must be 'reference' or 'command'")
        if int(d["icl_neighbors"]) < 0 or int(d["explain"]["group_size"]) < 1:
            raise PipelineError("icl_neighbors must be >= 0 and explain.group_size >= 1")
        if d["sandbox"]["timeout"] <= 0:
            raise PipelineError("sandbox.timeout must be positive")

    def engine_config(self, section: str = "evolution", seed_offset: int = 0) -> EngineConfig:
        raw = dict(self.data["evolution"])
        if section != "evolution" and self.data.get(section):
            raw.update(self.data[section])
        try:
            return EngineConfig(seed=self.data["seed"] + seed_offset, **raw)
        except (TypeError, ValueError) as exc:
            raise PipelineError(f"invalid {section} settings: {exc}") from exc

    def limits(self) -> ExecutionLimits:
        s = self.data["sandbox"]
        return ExecutionLimits(timeout=float(s["timeout"]), memory=int(s["memory_mb"]) * 1024 * 1024)

    def economics(self) -> EconomicParams:
        if self.data["economics"]:
            return EconomicParams.load(self.data["economics"])
        return EconomicParams.default()


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunManifest:
    """Config snapshot, stage completion markers, artifact index, events.

    Events are only appended. A stage is marked complete after its artifacts
    exist; re-running a stage replaces that stage's artifact entries.
    """

    def __init__(self, run_dir: Path) -> None:
        self.run_dir = run_dir
        self.path = run_dir / "manifest.json"
        if self.path.is_file():
            self.doc = json.loads(self.path.read_text())
        else:
            self.doc = {"config": None, "stages": {}, "artifacts": {}, "events": [], "audit": {}}

    def save(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.doc, indent=1, sort_keys=True))
        os.replace(tmp, self.path)

    def set_config(self, cfg: RunConfig) -> None:
        if self.doc["config"] is not None and self.doc["config"] != cfg.data:
            self.doc["events"].append({"event": "config_changed"})
        self.doc["config"] = cfg.data
        self.save()

    def is_complete(self, stage: str) -> bool:
        return bool(self.doc["stages"].get(stage, {}).get("complete"))

    def start(self, stage: str) -> None:
        self.doc["stages"][stage] = {"complete": False}
        self.doc["artifacts"] = {k: v for k, v in self.doc["artifacts"].items() if v["stage"] != stage}
        self.doc["events"].append({"event": "start", "stage": stage})
        self.save()

    def complete(self, stage: str, artifacts: Sequence[Path]) -> None:
        for a in artifacts:
            if not a.is_file():
                raise RuntimeError(f"stage {stage} artifact missing: {a}")
            rel = str(a.relative_to(self.run_dir))
            self.doc["artifacts"][rel] = {"stage": stage, "sha256": _sha256(a)}
        self.doc["stages"][stage] = {"complete": True, "artifacts": len(artifacts)}
        self.doc["events"].append({"event": "complete", "stage": stage})
        self.save()

    def set_audit_summary(self, summary: Mapping[str, Any]) -> None:
        self.doc["audit"] = dict(summary)
        self.save()

    def missing_artifacts(self) -> list[str]:
        return [rel for rel in self.doc["artifacts"] if not (self.run_dir / rel).is_file()]


# ---------------------------------------------------------------------------
# Run context
# ---------------------------------------------------------------------------

def build_provider(cfg: RunConfig, run_dir: Path):
    p = cfg["provider"]
    kind = p["kind"]
    cassettes = Path(p["cassette_dir"]) if p.get("cassette_dir") else run_dir / "cassettes"
    if kind == "offline":
        return ScriptedProvider(OfflineStrategy(cfg["seed"], cfg.economics().crop_prices), name="offline")
    if kind == "cassette":
        return CassetteProvider(cassettes)
    live = OpenAICompatibleProvider(model=p.get("model"), base_url=p.get("base_url"), temperature=p.get("temperature"))
    return CassetteProvider(cassettes, fallback=live) if kind == "record" else live


@dataclass
class RunContext:
    run_dir: Path
    config: RunConfig
    gateway: Gateway
    manifest: RunManifest
    _landscape: Landscape | None = field(default=None, repr=False)

    @classmethod
    def open(cls, run_dir: str | Path, config: RunConfig | None = None, gateway: Gateway | None = None) -> "RunContext":
        run_dir = Path(run_dir)
        if config is None:
            cfg_path = run_dir / "config.yaml"
            if not cfg_path.is_file():
                raise PipelineError(f"no config given and {cfg_path} does not exist")
            config = RunConfig.load(cfg_path)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.yaml").write_text(config.dump())
        manifest = RunManifest(run_dir)
        manifest.set_config(config)
        if gateway is None:
            p = config["provider"]
            gateway = Gateway(build_provider(config, run_dir),
                              RetryPolicy(max_attempts=int(p["max_attempts"]), base_delay=float(p["base_delay"])),
                              rate_limit=p.get("rate_limit"), audit_path=run_dir / "audit.jsonl")
        return cls(run_dir, config, gateway, manifest)

    @property
    def landscape(self) -> Landscape:
        if self._landscape is None:
            path = self.run_dir / "landscape"
            if not (path / "landscape.geojson").is_file():
                raise PreconditionError("missing landscape/landscape.geojson: run generate-landscape first")
            self._landscape = read_landscape(path)
        return self._landscape

    def farm_ids(self) -> list[int]:
        ids = [f.id for f in self.landscape.farms]
        chosen = self.config["farms"]
        if chosen is None:
            return ids
        unknown = set(chosen) - set(ids)
        if unknown:
            raise PipelineError(f"config.farms names unknown farms {sorted(unknown)}")
        return [i for i in ids if i in chosen]

    def farm_input(self, farm_id: int) -> Path:
        return self.run_dir / "landscape" / f"farm_{farm_id}" / "input.geojson"

    def audit_summary(self) -> dict[str, Any]:
        if self.gateway.audit is None:
            return {}
        counts: dict[str, int] = {}
        for e in self.gateway.audit.entries():
            key = f"{e['role']}/{e['stage']}/{e['outcome'].split(':')[0]}"
            counts[key] = counts.get(key, 0) + 1
        return {"calls": dict(sorted(counts.items()))}


# ---------------------------------------------------------------------------
# Landscape and stage 1
# ---------------------------------------------------------------------------

def generate_landscape_stage(ctx: RunContext) -> Landscape:
    lc = ctx.config["landscape"]
    land = generate_landscape(ctx.config["seed"], n_farms=int(lc["n_farms"]), plots_per_farm=int(lc["plots_per_farm"]),
                              ag_probability=float(lc["ag_probability"]), extent=tuple(lc["extent"]))
    problems = validate_landscape(land)
    if problems:
        raise RuntimeError("generated landscape failed validation: " + "; ".join(problems))
    out = ctx.run_dir / "landscape"
    if out.exists():
        shutil.rmtree(out)
    ctx.manifest.start("landscape")
    write_landscape_file(land, out)
    (out / "economics.json").write_text(json.dumps(ctx.config.economics().to_document(), indent=2) + "\n")
    ctx._landscape = None
    arts = [out / "landscape.geojson", out / "economics.json"] + [out / f"farm_{f.id}" / "input.geojson" for f in land.farms]
    ctx.manifest.complete("landscape", arts)
    return land


def _require(ctx: RunContext, stage: str, what: str) -> None:
    if not ctx.manifest.is_complete(stage):
        raise PreconditionError(f"missing {what}: stage {stage} has not completed in {ctx.run_dir}")


def stage1_path(ctx: RunContext, farm_id: int) -> Path:
    return ctx.run_dir / "stage1" / f"farm_{farm_id}" / "ground_truth.geojson"


def stage3_targets_path(ctx: RunContext, farm_id: int) -> Path:
    return ctx.run_dir / "stage3" / f"farm_{farm_id}" / "targets.json"


def run_stage1(ctx: RunContext, provider=None) -> list[Path]:
    """Local-plan ground truth for every farm, written in the stage-2 target format."""
    _require(ctx, "landscape", "landscape/")
    provider = provider or provider_from_config(ctx.config["ground_truth"])
    ctx.manifest.start("1")
    plans = provider.baseline(ctx.landscape, ctx.config.economics())
    paths = []
    for farm in ctx.landscape.farms:
        path = stage1_path(ctx, farm.id)
        write_interventions(path, plans[farm.id], farm)
        read_interventions(path)  # validates against the target schema
        paths.append(path)
    ctx.manifest.complete("1", paths)
    return paths


# ---------------------------------------------------------------------------
# Stages 2 and 3
# ---------------------------------------------------------------------------

def neighbor_farms(landscape: Landscape, farm_id: int, k: int) -> list[int]:
    """The k farms sharing the longest borders with ``farm_id`` (then nearest)."""
    me = landscape.farm(farm_id)
    scored = []
    for other in landscape.farms:
        if other.id == farm_id:
            continue
        shared = me.geometry.boundary.intersection(other.geometry.buffer(1e-6)).length
        dist = me.geometry.centroid.distance(other.geometry.centroid)
        scored.append((-round(shared, 6), round(dist, 6), other.id))
    return [fid for _, _, fid in sorted(scored)[:k]]


def _compact(doc: Any) -> str:
    return json.dumps(doc, separators=(",", ":"))


def _rounded_collection(farm: Farm) -> dict[str, Any]:
    doc = farm_to_feature_collection(farm)
    for feat in doc["features"]:
        geom = feat["geometry"]
        geom["coordinates"] = [[[round(x, 2), round(y, 2)] for x, y in ring] for ring in geom["coordinates"]]
    return doc


def _stage2_exemplar(ctx: RunContext, fid: int) -> dict[str, str]:
    plan = read_interventions(stage1_path(ctx, fid))
    farm = ctx.landscape.farm(fid)
    out = interventions_to_collection(plan, None, nonzero_only=True)
    for feat in out["features"]:
        feat.pop("geometry")
    return {"input": _compact(_rounded_collection(farm)), "output": _compact(out)}


def _stage3_exemplar(ctx: RunContext, fid: int) -> dict[str, str]:
    recs = read_direction_records(stage3_targets_path(ctx, fid))
    return {"input": _compact(_rounded_collection(ctx.landscape.farm(fid))),
            "output": _compact([recs[k].to_json() for k in sorted(recs)])}


@dataclass
class StageSpec:
    number: str
    stage: str  # prompt stage: baseline or global
    exec_stage: ExecStage
    scorer: Callable[..., FitnessReport]
    targets: Callable[[RunContext, int], Mapping]
    exemplar: Callable[[RunContext, int], dict[str, str]]
    seed_offset: int


def _stage2_targets(ctx: RunContext, fid: int):
    return read_interventions(stage1_path(ctx, fid))


def _stage3_targets(ctx: RunContext, fid: int):
    return read_direction_records(stage3_targets_path(ctx, fid))


STAGE2 = StageSpec("2", "baseline", ExecStage.BASELINE, npv_report, _stage2_targets, _stage2_exemplar, 1000)
STAGE3 = StageSpec("3", "global", ExecStage.GLOBAL, conn_report, _stage3_targets, _stage3_exemplar, 2000)


@dataclass
class FarmSearch:
    farm_id: int
    result: EvolutionResult
    best_path: Path
    output_path: Path | None


def _role_handles(ctx: RunContext, spec: StageSpec, farm_id: int):
    econ = ctx.config.economics()
    base = {"crop_prices": econ.crop_prices, "costs": econ.costs}
    neighbors = [spec.exemplar(ctx, n) for n in neighbor_farms(ctx.landscape, farm_id, int(ctx.config["icl_neighbors"]))]
    farm_input = _compact(_rounded_collection(ctx.landscape.farm(farm_id)))
    gw = ctx.gateway

    def generator(i: int) -> Proposal:
        r = gw.ask("generator", spec.stage, sample=i, farm_input=farm_input, neighbors=neighbors, **base)
        return Proposal(r.parsed, r.error or "")

    def modifier(op: str, parents: Sequence[Candidate]) -> Proposal:
        extra = {"top": [(p.body, p.fitness) for p in parents]} if op == "reflect" else {"parents": [p.body for p in parents]}
        r = gw.ask("modifier", spec.stage, operator=op, **extra, **base)
        return Proposal(r.parsed, r.error or "")

    def fixer(body: str, trace: str) -> str | None:
        return gw.ask("fixer", spec.stage, code=body, trace=trace).parsed

    return generator, modifier, fixer


def run_search_stage(ctx: RunContext, spec: StageSpec, scorer: Callable[..., FitnessReport] | None = None) -> list[FarmSearch]:
    scorer = scorer or spec.scorer
    limits = ctx.config.limits()
    repairs = int(ctx.config["sandbox"]["repair_attempts"])
    results = []
    for fid in ctx.farm_ids():
        farm = ctx.landscape.farm(fid)
        targets = spec.targets(ctx, fid)
        input_file = ctx.farm_input(fid)
        generator, modifier, fixer = _role_handles(ctx, spec, fid)
        plot_ids = farm.plot_ids

        def evaluator(c: Candidate, targets=targets, input_file=input_file, fixer=fixer, plot_ids=plot_ids):
            cand, _, report = evaluate_script(c, input_file, spec.exec_stage,
                                              lambda recs: scorer(recs, targets, plot_ids), fixer, repairs, limits)
            return cand, report

        farm_dir = ctx.run_dir / f"stage{spec.number}" / f"farm_{fid}"
        config = ctx.config.engine_config("evolution", spec.seed_offset + fid)
        result = EvolutionRun(generator, modifier, evaluator, config, CandidateKind.SCRIPT, farm_dir / "evolution").run()
        best = result.best
        best_path = farm_dir / "best.py"
        best_path.write_text(best.body)
        exec_result = execute_candidate(best, input_file, spec.exec_stage, limits, artifact_dir=farm_dir / "best_run")
        out_path = None
        if exec_result.ok:
            out_path = farm_dir / f"best_{spec.exec_stage.output_name}"
            shutil.copyfile(farm_dir / "best_run" / spec.exec_stage.output_name, out_path)
        (farm_dir / "summary.json").write_text(json.dumps({
            "farm_id": fid, "best_id": best.id, "best_fitness": best.fitness, "best_error": best.error,
            "best_accuracy": None if best.error is None else 1 - best.error,
            "initial_best_fitness": result.history[0].best_fitness,
            "initial_mean_fitness": result.history[0].mean_fitness,
            "generations": result.population.generation, "best_trajectory": result.ledger.best_trajectory,
            "best_output_ok": exec_result.ok,
        }, indent=1))
        results.append(FarmSearch(fid, result, best_path, out_path))
    return results


def _stage_artifacts(ctx: RunContext, number: str) -> list[Path]:
    root = ctx.run_dir / f"stage{number}"
    keep = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and not p.name.endswith(".tmp"):
            keep.append(p)
    return keep


def run_stage2(ctx: RunContext, scorer: Callable[..., FitnessReport] | None = None) -> list[FarmSearch]:
    _require(ctx, "1", "stage1 ground truth")
    ctx.manifest.start("2")
    out = run_search_stage(ctx, STAGE2, scorer)
    ctx.manifest.complete("2", _stage_artifacts(ctx, "2"))
    return out


def run_stage3(ctx: RunContext, scorer: Callable[..., FitnessReport] | None = None, provider=None) -> list[FarmSearch]:
    _require(ctx, "1", "stage1 ground truth")
    provider = provider or provider_from_config(ctx.config["ground_truth"])
    ctx.manifest.start("3")
    plans = {f.id: read_interventions(stage1_path(ctx, f.id)) for f in ctx.landscape.farms}
    targets = provider.connectivity(ctx.landscape, ctx.config.economics(), plans)
    for farm in ctx.landscape.farms:
        write_direction_records(stage3_targets_path(ctx, farm.id), targets[farm.id])
    out = run_search_stage(ctx, STAGE3, scorer)
    ctx.manifest.complete("3", _stage_artifacts(ctx, "3"))
    return out


# ---------------------------------------------------------------------------
# Stage 4
# ---------------------------------------------------------------------------

def _best_candidate(ctx: RunContext, number: str, fid: int) -> Candidate:
    path = ctx.run_dir / f"stage{number}" / f"farm_{fid}" / "best.py"
    if not path.is_file():
        raise PreconditionError(f"missing {path.relative_to(ctx.run_dir)}: stage {number} must complete first")
    return Candidate(f"stage{number}-farm{fid}-best", CandidateKind.SCRIPT, path.read_text())


def social_comparison_data(ctx: RunContext, farm_id: int) -> str:
    nbs = [_stage3_exemplar(ctx, n) for n in neighbor_farms(ctx.landscape, farm_id, int(ctx.config["icl_neighbors"]))]
    me = _compact(_rounded_collection(ctx.landscape.farm(farm_id)))
    return format_neighbors(nbs) + f"Your farm: input: {me}"


MATRIX_HEADER = ["farm_id", "persona", "mechanism", "label", "best_message_id", "best_fitness", "best_error",
                 "initial_best_fitness", "initial_mean_fitness", "generations", "refused"]


def run_stage4(ctx: RunContext) -> list[dict[str, Any]]:
    for stage, what in (("2", "stage2 best baseline scripts"), ("3", "stage3 best connectivity scripts and targets")):
        _require(ctx, stage, what)
    ctx.manifest.start("4")
    stage_dir = ctx.run_dir / "stage4"
    econ = ctx.config.economics()
    nudge = ctx.config["nudge"]
    limits = ctx.config.limits()
    rows = []
    for fid in ctx.farm_ids():
        baseline = _best_candidate(ctx, "2", fid)
        global_best = _best_candidate(ctx, "3", fid)
        base_out = ctx.run_dir / "stage2" / f"farm_{fid}" / "best_output.geojson"
        if not base_out.is_file():
            raise PreconditionError(f"missing {base_out.relative_to(ctx.run_dir)}: the stage-2 winner did not run")
        farm_ctx = FarmNudgeContext(
            fid, ctx.farm_input(fid), baseline, read_interventions(base_out), global_best.body,
            read_direction_records(stage3_targets_path(ctx, fid)), econ.crop_prices, econ.costs,
            social_comparison_data(ctx, fid))
        for persona_name in nudge["personas"]:
            for mech in nudge["mechanisms"]:
                mechanism = MechanismSpec(mech, float(nudge["budget_per_farm"]), float(nudge["pv_factor"]))
                config = ctx.config.engine_config("nudge_evolution", 3000 + fid)
                cell_dir = stage_dir / f"farm_{fid}" / f"{persona_name}_{mech}"
                res = evolve_messages(farm_ctx, mechanism, Persona.named(persona_name), config, ctx.gateway,
                                      cell_dir, limits, bool(nudge["enforce_offer_ranges"]))
                (cell_dir / "best_message.txt").write_text(res.best.message.body)
                rows.append(res.tracking_row)
    with (stage_dir / "matrix.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, MATRIX_HEADER, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    ctx.manifest.complete("4", _stage_artifacts(ctx, "4"))
    return rows


# ---------------------------------------------------------------------------
# Explanations
# ---------------------------------------------------------------------------

def _program_block(paths: Sequence[Path]) -> str:
    return "\n".join(f"Program {i} ({p.name}):\n```python\n{p.read_text().rstrip()}\n```"
                     for i, p in enumerate(paths, start=1))


def explain_heuristics(
    files: Sequence[Path],
    group_size: int,
    gateway: Gateway,
    out_dir: str | Path,
    stage: str = "baseline",
) -> str:
    """Fold group explanations of fitness-ordered programs into one summary.

    Each group's explanation and the running summary are checkpointed as
    ``checkpoints/group_<i>.json``; an interrupted run resumes after the last
    checkpoint. The first group's explanation is the initial summary.
    """
    if not files:
        raise PipelineError("explain_heuristics needs at least one heuristic file")
    if group_size < 1:
        raise ValueError("group_size must be positive")
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    groups = [list(files[i:i + group_size]) for i in range(0, len(files), group_size)]
    summary = None
    for gi, group in enumerate(groups):
        ckpt = ckpt_dir / f"group_{gi}.json"
        names = [p.name for p in group]
        if ckpt.is_file():
            doc = json.loads(ckpt.read_text())
            if doc["files"] == names:
                summary = doc["summary"]
                continue
        explanation = gateway.ask("explainer", stage, code_snippet=_program_block(group)).parsed
        if explanation is None:
            raise ProviderError(f"explainer returned nothing for group {gi}")
        if summary is None:
            summary = explanation
        else:
            merged = gateway.ask("merger", stage, previous_summary=summary, current_explanation=explanation).parsed
            if merged is None:
                raise ProviderError(f"merger returned nothing for group {gi}")
            summary = merged
        tmp = ckpt.with_suffix(".tmp")
        tmp.write_text(json.dumps({"group": gi, "files": names, "explanation": explanation, "summary": summary}, indent=1))
        os.replace(tmp, ckpt)
    (out / "summary.txt").write_text(summary + "\n")
    return summary


def stage_programs(ctx: RunContext, number: str, fid: int) -> list[Path]:
    """Distinct per-generation best programs of a farm's search, by ascending fitness."""
    evo = ctx.run_dir / f"stage{number}" / f"farm_{fid}" / "evolution"
    table = evo / "tracking" / "fitness_by_generation.csv"
    if not table.is_file():
        raise PreconditionError(f"missing {table.relative_to(ctx.run_dir)}: stage {number} must complete first")
    seen: dict[str, float] = {}
    with table.open() as fh:
        for row in csv.DictReader(fh):
            seen.setdefault(row["best_id"], float(row["best_fitness"]))
    paths = []
    for cid, fit in sorted(seen.items(), key=lambda kv: (kv[1], kv[0])):
        gen = int(cid.split("-")[0][1:])
        paths.append(evo / f"gen_{gen}" / f"candidate_{cid}.txt")
    return paths


def run_explain(ctx: RunContext, stages: Sequence[str] = ("2", "3")) -> dict[tuple[int, str], str]:
    group_size = int(ctx.config["explain"]["group_size"])
    out = {}
    for number in stages:
        _require(ctx, number, f"stage{number} searches")
        prompt_stage = "baseline" if number == "2" else "global"
        ctx.manifest.start(f"explain{number}")
        written: list[Path] = []
        for fid in ctx.farm_ids():
            files = stage_programs(ctx, number, fid)
            target = ctx.run_dir / "explain" / f"farm_{fid}" / prompt_stage
            prog_dir = target / "programs"
            prog_dir.mkdir(parents=True, exist_ok=True)
            copies = []
            for i, f in enumerate(files):
                dst = prog_dir / f"{i:03d}_{f.stem}.py"
                shutil.copyfile(f, dst)
                copies.append(dst)
            out[(fid, prompt_stage)] = explain_heuristics(copies, group_size, ctx.gateway, target, prompt_stage)
            written += sorted(p for p in target.rglob("*") if p.is_file())
        ctx.manifest.complete(f"explain{number}", written)
    ctx.manifest.set_audit_summary(ctx.audit_summary())
    return out


def record_reports(run_dir: str | Path, paths: Sequence[Path]) -> None:
    """Index report files in the run manifest, if the run has one."""
    run = Path(run_dir)
    if not (run / "manifest.json").is_file():
        return
    manifest = RunManifest(run)
    manifest.start("reports")
    manifest.complete("reports", list(paths))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def run_stages(ctx: RunContext, stages: Sequence[str], skip_complete: bool = False) -> None:
    toggles = ctx.config["stages"]
    if not (ctx.run_dir / "landscape" / "landscape.geojson").is_file():
        generate_landscape_stage(ctx)
    for s in stages:
        if not toggles.get(s, True):
            logger.info("stage %s disabled in config", s)
            continue
        if skip_complete and ctx.manifest.is_complete(s):
            continue
        {"1": run_stage1, "2": run_stage2, "3": run_stage3, "4": run_stage4}[s](ctx)
        ctx.manifest.set_audit_summary(ctx.audit_summary())
