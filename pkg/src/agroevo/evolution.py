"""Evolutionary search over candidates (scripts or messages).

The engine never looks inside a candidate body. It needs three callables:

* a generator ``(index) -> body`` used to seed the population,
* a modifier ``(operator, parents) -> body`` implementing the variation
  operators (usually a model role),
* an evaluator ``(candidate) -> FitnessReport`` (or ``(candidate, report)`` when
  evaluation may rewrite the body, e.g. after repair).

Either producer may return a ``Proposal``, a plain string, or None for "no
usable answer". Survivor selection keeps the best ``elitism_k`` of parents and
offspring and fills the rest by fitness-proportional draws without
replacement. Every child records the fitness delta against its best parent,
so deltas telescope along the best candidate's lineage.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np

from .complexity import ComplexityMetrics
from .fitness import FitnessReport, penalty_report
from .sandbox import Candidate, CandidateKind, LineageEntry, execute_many

logger = logging.getLogger(__name__)

OPERATORS = ("mutate", "crossover", "explore_diverge", "explore_converge", "reflect")
ARITY = {"mutate": 1, "crossover": 2, "explore_diverge": 2, "explore_converge": 2, "reflect": 5}
FOUNDER = "init"


class SeedingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Proposal:
    body: str | None
    note: str = ""

    @property
    def valid(self) -> bool:
        return bool(self.body and self.body.strip())


ProposalLike = Union[Proposal, str, None]
Generator = Callable[[int], ProposalLike]
Modifier = Callable[[str, Sequence[Candidate]], ProposalLike]
EvalOutcome = Union[FitnessReport, tuple[Candidate, FitnessReport]]
Evaluator = Callable[[Candidate], EvalOutcome]


def _as_proposal(value: ProposalLike) -> Proposal:
    if isinstance(value, Proposal):
        return value
    return Proposal(value)


@dataclass
class EngineConfig:
    population_size: int = 25
    generations: int = 25
    elitism_k: int = 2
    offspring: int | None = None
    schedule: Mapping[str, float] | None = None
    reflect_per_generation: int = 1
    reflect_k: int = 5
    seed: int = 0
    workers: int = 1
    seed_attempts_factor: int = 3

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if not 0 <= self.elitism_k < self.population_size:
            raise ValueError("elitism_k must satisfy 0 <= elitism_k < population_size")
        if self.generations < 0:
            raise ValueError("generations must be nonnegative")
        if self.offspring is not None and self.offspring < 1:
            raise ValueError("offspring must be positive")
        sched = self.operator_probabilities()
        if any(p < 0 for p in sched.values()) or not sum(sched.values()) > 0:
            raise ValueError("schedule needs nonnegative weights with a positive total")

    @property
    def n_offspring(self) -> int:
        return self.offspring or self.population_size

    def operator_probabilities(self) -> dict[str, float]:
        raw = dict(self.schedule) if self.schedule else {op: 1.0 for op in OPERATORS}
        unknown = set(raw) - set(OPERATORS)
        if unknown:
            raise ValueError(f"unknown operators in schedule: {sorted(unknown)}")
        total = sum(raw.values())
        return {op: raw.get(op, 0.0) / total if total else 0.0 for op in OPERATORS}

    def to_dict(self) -> dict[str, Any]:
        d = dict(self.__dict__)
        d["schedule"] = self.operator_probabilities()
        return d


@dataclass
class Population:
    generation: int
    members: list[Candidate]
    elite_ids: list[str] = field(default_factory=list)

    def ranked(self) -> list[Candidate]:
        return sorted(self.members, key=_rank_key)

    @property
    def best(self) -> Candidate:
        return self.ranked()[0]


def _rank_key(c: Candidate) -> tuple[float, str]:
    return (-c.fitness, c.id)


@dataclass
class OperatorStats:
    applications: int = 0
    cumulative_fitness_delta: float = 0.0
    deltas: list[float] = field(default_factory=list)

    def add(self, delta: float) -> None:
        self.applications += 1
        self.deltas.append(delta)
        self.cumulative_fitness_delta = math.fsum(self.deltas)


@dataclass
class ChildRecord:
    child_id: str
    operator: str
    parent_ids: tuple[str, ...]
    best_parent_id: str
    delta: float
    generation: int


@dataclass
class OperatorLedger:
    stats: dict[str, OperatorStats] = field(default_factory=lambda: {op: OperatorStats() for op in OPERATORS})
    children: list[ChildRecord] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=lambda: {op: 0 for op in OPERATORS})
    stagnation_events: list[int] = field(default_factory=list)
    best_trajectory: list[str] = field(default_factory=list)

    def record(self, rec: ChildRecord) -> None:
        self.stats[rec.operator].add(rec.delta)
        self.children.append(rec)

    def delta_of(self, child_id: str) -> float | None:
        for rec in self.children:
            if rec.child_id == child_id:
                return rec.delta
        return None

    def total_applications(self) -> int:
        return sum(s.applications for s in self.stats.values())

    def to_json(self) -> dict[str, Any]:
        return {
            "operators": {op: {"applications": s.applications, "cumulative_fitness_delta": s.cumulative_fitness_delta,
                               "deltas": s.deltas} for op, s in self.stats.items()},
            "children": [rec.__dict__ | {"parent_ids": list(rec.parent_ids)} for rec in self.children],
            "skipped": self.skipped,
            "stagnation_events": self.stagnation_events,
            "best_trajectory": self.best_trajectory,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "OperatorLedger":
        led = cls()
        for op, s in doc["operators"].items():
            led.stats[op] = OperatorStats(s["applications"], s["cumulative_fitness_delta"], list(s["deltas"]))
        led.children = [ChildRecord(r["child_id"], r["operator"], tuple(r["parent_ids"]), r["best_parent_id"],
                                    r["delta"], r["generation"]) for r in doc["children"]]
        led.skipped = dict(doc.get("skipped", {}))
        led.stagnation_events = list(doc.get("stagnation_events", []))
        led.best_trajectory = list(doc.get("best_trajectory", []))
        return led


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def _evaluate(candidate: Candidate, evaluator: Evaluator) -> Candidate:
    if candidate.diagnostics.get("extraction_failed"):
        # nothing to run; score it as unusable without calling the evaluator
        candidate.fitness_history.append(penalty_report("extraction_failed"))
        return candidate
    out = evaluator(candidate)
    if isinstance(out, tuple):
        candidate, report = out
    else:
        report = out
    candidate.fitness_history.append(report)
    return candidate


def _evaluate_all(cands: Sequence[Candidate], evaluator: Evaluator, workers: int) -> list[Candidate]:
    return execute_many([lambda c=c: _evaluate(c, evaluator) for c in cands], workers)


def init_population(
    generator: Generator,
    evaluator: Evaluator,
    K: int,
    kind: CandidateKind | str = CandidateKind.SCRIPT,
    workers: int = 1,
    max_attempts: int | None = None,
) -> Population:
    """Seed K candidates from the generator and score each once."""
    if K < 2:
        raise ValueError("K must be at least 2")
    kind = CandidateKind(kind)
    max_attempts = max_attempts if max_attempts is not None else 3 * K
    bodies: list[str] = []
    attempts = 0
    while len(bodies) < K and attempts < max_attempts:
        try:
            prop = _as_proposal(generator(attempts))
        except Exception as exc:
            logger.warning("generator call %d failed: %s", attempts, exc)
            prop = Proposal(None, str(exc))
        attempts += 1
        if prop.valid:
            bodies.append(prop.body)
    if len(bodies) < K:
        raise SeedingError(f"only {len(bodies)} of {K} valid initial candidates after {attempts} generator calls")
    founders = [Candidate(f"g0-c{i}", kind, b, [LineageEntry(FOUNDER, ())], generation_born=0)
                for i, b in enumerate(bodies)]
    members = _evaluate_all(founders, evaluator, workers)
    pop = Population(0, members)
    return pop


def apply_operator(
    op: str,
    parents: Sequence[Candidate],
    modifier: Modifier,
    child_id: str,
    generation: int,
) -> Candidate | None:
    """One variation step. Returns None when the modifier call fails."""
    if op not in ARITY:
        raise ValueError(f"unknown operator {op!r}")
    need = ARITY[op]
    if op == "reflect":
        if not 1 <= len(parents) <= need:
            raise ValueError("reflect takes between 1 and 5 ranked parents")
        if any(a.fitness < b.fitness for a, b in zip(parents, parents[1:])):
            raise ValueError("reflect parents must be in descending fitness order")
    elif len(parents) != need:
        raise ValueError(f"{op} takes {need} parent(s), got {len(parents)}")
    try:
        prop = _as_proposal(modifier(op, parents))
    except Exception as exc:
        logger.warning("operator %s skipped for %s: %s", op, child_id, exc)
        return None
    kind = parents[0].kind
    body = prop.body if prop.valid else ""
    child = Candidate(child_id, kind, body, [LineageEntry(op, tuple(p.id for p in parents))], generation_born=generation)
    if not prop.valid:
        child.diagnostics["extraction_failed"] = True
        if prop.note:
            child.diagnostics["extraction_error"] = prop.note
    return child


def _roulette(rng: np.random.Generator, cands: Sequence[Candidate], k: int) -> list[Candidate]:
    """k distinct draws, probability proportional to fitness."""
    pool = list(cands)
    picked = []
    for _ in range(min(k, len(pool))):
        w = np.array([max(c.fitness, 0.0) for c in pool], dtype=float)
        if not np.isfinite(w).all() or w.sum() <= 0:
            idx = int(rng.integers(len(pool)))
        else:
            idx = int(rng.choice(len(pool), p=w / w.sum()))
        picked.append(pool.pop(idx))
    return picked


def _draw_operators(rng: np.random.Generator, config: EngineConfig, n: int) -> list[str]:
    probs = config.operator_probabilities()
    ops = []
    reflects = 0
    for _ in range(n):
        allowed = dict(probs)
        if reflects >= config.reflect_per_generation:
            allowed["reflect"] = 0.0
        total = sum(allowed.values())
        if total <= 0:
            raise ValueError("schedule leaves no operator available after reflect gating")
        names = list(allowed)
        op = names[int(rng.choice(len(names), p=np.array([allowed[o] for o in names]) / total))]
        reflects += op == "reflect"
        ops.append(op)
    return ops


def _select_parents(rng: np.random.Generator, op: str, pop: Population, reflect_k: int,
                    primary: Candidate | None) -> list[Candidate]:
    ranked = pop.ranked()
    if op == "reflect":
        return ranked[:reflect_k]
    need = ARITY[op]
    if primary is not None:
        rest = [c for c in pop.members if c.id != primary.id]
        return [primary] + _roulette(rng, rest, need - 1)
    return _roulette(rng, pop.members, need)


def select_survivors(rng: np.random.Generator, pool: Sequence[Candidate], K: int, elitism_k: int) -> list[Candidate]:
    ranked = sorted(pool, key=_rank_key)
    elites = ranked[:elitism_k]
    rest = _roulette(rng, ranked[elitism_k:], K - len(elites))
    return sorted(elites + rest, key=_rank_key)


def step_generation(
    pop: Population,
    modifier: Modifier,
    evaluator: Evaluator,
    config: EngineConfig,
    rng: np.random.Generator,
    ledger: OperatorLedger,
    archive: dict[str, Candidate] | None = None,
) -> tuple[Population, list[Candidate]]:
    """Produce offspring, score them and select the next population.

    Returns the new population and the offspring that were evaluated.
    """
    gen = pop.generation + 1
    K = len(pop.members)
    ops = _draw_operators(rng, config, config.n_offspring)
    best = pop.best
    plans = []
    for i, op in enumerate(ops):
        primary = best if i == 0 and op != "reflect" else None
        parents = _select_parents(rng, op, pop, config.reflect_k, primary)
        plans.append((op, parents, f"g{gen}-c{i}"))

    made = execute_many([lambda p=p: apply_operator(p[0], p[1], modifier, p[2], gen) for p in plans], config.workers)
    children = []
    for (op, parents, _), child in zip(plans, made):
        if child is None:
            ledger.skipped[op] = ledger.skipped.get(op, 0) + 1
        else:
            children.append((child, parents))
    evaluated = _evaluate_all([c for c, _ in children], evaluator, config.workers)

    offspring = []
    for child, (_, parents) in zip(evaluated, children):
        best_parent = max(parents, key=lambda p: (p.fitness, _neg_id(p.id)))
        ledger.record(ChildRecord(child.id, child.operator, child.parent_ids, best_parent.id,
                                  child.fitness - best_parent.fitness, gen))
        offspring.append(child)
        if archive is not None:
            archive[child.id] = child

    valid = [c for c in offspring if not _is_invalid(c)]
    if not valid:
        logger.warning("generation %d: no valid offspring, parents carried over", gen)
        ledger.stagnation_events.append(gen)
        survivors = pop.ranked()
    else:
        survivors = select_survivors(rng, list(pop.members) + offspring, K, config.elitism_k)
    new = Population(gen, survivors, [c.id for c in survivors[: config.elitism_k]])
    return new, offspring


def _neg_id(s: str) -> tuple:
    # deterministic tie-break: prefer the lexicographically smallest id
    return tuple(-ord(ch) for ch in s)


def _is_invalid(c: Candidate) -> bool:
    if c.diagnostics.get("extraction_failed"):
        return True
    report = c.fitness_history[-1] if c.fitness_history else None
    return report is None or "penalized" in report.diagnostics


def best_lineage(best: Candidate, archive: Mapping[str, Candidate], ledger: OperatorLedger) -> list[Candidate]:
    """Founder-to-best chain following each child's best parent."""
    best_parent = {rec.child_id: rec.best_parent_id for rec in ledger.children}
    chain = [best]
    seen = {best.id}
    cur = best
    while cur.operator != FOUNDER and cur.id in best_parent:
        cur = archive[best_parent[cur.id]]
        if cur.id in seen:
            raise RuntimeError("lineage cycle detected")
        seen.add(cur.id)
        chain.append(cur)
    return chain[::-1]


# ---------------------------------------------------------------------------
# Runs, persistence and tracking
# ---------------------------------------------------------------------------

@dataclass
class GenerationStats:
    generation: int
    best_id: str
    best_fitness: float
    mean_fitness: float
    best_error: float | None
    mean_error: float | None
    population: list[str]


@dataclass
class EvolutionResult:
    population: Population
    ledger: OperatorLedger
    history: list[GenerationStats]
    archive: dict[str, Candidate]

    @property
    def best(self) -> Candidate:
        return self.population.best

    def trajectory(self) -> list[Candidate]:
        return best_lineage(self.best, self.archive, self.ledger)


def _stats(pop: Population) -> GenerationStats:
    fits = [c.fitness for c in pop.members]
    errs = [c.error for c in pop.members if c.error is not None]
    best = pop.best
    return GenerationStats(pop.generation, best.id, best.fitness, math.fsum(fits) / len(fits), best.error,
                           math.fsum(errs) / len(errs) if errs else None, [c.id for c in pop.ranked()])


# Run-dependent diagnostics left out of checkpoints so offline reruns are byte-identical.
VOLATILE_DIAGNOSTICS = frozenset({"wall_time"})


def report_to_json(r: FitnessReport) -> dict[str, Any]:
    diag = {k: v for k, v in r.diagnostics.items() if k not in VOLATILE_DIAGNOSTICS}
    return {"error": r.error, "fitness": r.fitness, "per_plot": {str(k): v for k, v in r.per_plot.items()},
            "diagnostics": _jsonable(diag)}


def report_from_json(d: Mapping[str, Any]) -> FitnessReport:
    return FitnessReport(d["error"], d["fitness"], {int(k): v for k, v in d.get("per_plot", {}).items()},
                         dict(d.get("diagnostics", {})))


def _jsonable(obj: Any) -> Any:
    try:
        json.dumps(obj)
        return obj
    except TypeError:
        if isinstance(obj, Mapping):
            return {str(k): _jsonable(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple, set, frozenset)):
            return [_jsonable(v) for v in obj]
        return str(obj)


def candidate_to_json(c: Candidate) -> dict[str, Any]:
    return {
        "id": c.id, "kind": c.kind.value, "generation_born": c.generation_born,
        "lineage": [{"operator": e.operator, "parent_ids": list(e.parent_ids)} for e in c.lineage],
        "fitness_history": [report_to_json(r) for r in c.fitness_history],
        "complexity": c.complexity.as_dict() if c.complexity else None,
        "diagnostics": _jsonable(c.diagnostics),
    }


def candidate_from_json(d: Mapping[str, Any], body: str) -> Candidate:
    return Candidate(
        d["id"], CandidateKind(d["kind"]), body,
        [LineageEntry(e["operator"], tuple(e["parent_ids"])) for e in d["lineage"]],
        [report_from_json(r) for r in d["fitness_history"]],
        ComplexityMetrics(**d["complexity"]) if d.get("complexity") else None,
        d["generation_born"], dict(d.get("diagnostics", {})),
    )


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


class EvolutionRun:
    """Drives a full run and checkpoints after every completed generation.

    Layout under ``run_dir``: ``gen_<g>/candidate_<id>.txt`` for every
    candidate born in generation g, ``gen_<g>/scores.json``, ``ledger.json``,
    ``state.json`` (written last; marks the generation complete) and
    ``tracking/*.csv``.
    """

    def __init__(self, generator: Generator, modifier: Modifier, evaluator: Evaluator, config: EngineConfig,
                 kind: CandidateKind | str = CandidateKind.SCRIPT, run_dir: str | Path | None = None,
                 on_generation: Callable[[Population], None] | None = None) -> None:
        self.generator = generator
        self.modifier = modifier
        self.evaluator = evaluator
        self.config = config
        self.kind = CandidateKind(kind)
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.on_generation = on_generation
        self.rng = np.random.default_rng(config.seed)
        self.ledger = OperatorLedger()
        self.archive: dict[str, Candidate] = {}
        self.history: list[GenerationStats] = []
        self.population: Population | None = None

    # persistence -----------------------------------------------------------
    def _checkpoint(self, born: Sequence[Candidate]) -> None:
        if self.run_dir is None:
            return
        pop = self.population
        gdir = self.run_dir / f"gen_{pop.generation}"
        gdir.mkdir(parents=True, exist_ok=True)
        for c in born:
            (gdir / f"candidate_{c.id}.txt").write_text(c.body)
        scores = {
            "generation": pop.generation,
            "population": [c.id for c in pop.ranked()],
            "elite_ids": pop.elite_ids,
            "born": [candidate_to_json(c) for c in born],
            "scores": {c.id: {"fitness": c.fitness, "error": c.error} for c in pop.ranked()},
        }
        _atomic_write(gdir / "scores.json", json.dumps(scores, indent=1))
        _atomic_write(self.run_dir / "ledger.json", json.dumps(self.ledger.to_json(), indent=1))
        state = {"generation": pop.generation, "config": self.config.to_dict(), "kind": self.kind.value,
                 "rng": self.rng.bit_generator.state}
        _atomic_write(self.run_dir / "state.json", json.dumps(_jsonable(state), indent=1))

    @classmethod
    def completed_generation(cls, run_dir: str | Path) -> int | None:
        path = Path(run_dir) / "state.json"
        if not path.is_file():
            return None
        return json.loads(path.read_text())["generation"]

    def _restore(self) -> bool:
        if self.run_dir is None:
            return False
        done = self.completed_generation(self.run_dir)
        if done is None:
            return False
        state = json.loads((self.run_dir / "state.json").read_text())
        self.rng.bit_generator.state = state["rng"]
        self.ledger = OperatorLedger.from_json(json.loads((self.run_dir / "ledger.json").read_text()))
        for g in range(done + 1):
            gdir = self.run_dir / f"gen_{g}"
            scores = json.loads((gdir / "scores.json").read_text())
            for rec in scores["born"]:
                body = (gdir / f"candidate_{rec['id']}.txt").read_text()
                self.archive[rec["id"]] = candidate_from_json(rec, body)
            pop = Population(g, [self.archive[i] for i in scores["population"]], list(scores["elite_ids"]))
            self.history.append(_stats(pop))
        self.population = pop
        logger.info("resumed from generation %d in %s", done, self.run_dir)
        return True

    # driving ---------------------------------------------------------------
    def run(self, resume: bool = True) -> EvolutionResult:
        if not (resume and self._restore()):
            self.population = init_population(self.generator, self.evaluator, self.config.population_size,
                                              self.kind, self.config.workers,
                                              self.config.seed_attempts_factor * self.config.population_size)
            self.population.elite_ids = [c.id for c in self.population.ranked()[: self.config.elitism_k]]
            for c in self.population.members:
                self.archive[c.id] = c
            self.history.append(_stats(self.population))
            self._finish_generation(self.population.members)
        while self.population.generation < self.config.generations:
            self.population, born = step_generation(self.population, self.modifier, self.evaluator, self.config,
                                                    self.rng, self.ledger, self.archive)
            self.history.append(_stats(self.population))
            self._finish_generation(born)
        result = EvolutionResult(self.population, self.ledger, self.history, self.archive)
        self.ledger.best_trajectory = [c.operator for c in result.trajectory()]
        if self.run_dir is not None:
            _atomic_write(self.run_dir / "ledger.json", json.dumps(self.ledger.to_json(), indent=1))
            export_tracking(result, self.run_dir / "tracking")
        return result

    def _finish_generation(self, born: Sequence[Candidate]) -> None:
        self._checkpoint(born)
        if self.on_generation is not None:
            self.on_generation(self.population)


def run_evolution(generator: Generator, modifier: Modifier, evaluator: Evaluator, config: EngineConfig,
                  kind: CandidateKind | str = CandidateKind.SCRIPT, run_dir: str | Path | None = None,
                  resume: bool = True) -> EvolutionResult:
    return EvolutionRun(generator, modifier, evaluator, config, kind, run_dir).run(resume=resume)


TRACKING_FILES = ("fitness_by_generation.csv", "operators.csv", "best_trajectory.csv", "complexity.csv")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x: Any) -> Any:
    return repr(x) if isinstance(x, float) else ("" if x is None else x)


def export_tracking(result: EvolutionResult, out_dir: str | Path) -> dict[str, Path]:
    """CSV exports: per-generation fitness/accuracy, operator totals, the best
    candidate's trajectory, and complexity against fitness for every candidate."""
    out = Path(out_dir)
    paths = {name: out / name for name in TRACKING_FILES}
    _write_csv(paths["fitness_by_generation.csv"],
               ["generation", "best_id", "best_fitness", "mean_fitness", "best_error", "mean_error",
                "best_accuracy", "mean_accuracy"],
               [[h.generation, h.best_id, _fmt(h.best_fitness), _fmt(h.mean_fitness), _fmt(h.best_error),
                 _fmt(h.mean_error), _fmt(None if h.best_error is None else 1.0 - h.best_error),
                 _fmt(None if h.mean_error is None else 1.0 - h.mean_error)] for h in result.history])
    _write_csv(paths["operators.csv"], ["operator", "applications", "cumulative_fitness_delta", "skipped"],
               [[op, s.applications, _fmt(s.cumulative_fitness_delta), result.ledger.skipped.get(op, 0)]
                for op, s in result.ledger.stats.items()])
    deltas = {rec.child_id: rec.delta for rec in result.ledger.children}
    _write_csv(paths["best_trajectory.csv"], ["step", "candidate_id", "operator", "fitness", "error", "delta"],
               [[i, c.id, c.operator, _fmt(c.fitness), _fmt(c.error), _fmt(deltas.get(c.id, 0.0))]
                for i, c in enumerate(result.trajectory())])
    metric_names = list(ComplexityMetrics().as_dict())
    rows = []
    for c in sorted(result.archive.values(), key=lambda c: (c.generation_born, _id_order(c.id))):
        m = c.complexity.as_dict() if c.complexity else {k: "" for k in metric_names}
        err = c.error
        rows.append([c.id, c.generation_born, c.operator, _fmt(c.fitness), _fmt(err),
                     _fmt(None if err is None else 1.0 - err)] + [_fmt(m[k]) for k in metric_names])
    _write_csv(paths["complexity.csv"], ["candidate_id", "generation", "operator", "fitness", "error", "accuracy"]
               + metric_names, rows)
    return paths


def _id_order(cid: str) -> tuple[int, int]:
    g, c = cid.split("-")
    return int(g[1:]), int(c[1:])
