"""Nudge search: evolving policy messages scored by the behaviour they induce.

A message is shown to a persona-conditioned farm agent together with the
farm's current (baseline) heuristic. The agent answers with a script; that
script is executed in the sandbox and its interventions are compared with
the connectivity targets (direction counts / 4 per plot). A refusal, meaning
no extractable script or one equal to the baseline up to whitespace, falls
back to the baseline script.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .connectivity import DirectionRecord
from .evolution import EngineConfig, EvolutionResult, EvolutionRun, Proposal
from .fitness import DEFAULT_EPSILON, FitnessReport, nudge_report
from .landscape import InterventionRecord
from .llm_gateway import Gateway, ProviderError, persona_block
from .offline import parse_offer
from .sandbox import (
    Candidate,
    CandidateKind,
    ExecStage,
    ExecutionLimits,
    ExecutionResult,
    ExecStatus,
    LineageEntry,
    evaluate_script,
)

logger = logging.getLogger(__name__)

PERSONAS = ("resistant", "economic", "social")
MECHANISMS = ("behavioral", "economic")

DEFAULT_INSTRUMENT_RANGES: dict[str, tuple[float, float]] = {
    "margin_establishment": (0.0, 1.0),
    "habitat_establishment": (0.0, 1.0),
    "margin_maintenance": (0.0, 1.0),
    "habitat_maintenance": (0.0, 1.0),
    "payment": (0.0, 150.0),
    "min_habitat_area": (0.0, 10.0),
    "min_margin_adjacent_fraction": (0.0, 0.3),
    "eco_premium": (1.0, 1.3),
}

# Farmer cost bases per hectare: one-time establishment and yearly maintenance.
MARGIN_ESTABLISHMENT_COST = 400.0
HABITAT_ESTABLISHMENT_COST = 300.0
MARGIN_MAINTENANCE_COST = 60.0
HABITAT_MAINTENANCE_COST = 70.0


@dataclass(frozen=True)
class Persona:
    name: str
    prompt_block: str

    @classmethod
    def named(cls, name: str) -> "Persona":
        if name not in PERSONAS:
            raise ValueError(f"unknown persona {name!r}; expected one of {PERSONAS}")
        return cls(name, persona_block(name))

    def __post_init__(self) -> None:
        if self.name in PERSONAS and self.prompt_block != persona_block(self.name):
            raise ValueError(f"prompt block for persona {self.name!r} differs from the catalog entry")


@dataclass(frozen=True)
class MechanismSpec:
    kind: str
    budget_per_farm: float = 10_000.0
    pv_factor: float = 12.46
    instrument_ranges: Mapping[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_INSTRUMENT_RANGES))

    def __post_init__(self) -> None:
        if self.kind not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.kind!r}; expected one of {MECHANISMS}")
        if self.pv_factor <= 0:
            raise ValueError("pv_factor must be positive")
        for name, (lo, hi) in self.instrument_ranges.items():
            if lo > hi:
                raise ValueError(f"range for {name} is empty")


@dataclass
class OfferCheck:
    pv_cost: float
    within_budget: bool
    violations: list[str]


def validate_economic_offer(
    offer: Mapping[str, float],
    mechanism: MechanismSpec,
    uptake_scenario: Mapping[str, float] | None = None,
) -> OfferCheck:
    """Budget cost of an offer's rates under an uptake scenario, plus range checks.

    Missing instruments count as 0 (no subsidy). The default scenario is
    3 ha of new habitat and 2 ha of margins.
    """
    uptake = {"habitat_ha": 3.0, "margin_ha": 2.0, **(uptake_scenario or {})}
    if uptake["habitat_ha"] < 0 or uptake["margin_ha"] < 0:
        raise ValueError("uptake quantities must be nonnegative")
    violations = []
    for name, value in offer.items():
        if name not in mechanism.instrument_ranges:
            violations.append(f"{name} is not an offered instrument")
            continue
        lo, hi = mechanism.instrument_ranges[name]
        if value > hi:
            violations.append(f"{name} exceeds [{lo:g},{hi:g}]")
        elif value < lo:
            violations.append(f"{name} below [{lo:g},{hi:g}]")
    g = lambda k: float(offer.get(k, 0.0))
    pv = mechanism.pv_factor
    cost = (uptake["margin_ha"] * (g("margin_establishment") * MARGIN_ESTABLISHMENT_COST
                                   + g("margin_maintenance") * MARGIN_MAINTENANCE_COST * pv)
            + uptake["habitat_ha"] * (g("habitat_establishment") * HABITAT_ESTABLISHMENT_COST
                                      + g("habitat_maintenance") * HABITAT_MAINTENANCE_COST * pv
                                      + g("payment")))
    return OfferCheck(cost, cost <= mechanism.budget_per_farm, violations)


@dataclass
class NudgeOutcome:
    message: Candidate
    nudged_script: Candidate
    actions: dict[int, InterventionRecord]
    fitness: FitnessReport
    refused: bool = False


def _normalize(code: str) -> str:
    return " ".join(code.split())


def _message_candidate(message: Candidate | str) -> Candidate:
    if isinstance(message, Candidate):
        return message
    return Candidate("message", CandidateKind.MESSAGE, message)


def simulate_farm_response(
    persona: Persona,
    baseline_script: Candidate,
    message: Candidate | str,
    gateway: Gateway,
) -> Candidate:
    """The farm agent's script after reading ``message``.

    Returns a copy of the baseline (diagnostics["refused"] set) when the agent
    returns nothing usable, returns the baseline, or the provider fails.
    """
    msg = _message_candidate(message)
    nudged_id = f"{msg.id}-nudged"
    diag: dict[str, Any] = {}
    body = None
    try:
        resp = gateway.ask("farm_sim", "nudge", baseline_code=baseline_script.body.rstrip("\n"),
                           persona=persona.name, message=msg.body)
        body = resp.parsed
        if body is None:
            diag["refusal_reason"] = f"no script in response: {resp.error}"
    except ProviderError as exc:
        diag["refusal_reason"] = f"provider failure: {exc}"
        logger.warning("farm agent call failed for %s: %s", msg.id, exc)
    if body is not None and _normalize(body) == _normalize(baseline_script.body):
        diag["refusal_reason"] = "returned the baseline unchanged"
        body = None
    refused = body is None
    diag["refused"] = refused
    return Candidate(nudged_id, CandidateKind.SCRIPT, baseline_script.body if refused else body,
                     [LineageEntry("farm_sim", (baseline_script.id, msg.id))], diagnostics=diag)


def evaluate_nudge(
    message: Candidate | str,
    input_file: str | Path,
    baseline_script: Candidate,
    gt_dirs: Mapping[int, DirectionRecord],
    persona: Persona,
    gateway: Gateway,
    baseline_actions: Mapping[int, InterventionRecord] | None = None,
    fixer=None,
    repair_attempts: int = 1,
    limits: ExecutionLimits | None = None,
    artifact_dir: str | Path | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> NudgeOutcome:
    """Simulate the farm's response to a message, execute it and score it.

    ``baseline_actions`` (the baseline script's own output) is reused on
    refusal so refused messages score exactly like the baseline.
    """
    msg = _message_candidate(message)
    nudged = simulate_farm_response(persona, baseline_script, msg, gateway)
    scorer = lambda recs: nudge_report(recs, gt_dirs, epsilon=epsilon)
    refused = bool(nudged.diagnostics.get("refused"))
    if refused and baseline_actions is not None:
        actions = dict(baseline_actions)
        report = scorer(actions)
        report.diagnostics["status"] = ExecStatus.OK.value
    else:
        nudged, result, report = evaluate_script(nudged, input_file, ExecStage.NUDGED, scorer, fixer,
                                                 repair_attempts, limits, epsilon)
        actions = dict(result.output_records or {}) if result.ok else {}
    report.diagnostics["refused"] = refused
    nudged.fitness_history.append(report)
    outcome = NudgeOutcome(msg, nudged, actions, report, refused)
    if artifact_dir is not None:
        write_outcome(outcome, artifact_dir)
    return outcome


def write_outcome(outcome: NudgeOutcome, directory: str | Path) -> None:
    d = Path(directory)
    msg_dir = d / "messages" / f"gen_{outcome.message.generation_born}"
    msg_dir.mkdir(parents=True, exist_ok=True)
    (d / "nudged_scripts").mkdir(parents=True, exist_ok=True)
    (msg_dir / f"msg_{outcome.message.id}.txt").write_text(outcome.message.body)
    (d / "nudged_scripts" / f"{outcome.nudged_script.id}.py").write_text(outcome.nudged_script.body)


def outcome_summary(outcome: NudgeOutcome) -> dict[str, Any]:
    return {
        "message_id": outcome.message.id,
        "nudged_script": outcome.nudged_script.id,
        "refused": outcome.refused,
        "error": outcome.fitness.error,
        "fitness": outcome.fitness.fitness,
        "actions": {str(k): [v.margin_intervention, v.habitat_conversion] for k, v in sorted(outcome.actions.items())},
        "compliance": outcome.message.diagnostics.get("compliance"),
    }


def tracking_label(persona: str, mechanism: str) -> str:
    return f"(P:{persona}, N:{mechanism})"


@dataclass
class MessageSearchResult:
    best: NudgeOutcome
    evolution: EvolutionResult
    outcomes: dict[str, NudgeOutcome]
    tracking_row: dict[str, Any]


@dataclass
class FarmNudgeContext:
    """Everything the policy and farm agents need for one farm."""

    farm_id: int
    input_file: Path
    baseline_script: Candidate
    baseline_actions: Mapping[int, InterventionRecord]
    global_code: str
    gt_dirs: Mapping[int, DirectionRecord]
    crop_prices: Mapping[str, float]
    costs: Mapping[str, Any]
    social_comparison_data: str = ""


def evolve_messages(
    farm: FarmNudgeContext,
    mechanism: MechanismSpec,
    persona: Persona,
    config: EngineConfig,
    gateway: Gateway,
    run_dir: str | Path | None = None,
    limits: ExecutionLimits | None = None,
    enforce_offer_ranges: bool = False,
) -> MessageSearchResult:
    """Evolve messages for one (farm, persona, mechanism) cell.

    Offer compliance (economic mechanism) is logged on each message; with
    ``enforce_offer_ranges`` a message with range violations is treated as
    an unusable proposal instead.
    """
    ctx: dict[str, Any] = dict(
        baseline_code=farm.baseline_script.body.rstrip("\n"), global_code=farm.global_code.rstrip("\n"),
        crop_prices=dict(farm.crop_prices), costs=dict(farm.costs), mechanism=mechanism.kind,
        budget=f"{mechanism.budget_per_farm:g}", pv_factor=f"{mechanism.pv_factor:g}",
        social_comparison_data=farm.social_comparison_data,
    )
    run_dir = Path(run_dir) if run_dir is not None else None
    outcomes: dict[str, NudgeOutcome] = {}
    lock = threading.Lock()

    def check(body: str | None) -> Proposal:
        if body is None:
            return Proposal(None, "no \\communication block")
        if mechanism.kind == "economic":
            offer = parse_offer(body)
            if enforce_offer_ranges and validate_economic_offer(offer, mechanism).violations:
                return Proposal(None, "offer outside instrument ranges")
        return Proposal(body)

    def generator(i: int) -> Proposal:
        return check(gateway.ask("policy_generator", "nudge", sample=i, **ctx).parsed)

    def modifier(op: str, parents) -> Proposal:
        extra = {"top": [(p.body, p.fitness) for p in parents]} if op == "reflect" else {"parents": [p.body for p in parents]}
        return check(gateway.ask("policy_modifier", "nudge", operator=op, **ctx, **extra).parsed)

    def evaluator(c: Candidate) -> FitnessReport:
        if mechanism.kind == "economic":
            offer = parse_offer(c.body)
            chk = validate_economic_offer(offer, mechanism)
            c.diagnostics["compliance"] = {"offer": offer, "pv_cost": chk.pv_cost,
                                           "within_budget": chk.within_budget, "violations": chk.violations,
                                           "compliant": chk.within_budget and not chk.violations}
        out = evaluate_nudge(c, farm.input_file, farm.baseline_script, farm.gt_dirs, persona, gateway,
                             farm.baseline_actions, limits=limits,
                             artifact_dir=run_dir)
        with lock:
            outcomes[c.id] = out
        return out.fitness

    run = EvolutionRun(generator, modifier, evaluator, config, CandidateKind.MESSAGE, run_dir)
    result = run.run()
    best_msg = result.best
    best = outcomes.get(best_msg.id)
    if best is None:  # restored from a checkpoint: re-evaluate the winner once
        best = evaluate_nudge(best_msg, farm.input_file, farm.baseline_script, farm.gt_dirs, persona, gateway,
                              farm.baseline_actions, limits=limits)
        outcomes[best_msg.id] = best
    first = result.history[0]
    row = {
        "farm_id": farm.farm_id, "persona": persona.name, "mechanism": mechanism.kind,
        "label": tracking_label(persona.name, mechanism.kind),
        "best_message_id": best_msg.id, "best_fitness": best_msg.fitness, "best_error": best_msg.error,
        "initial_best_fitness": first.best_fitness, "initial_mean_fitness": first.mean_fitness,
        "generations": result.population.generation, "refused": best.refused,
    }
    if run_dir is not None:
        (run_dir / "outcomes.json").write_text(json.dumps(
            {cid: outcome_summary(o) for cid, o in sorted(outcomes.items())}, indent=1, default=str))
    return MessageSearchResult(best, result, outcomes, row)
