"""Acceptance suite: one PASS/FAIL line per criterion.

Each test gathers named checks, prints a single verdict line and fails if
any check failed. The lines are repeated in the terminal summary.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import random
import time

import numpy as np
import pytest

import oracles
import test_complexity as cx
import test_connectivity as conn_t
import test_evolution as evo_t
import test_fitness as fit_t
import test_llm_gateway as gw_t
import test_mimic as mim_t
import test_pipeline as pipe_t
import test_sandbox as sb_t
from agroevo.complexity import compute_complexity
from agroevo.connectivity import DirectionRecord, compute_iic
from agroevo.evolution import EngineConfig, run_evolution
from agroevo.fitness import DEFAULT_EPSILON, error_conn, error_npv, error_nudge, jaccard_distance, nudge_targets
from agroevo.landscape import ALL_DIRECTIONS, InterventionRecord, PlotType, generate_landscape, validate_landscape
from agroevo.llm_gateway import Gateway, compose_prompt, embed_message, extract_message, persona_block
from agroevo.mimic import MECHANISMS, PERSONAS, MechanismSpec, Persona, evaluate_nudge, evolve_messages, validate_economic_offer
from agroevo.offline import offline_provider
from agroevo.pipeline import RunConfig, RunContext, explain_heuristics, run_stages
from agroevo.sandbox import ExecStatus, ExecutionLimits, evaluate_script, execute_candidate
from conftest import FAST_LIMITS, script


class Criterion:
    def __init__(self, number: int, config) -> None:
        self.number = number
        self.config = config
        self.failed: list[str] = []
        self.notes: list[str] = []
        self.t0 = time.perf_counter()
        self.done = False

    def check(self, name: str, ok: bool) -> bool:
        if not ok:
            self.failed.append(name)
        return ok

    def note(self, text: str) -> None:
        self.notes.append(text)

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self.t0

    def _emit(self, verdict: str, detail: str) -> str:
        line = f"CRITERION {self.number:2d}: {verdict}  {detail}"
        self.config._acceptance_lines.append((self.number, line))
        print(line)
        return line

    def finish(self) -> None:
        self.done = True
        extra = "; ".join(self.notes)
        if self.failed:
            line = self._emit("FAIL", f"failed: {', '.join(self.failed)}" + (f" ({extra})" if extra else ""))
            pytest.fail(line)
        self._emit("PASS", extra)

    def skip(self, reason: str) -> None:
        self.done = True
        self._emit("SKIP", reason)
        pytest.skip(reason)

    def crashed(self) -> None:
        self._emit("FAIL", "raised before all checks ran")


@pytest.fixture
def criterion(request):
    made = []

    def make(n: int) -> Criterion:
        c = Criterion(n, request.config)
        made.append(c)
        return c

    yield make
    for c in made:
        if not c.done:
            c.crashed()


# -- 1 -----------------------------------------------------------------------------

def test_criterion_01_fitness_oracles(criterion):
    c = criterion(1)
    jac = all(abs(jaccard_distance(a, b) - oracles.jaccard_mask(oracles.mask(a), oracles.mask(b))) <= 1e-12
              for a, b in itertools.product(fit_t.SUBSETS, repeat=2))
    c.check("jaccard 256 pairs", jac and len(fit_t.SUBSETS) ** 2 == 256)
    rng = np.random.default_rng(7)
    worst = {"npv": 0.0, "conn": 0.0, "nudge": 0.0}
    for _ in range(1000):
        ids = range(1, int(rng.integers(1, 10)) + 1)
        pred, gt, dpred, dgt, rows, drows, nrows = {}, {}, {}, {}, [], [], []
        for i in ids:
            m_g, h_g, m_p, h_p = (float(x) for x in rng.random(4))
            pred[i], gt[i] = fit_t.rec(i, m_p, h_p), fit_t.rec(i, m_g, h_g)
            rows.append((m_g, h_g, m_p, h_p))
            mg, hg, mp, hp = (fit_t.SUBSETS[int(rng.integers(16))] for _ in range(4))
            dpred[i], dgt[i] = fit_t.drec(i, mp, hp), fit_t.drec(i, mg, hg)
            drows.append(tuple(oracles.mask(s) for s in (mg, hg, mp, hp)))
            nrows.append((oracles.mask(mg), oracles.mask(hg), m_p, h_p))
        worst["npv"] = max(worst["npv"], abs(error_npv(pred, gt) - oracles.npv_error(rows)))
        worst["conn"] = max(worst["conn"], abs(error_conn(dpred, dgt) - oracles.conn_error(drows)))
        worst["nudge"] = max(worst["nudge"], abs(error_nudge(pred, dgt) - oracles.nudge_error(nrows)))
    for k, v in worst.items():
        c.check(f"error_{k} within 1e-12", v <= 1e-12)
    c.check("runtime < 5 s", c.elapsed < 5.0)
    c.note(f"max |diff| {max(worst.values()):.1e}, {c.elapsed:.2f} s")
    c.finish()


# -- 2 -----------------------------------------------------------------------------

def test_criterion_02_iic_oracle(criterion):
    c = criterion(2)
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for _ in range(200):
        areas, edges, total = conn_t.random_graph(rng)
        worst = max(worst, abs(compute_iic(conn_t.graph(areas, edges, total)).iic - oracles.iic(areas, edges, total)))
    c.check("200 random graphs within 1e-12", worst <= 1e-12)
    c.check("single patch = 1.0", compute_iic(conn_t.graph([4.0], [], 4.0)).iic == 1.0)
    c.check("two isolated = 0.5", compute_iic(conn_t.graph([1.0, 1.0], [], 2.0)).iic == 0.5)
    path = compute_iic(conn_t.graph([1.0, 1.0, 1.0], [(0, 1), (1, 2)], 3.0)).iic
    c.check("three-patch path = 17/27", abs(path - 17 / 27) <= 1e-12)
    c.check("runtime < 5 s", c.elapsed < 5.0)
    c.note(f"max |diff| {worst:.1e}, {c.elapsed:.2f} s")
    c.finish()


# -- 3 -----------------------------------------------------------------------------

def test_criterion_03_landscape_generation(criterion):
    c = criterion(3)
    bad, ag, plots = [], 0, 0
    for seed in range(1, 51):
        land = generate_landscape(seed)
        if validate_landscape(land):
            bad.append(seed)
        if [len(f.plots) for f in land.farms] != [9] * 5:
            bad.append(seed)
        for p in land.plots():
            plots += 1
            ag += p.plot_type is PlotType.AG
    c.check("invariants on seeds 1..50", not bad)
    frac = ag / plots
    c.check("ag fraction 0.6 +- 0.03", plots >= 1000 and abs(frac - 0.6) <= 0.03)
    c.check("runtime < 60 s", c.elapsed < 60.0)
    c.note(f"ag fraction {frac:.4f} over {plots} plots, {c.elapsed:.1f} s")
    c.finish()


# -- 4 -----------------------------------------------------------------------------

def test_criterion_04_sandbox(criterion, tmp_path, farm_file, good_script):
    c = criterion(4)
    limits = ExecutionLimits(timeout=1.0)
    t0 = time.monotonic()
    res = execute_candidate(script("while True:\n    pass\n"), farm_file, "baseline", limits)
    killed_in = time.monotonic() - t0
    c.check("timeout within budget + 2 s", res.status is ExecStatus.TIMEOUT and killed_in < limits.timeout + 2.0)

    escaped = []
    for name, probe in sb_t.PROBES.items():
        outside = tmp_path / f"escaped_{name}"
        body = probe.format(outside=str(outside), parent=str(tmp_path)) + "\n"
        body += f"open({str(outside) + '.marker'!r}, 'w').write('x')\n"
        r = execute_candidate(script(body), farm_file, "baseline", FAST_LIMITS)
        if r.status is not ExecStatus.RUNTIME_FAILURE or outside.exists() or (tmp_path / f"escaped_{name}.marker").exists():
            escaped.append(name)
    c.check("isolation probes contained", not escaped)

    bad_out = execute_candidate(script("open('output.geojson', 'w').write('not json')\n"), farm_file, "baseline", FAST_LIMITS)
    c.check("malformed output is output_invalid", bad_out.status is ExecStatus.OUTPUT_INVALID)

    fixer = sb_t.ScriptedFixer([good_script])
    cand, fixed, _ = evaluate_script(script(sb_t.BROKEN_PREFIX + good_script), farm_file, "baseline", sb_t.zero_scorer,
                                     fixer, max_attempts=1, limits=FAST_LIMITS)
    c.check("scripted fixer repairs in one attempt", fixed.ok and len(fixer.calls) == 1)
    _, _, penal = evaluate_script(script(sb_t.BROKEN_PREFIX), farm_file, "baseline", sb_t.zero_scorer,
                                  sb_t.ScriptedFixer([]), max_attempts=1, limits=FAST_LIMITS)
    _, _, valid = evaluate_script(script(good_script), farm_file, "baseline", sb_t.zero_scorer, limits=FAST_LIMITS)
    worst_valid = 1.0 / (2.0 + DEFAULT_EPSILON)
    c.check("unfixable penalised below every valid", penal.fitness < min(valid.fitness, worst_valid))
    c.note(f"killed after {killed_in:.2f} s, {len(sb_t.PROBES)} probes")
    c.finish()


# -- 5 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_evolution_engine(criterion, tmp_path):
    c = criterion(5)
    e0 = 1.5
    halving = True
    for g in range(11):
        res = run_evolution(evo_t.founders(e0), evo_t.halve, evo_t.evaluate, EngineConfig(population_size=6, generations=g, seed=g))
        halving &= res.best.error == e0 * 2.0 ** (-g)
    c.check("halving exact for g <= 10", halving)

    monotone, telescope, constant = True, 0.0, True
    for seed in range(20):
        res = run_evolution(evo_t.noisy_founders(seed), evo_t.NoisyModifier(seed), evo_t.evaluate,
                            EngineConfig(population_size=6, generations=25, elitism_k=1, seed=seed))
        best = [h.best_fitness for h in res.history]
        monotone &= all(b >= a for a, b in zip(best, best[1:]))
        constant &= all(len(h.population) == 6 for h in res.history)
        chain = res.trajectory()
        total = math.fsum(res.ledger.delta_of(x.id) for x in chain[1:])
        telescope = max(telescope, abs(total - (res.best.fitness - chain[0].fitness)))
    c.check("elitism non-decreasing on 20 seeds x 25 gens", monotone)
    c.check("telescoping within 1e-9", telescope <= 1e-9)

    mock = run_evolution(evo_t.founders(1.0), evo_t.halve, evo_t.evaluate,
                         EngineConfig(population_size=25, generations=25, seed=0))
    constant &= [len(h.population) for h in mock.history] == [25] * 26
    c.check("population size constant", constant)

    t0 = time.perf_counter()
    ctx = RunContext.open(tmp_path / "k25", RunConfig.from_dict({
        "seed": 3, "farms": [1], "stages": {"3": False, "4": False},
        "evolution": {"population_size": 25, "generations": 25, "elitism_k": 2}}))
    run_stages(ctx, ("1", "2"))
    k25 = time.perf_counter() - t0
    summary = json.loads((tmp_path / "k25" / "stage2" / "farm_1" / "summary.json").read_text())
    c.check("K=25 x 25 gens offline search < 120 s", k25 < 120.0 and summary["generations"] == 25)
    c.note(f"K=25 search {k25:.1f} s, best error {summary['best_error']:.4g}")
    c.finish()


# -- 6 -----------------------------------------------------------------------------

def test_criterion_06_prompts_and_parsing(criterion):
    c = criterion(6)
    mismatched = [name for name, (role, stage, ctx) in gw_t.CASES.items()
                  if compose_prompt(role, stage, ctx).text.encode() != (gw_t.GOLDEN / f"{name}.txt").read_bytes()]
    roles = {r for r, _, _ in gw_t.CASES.values()}
    stages = {s for _, s, _ in gw_t.CASES.values()}
    c.check("goldens byte-equal", not mismatched)
    c.check("eight roles across three stages", len(roles) == 8 and len(stages) == 3)
    rng = random.Random(2024)
    round_trip = True
    for _ in range(100):
        msg = gw_t._balanced(rng).strip() or "x"
        round_trip &= extract_message("Preamble {x}\n" + embed_message(msg) + "\nEnd.") == msg
    c.check("extract . embed identity on 100 fuzzed", round_trip)
    verbatim = all(hashlib.sha256(persona_block(n).encode()).hexdigest() == h for n, h in gw_t.PERSONA_SHA256.items())
    c.check("persona blocks verbatim", verbatim)
    c.note(f"{len(gw_t.CASES)} goldens")
    c.finish()


# -- 7 -----------------------------------------------------------------------------

def test_criterion_07_mimic(criterion, farm_file, landscape7, good_script, global_script, prices, tmp_path_factory):
    c = criterion(7)
    dirs = list(ALL_DIRECTIONS)
    gt = {i: DirectionRecord(i, frozenset(dirs[: i % 5]), frozenset(dirs[: (i * 3) % 5])) for i in mim_t.PLOTS}
    zero = {i: InterventionRecord(i) for i in mim_t.PLOTS}
    base = script(mim_t.literal_script(zero), "baseline")
    econ = Persona.named("economic")

    refusal = evaluate_nudge("x", farm_file, base, gt, econ, mim_t.farm_gateway(mim_t.code_reply(base.body)), zero,
                             limits=FAST_LIMITS)
    c.check("refusal returns baseline actions", refusal.refused and refusal.actions == zero)

    perfect = evaluate_nudge("x", farm_file, base, gt, econ,
                             mim_t.farm_gateway(mim_t.code_reply(mim_t.literal_script(nudge_targets(gt)))), zero,
                             limits=FAST_LIMITS)
    c.check("perfect compliance error 0, fitness 1/eps",
            perfect.fitness.error == 0.0 and abs(perfect.fitness.fitness - 1 / DEFAULT_EPSILON) <= 1e-12 / DEFAULT_EPSILON)

    half = {i: InterventionRecord(i, r.margin_intervention / 2, r.habitat_conversion / 2) for i, r in nudge_targets(gt).items()}
    halfway = evaluate_nudge("x", farm_file, base, gt, econ,
                             mim_t.farm_gateway(mim_t.code_reply(mim_t.literal_script(half))), zero, limits=FAST_LIMITS)
    c.check("halfway halves error to 1e-12", abs(halfway.fitness.error - error_nudge(zero, gt) / 2) <= 1e-12)

    pv = validate_economic_offer({"payment": 150.0}, MechanismSpec("economic"), {"habitat_ha": 5.0, "margin_ha": 0.0})
    c.check("pv_cost 750", pv.pv_cost == 750.0)
    flagged = validate_economic_offer({"payment": 200.0, "eco_premium": 0.9}, MechanismSpec("economic"))
    c.check("out-of-range instruments flagged", len(flagged.violations) == 2)

    nudge_farm = _nudge_farm(tmp_path_factory, landscape7, good_script, global_script)
    gw = Gateway(offline_provider(3, prices))
    cells = 0
    for persona in PERSONAS:
        for mech in MECHANISMS:
            evolve_messages(nudge_farm, MechanismSpec(mech), Persona.named(persona),
                            EngineConfig(population_size=3, generations=1, elitism_k=1, seed=1), gw, limits=FAST_LIMITS)
            cells += 1
    c.check("3 x 2 matrix completes offline", cells == 6)
    c.finish()


def _nudge_farm(tmp_path_factory, landscape7, good_script, global_script):
    from agroevo.groundtruth import ReferenceGroundTruth
    from agroevo.landscape import EconomicParams, write_landscape_file
    from agroevo.mimic import FarmNudgeContext

    econ = EconomicParams.default()
    path = tmp_path_factory.mktemp("accept_farm") / "input.geojson"
    write_landscape_file(landscape7.farm(1), path)
    base = script(good_script, "baseline")
    actions = execute_candidate(base, path, "baseline", FAST_LIMITS).output_records
    gt = ReferenceGroundTruth()
    dirs = gt.connectivity(landscape7, econ, gt.baseline(landscape7, econ))[1]
    return FarmNudgeContext(1, path, base, actions, global_script, dirs, econ.crop_prices, econ.costs,
                            "2 of 4 neighbours added margins last year.")


# -- 8 -----------------------------------------------------------------------------

def test_criterion_08_explanations(criterion, tmp_path):
    c = criterion(8)
    files = pipe_t.programs(tmp_path, 7)
    explain_heuristics(files, 3, pipe_t.gateway_for(pipe_t.CountingExplainer()), tmp_path / "full")
    ckpts = list((tmp_path / "full" / "checkpoints").glob("group_*.json"))
    c.check("3 checkpoints", len(ckpts) == 3)
    c.check("1 summary", len(list((tmp_path / "full").glob("summary*.txt"))) == 1)

    out = tmp_path / "killed"
    try:
        explain_heuristics(files, 3, pipe_t.gateway_for(pipe_t.CountingExplainer(fail_on_call=4)), out)
        died = False
    except Exception:  # noqa: BLE001
        died = True
    fresh = pipe_t.CountingExplainer()
    explain_heuristics(files, 3, pipe_t.gateway_for(fresh), out)
    c.check("kill mid-run", died)
    c.check("resume replays only remaining groups", fresh.calls == ["explainer", "merger"])
    c.finish()


# -- 9 -----------------------------------------------------------------------------

def test_criterion_09_complexity(criterion):
    c = criterion(9)
    one = compute_complexity("x = 1\n")
    c.check("single assignment counts", (one.halstead_n1, one.halstead_n2, one.halstead_N1, one.halstead_N2) == (1, 2, 1, 2))
    c.check("single assignment difficulty 0.5", one.difficulty == 0.5)
    c.check("single assignment volume", abs(one.volume - 3 * math.log2(3)) <= 1e-9)
    two = compute_complexity(cx.TWO_BRANCH)
    c.check("two-branch counts", (two.halstead_n1, two.halstead_n2, two.halstead_N1, two.halstead_N2) == (8, 4, 11, 9))
    c.check("two-branch volume and difficulty", abs(two.volume - 20 * math.log2(12)) <= 1e-9 and abs(two.difficulty - 9) <= 1e-9)
    c.check("two-branch LLOC and cyclomatic", (two.lloc, two.cyclomatic) == (4, 3))
    loop = compute_complexity(cx.LOOP)
    c.check("loop LLOC and cyclomatic", (loop.lloc, loop.cyclomatic) == (8, 5))
    c.finish()


# -- 10 ----------------------------------------------------------------------------

@pytest.mark.live
def test_criterion_10_live_smoke(criterion, tmp_path):
    c = criterion(10)
    key = os.environ.get("AGROEVO_API_KEY") or os.environ.get("OPENAI_API_KEY")
    if os.environ.get("AGROEVO_LIVE") != "1" or not key:
        c.skip("opt-in: set AGROEVO_LIVE=1 and AGROEVO_API_KEY")
    ctx = RunContext.open(tmp_path / "live", RunConfig.from_dict({
        "seed": 0, "farms": [1],
        "evolution": {"population_size": 4, "generations": 2, "elitism_k": 1},
        "provider": {"kind": "live", "rate_limit": 2.0}}))
    run_stages(ctx, ("1", "2", "3", "4"))
    summary = json.loads((tmp_path / "live" / "stage2" / "farm_1" / "summary.json").read_text())
    c.check("all stages complete", all(ctx.manifest.is_complete(s) for s in ("1", "2", "3", "4")))
    c.check("best stage-2 fitness > initial mean", summary["best_fitness"] > summary["initial_mean_fitness"])
    c.note(f"best {summary['best_fitness']:.4g} vs initial mean {summary['initial_mean_fitness']:.4g}")
    c.finish()
