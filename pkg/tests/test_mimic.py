from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agroevo.connectivity import DirectionRecord
from agroevo.evolution import EngineConfig
from agroevo.fitness import DEFAULT_EPSILON, error_nudge, nudge_targets
from agroevo.groundtruth import ReferenceGroundTruth
from agroevo.landscape import ALL_DIRECTIONS, EconomicParams, InterventionRecord, interventions_to_collection
from agroevo.llm_gateway import Gateway, ProviderError, ScriptedProvider, persona_block
from agroevo.mimic import (
    DEFAULT_INSTRUMENT_RANGES,
    MECHANISMS,
    PERSONAS,
    FarmNudgeContext,
    MechanismSpec,
    Persona,
    evaluate_nudge,
    evolve_messages,
    simulate_farm_response,
    tracking_label,
    validate_economic_offer,
)
from agroevo.offline import offline_provider, render_message
from agroevo.sandbox import execute_candidate
from conftest import FAST_LIMITS, script

PLOTS = range(1, 10)


def literal_script(records) -> str:
    doc = interventions_to_collection(records)
    return f"import json\njson.dump({doc!r}, open('output.geojson', 'w'))\n"


@pytest.fixture(scope="module")
def gt_dirs():
    dirs = list(ALL_DIRECTIONS)
    return {i: DirectionRecord(i, frozenset(dirs[: i % 5]), frozenset(dirs[: (i * 3) % 5])) for i in PLOTS}


@pytest.fixture(scope="module")
def zero_actions():
    return {i: InterventionRecord(i) for i in PLOTS}


@pytest.fixture(scope="module")
def baseline(zero_actions):
    return script(literal_script(zero_actions), "baseline")


def farm_gateway(reply: str) -> Gateway:
    return Gateway(ScriptedProvider(lambda b: reply))


def code_reply(body: str) -> str:
    return f"Here is my plan.\n```python\n{body}```\n"


ECON = Persona.named("economic")


# -- refusal -----------------------------------------------------------------------

def test_refusal_returns_baseline_actions_exactly(farm_file, baseline, gt_dirs, zero_actions):
    gw = farm_gateway(code_reply(baseline.body))
    out = evaluate_nudge("Please convert.", farm_file, baseline, gt_dirs, ECON, gw, zero_actions, limits=FAST_LIMITS)
    assert out.refused
    assert out.actions == zero_actions
    assert out.nudged_script.body == baseline.body
    assert out.fitness.error == error_nudge(zero_actions, gt_dirs)
    assert out.nudged_script.diagnostics["refusal_reason"] == "returned the baseline unchanged"


@pytest.mark.parametrize("reply", ["I will not change anything.", "```python\n\n```"])
def test_no_script_counts_as_refusal(reply, baseline):
    nudged = simulate_farm_response(ECON, baseline, "Add margins.", farm_gateway(reply))
    assert nudged.diagnostics["refused"] is True
    assert nudged.body == baseline.body
    assert nudged.diagnostics["refusal_reason"].startswith("no script in response")


def test_provider_failure_counts_as_refusal(baseline):
    def down(b):
        raise ProviderError("offline")

    nudged = simulate_farm_response(ECON, baseline, "Add margins.", Gateway(ScriptedProvider(down)))
    assert nudged.diagnostics["refused"] is True
    assert "provider failure" in nudged.diagnostics["refusal_reason"]


def test_refusal_without_cached_actions_reruns_baseline(farm_file, baseline, gt_dirs, zero_actions):
    gw = farm_gateway("no")
    out = evaluate_nudge("Please convert.", farm_file, baseline, gt_dirs, ECON, gw, None, limits=FAST_LIMITS)
    assert out.refused and out.actions == zero_actions


# -- compliance oracles ----------------------------------------------------------------------

def test_perfect_compliance_scores_zero_error(farm_file, baseline, gt_dirs, zero_actions):
    targets = nudge_targets(gt_dirs)
    gw = farm_gateway(code_reply(literal_script(targets)))
    out = evaluate_nudge("Follow the plan.", farm_file, baseline, gt_dirs, ECON, gw, zero_actions, limits=FAST_LIMITS)
    assert not out.refused
    assert out.fitness.error == 0.0
    assert out.fitness.fitness == pytest.approx(1 / DEFAULT_EPSILON, rel=1e-12)


def test_halfway_compliance_halves_error(farm_file, baseline, gt_dirs, zero_actions):
    targets = nudge_targets(gt_dirs)
    half = {i: InterventionRecord(i, r.margin_intervention / 2, r.habitat_conversion / 2) for i, r in targets.items()}
    gw = farm_gateway(code_reply(literal_script(half)))
    out = evaluate_nudge("Go halfway.", farm_file, baseline, gt_dirs, ECON, gw, zero_actions, limits=FAST_LIMITS)
    base_error = error_nudge(zero_actions, gt_dirs)
    assert base_error > 0
    assert abs(out.fitness.error - base_error / 2) <= 1e-12


def test_broken_nudged_script_is_penalised(farm_file, baseline, gt_dirs, zero_actions):
    gw = farm_gateway(code_reply("raise SystemExit(3)\n"))
    out = evaluate_nudge("x", farm_file, baseline, gt_dirs, ECON, gw, zero_actions, limits=FAST_LIMITS)
    assert not out.refused and out.actions == {}
    assert out.fitness.diagnostics["penalized"] == "runtime_failure"


def test_outcome_artifacts(tmp_path, farm_file, baseline, gt_dirs, zero_actions):
    gw = farm_gateway(code_reply(literal_script(nudge_targets(gt_dirs))))
    evaluate_nudge("Follow.", farm_file, baseline, gt_dirs, ECON, gw, zero_actions, limits=FAST_LIMITS,
                   artifact_dir=tmp_path)
    assert (tmp_path / "messages" / "gen_0" / "msg_message.txt").read_text() == "Follow."
    assert (tmp_path / "nudged_scripts" / "message-nudged.py").is_file()


# -- budget validator --------------------------------------------------------------------------

ECONOMIC = MechanismSpec("economic")


def test_pv_cost_for_payment_case():
    chk = validate_economic_offer({"payment": 150.0}, ECONOMIC, {"habitat_ha": 5.0, "margin_ha": 0.0})
    assert chk.pv_cost == 750.0
    assert chk.within_budget and chk.violations == []


def test_pv_cost_with_maintenance_subsidy():
    chk = validate_economic_offer({"margin_maintenance": 0.5}, ECONOMIC, {"habitat_ha": 0.0, "margin_ha": 2.0})
    assert chk.pv_cost == pytest.approx(2 * 0.5 * 60.0 * 12.46)


def test_out_of_range_instruments_are_flagged():
    chk = validate_economic_offer({"payment": 200.0, "eco_premium": 0.9, "bonus": 1.0}, ECONOMIC)
    assert chk.violations == ["payment exceeds [0,150]", "eco_premium below [1,1.3]", "bonus is not an offered instrument"]


def test_budget_flag():
    rich = {k: hi for k, (lo, hi) in DEFAULT_INSTRUMENT_RANGES.items() if k.endswith(("establishment", "maintenance"))}
    chk = validate_economic_offer(rich, ECONOMIC, {"habitat_ha": 5.0, "margin_ha": 5.0})
    assert not chk.within_budget
    assert chk.violations == []


def test_validator_preconditions():
    with pytest.raises(ValueError):
        validate_economic_offer({}, ECONOMIC, {"habitat_ha": -1.0})
    with pytest.raises(ValueError):
        MechanismSpec("lottery")
    with pytest.raises(ValueError):
        MechanismSpec("economic", pv_factor=0)


instrument = st.sampled_from(sorted(DEFAULT_INSTRUMENT_RANGES))


@given(st.dictionaries(instrument, st.floats(0, 200)), instrument, st.floats(0, 50),
       st.floats(0, 20), st.floats(0, 20))
def test_pv_cost_is_monotone_in_every_instrument(offer, key, bump, habitat_ha, margin_ha):
    uptake = {"habitat_ha": habitat_ha, "margin_ha": margin_ha}
    more = dict(offer)
    more[key] = offer.get(key, 0.0) + bump
    assert validate_economic_offer(more, ECONOMIC, uptake).pv_cost >= validate_economic_offer(offer, ECONOMIC, uptake).pv_cost
    bigger = {"habitat_ha": habitat_ha + 1, "margin_ha": margin_ha + 1}
    assert validate_economic_offer(offer, ECONOMIC, bigger).pv_cost >= validate_economic_offer(offer, ECONOMIC, uptake).pv_cost


# -- personas ----------------------------------------------------------------------------------

def test_personas_use_catalog_blocks():
    for name in PERSONAS:
        assert Persona.named(name).prompt_block == persona_block(name)
    with pytest.raises(ValueError):
        Persona.named("optimist")
    with pytest.raises(ValueError):
        Persona("social", "paraphrased")


def test_offline_resistant_farmer_refuses_weak_offer(baseline, prices):
    gw = Gateway(offline_provider(0, prices))
    weak = render_message({"payment": 10.0}, {})
    assert simulate_farm_response(Persona.named("resistant"), baseline, weak, gw).diagnostics["refused"]
    strong = render_message({"margin_establishment": 1.0, "habitat_establishment": 1.0}, {"neighbours": 4})
    assert not simulate_farm_response(Persona.named("economic"), baseline, strong, gw).diagnostics["refused"]


def test_tracking_label():
    assert tracking_label("economic", "behavioral") == "(P:economic, N:behavioral)"


# -- full matrix offline -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def nudge_farm(tmp_path_factory, landscape7, good_script, global_script):
    from agroevo.landscape import write_landscape_file

    econ = EconomicParams.default()
    path = tmp_path_factory.mktemp("farm") / "input.geojson"
    write_landscape_file(landscape7.farm(1), path)
    base = script(good_script, "baseline")
    actions = execute_candidate(base, path, "baseline", FAST_LIMITS).output_records
    gt = ReferenceGroundTruth()
    dirs = gt.connectivity(landscape7, econ, gt.baseline(landscape7, econ))[1]
    return FarmNudgeContext(1, path, base, actions, global_script, dirs, econ.crop_prices, econ.costs,
                            "2 of 4 neighbours added margins last year.")


def test_full_persona_mechanism_matrix_offline(tmp_path, nudge_farm, prices):
    gw = Gateway(offline_provider(3, prices))
    cfg = EngineConfig(population_size=3, generations=1, elitism_k=1, seed=1)
    rows = []
    for persona in PERSONAS:
        for mech in MECHANISMS:
            res = evolve_messages(nudge_farm, MechanismSpec(mech), Persona.named(persona), cfg, gw,
                                  run_dir=tmp_path / f"{persona}-{mech}", limits=FAST_LIMITS)
            rows.append(res.tracking_row)
            assert res.best.message.id == res.evolution.best.id
            assert (tmp_path / f"{persona}-{mech}" / "outcomes.json").is_file()
            if mech == "economic":
                assert "compliance" in res.evolution.best.diagnostics
    assert [r["label"] for r in rows] == [tracking_label(p, m) for p in PERSONAS for m in MECHANISMS]
    assert all(r["best_fitness"] >= r["initial_best_fitness"] for r in rows)


def test_enforced_offer_ranges_reject_violating_messages(nudge_farm, prices):
    bad = render_message({"payment": 500.0}, {})
    good = render_message({"payment": 100.0}, {})
    replies = iter([bad, good, good, good, good])

    def strategy(b):
        if b.role.value == "policy_generator":
            return "\\communication{" + next(replies) + "}"
        return offline_provider(0, prices).strategy(b)

    gw = Gateway(ScriptedProvider(strategy))
    res = evolve_messages(nudge_farm, ECONOMIC, ECON, EngineConfig(population_size=2, generations=0, elitism_k=1), gw,
                          limits=FAST_LIMITS, enforce_offer_ranges=True)
    assert all("500" not in c.body for c in res.evolution.population.members)
