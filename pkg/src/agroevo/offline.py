"""A deterministic stand-in for a language model, for offline runs.

``OfflineStrategy`` reads only the composed prompt and answers every role:

* scripts are rendered from fixed templates driven by a ``PARAMS`` dict;
  operators perturb, average or redraw those parameters,
* policy messages state explicit offers (economic) or behavioural levers,
  and the operators edit those numbers and levers,
* the farm agent scores a message against its persona and either returns
  the baseline unchanged or appends an adjustment that shifts the plan
  toward habitat-adjacent quadrants, in proportion to how convinced it is,
* explanations summarise parameter trends across the listed programs.

Randomness is seeded from the prompt digest, so answers replay exactly.
This is a test and demo device. It does not imitate model quality.
"""

from __future__ import annotations

import ast
import json
import re
from typing import Any, Mapping

import numpy as np

from .landscape import EconomicParams
from .llm_gateway import PromptBundle, Role, Stage, default_catalog, embed_message

_CODE_BLOCK = re.compile(r"```python\n(.*?)```", re.DOTALL)
_PARAMS_LINE = re.compile(r"^PARAMS = (\{.*\})$", re.MULTILINE)
_PRICES = re.compile(r"crop prices in USD/Tonne: (\{.*?\}), and these")

BASELINE_PARAM_RANGES = {
    "habitat_threshold": (100.0, 900.0),
    "margin_threshold": (300.0, 1500.0),
    "habitat_level": (0.0, 1.0),
    "margin_level": (0.0, 1.0),
}
GLOBAL_PARAM_RANGES = {
    "touch_buffer": (0.5, 40.0),
    "habitat_threshold": (100.0, 900.0),
}

_BASELINE_TEMPLATE = '''import json

PARAMS = {params}
PRICES = {prices}

# Revenue per hectare decides the intervention: low earners become habitat,
# middling ones get margins.
with open("input.geojson") as f:
    data = json.load(f)

features = []
for feat in data["features"]:
    props = feat["properties"]
    margin_intervention = 0.0
    habitat_conversion = 0.0
    if props.get("type") == "ag_plot":
        revenue = float(props.get("yield") or 0.0) * PRICES.get(props.get("label"), 0.0)
        if revenue < PARAMS["habitat_threshold"]:
            habitat_conversion = PARAMS["habitat_level"]
        elif revenue < PARAMS["margin_threshold"]:
            margin_intervention = PARAMS["margin_level"]
    new_props = dict(props)
    new_props["margin_intervention"] = round(min(max(margin_intervention, 0.0), 1.0), 4)
    new_props["habitat_conversion"] = round(min(max(habitat_conversion, 0.0), 1.0), 4)
    features.append({{"type": "Feature", "properties": new_props, "geometry": feat["geometry"]}})

with open("output.geojson", "w") as f:
    json.dump({{"type": "FeatureCollection", "features": features}}, f)
'''

_GLOBAL_TEMPLATE = '''import json

from shapely.geometry import box, shape

PARAMS = {params}
PRICES = {prices}


def quadrants(geom):
    minx, miny, maxx, maxy = geom.bounds
    c = geom.centroid
    return {{
        "north-west": geom.intersection(box(minx, c.y, c.x, maxy)),
        "north-east": geom.intersection(box(c.x, c.y, maxx, maxy)),
        "south-west": geom.intersection(box(minx, miny, c.x, c.y)),
        "south-east": geom.intersection(box(c.x, miny, maxx, c.y)),
    }}


with open("input.geojson") as f:
    data = json.load(f)

habitats = [shape(f["geometry"]).buffer(PARAMS["touch_buffer"])
            for f in data["features"] if f["properties"].get("type") == "hab_plot"]

records = []
for feat in data["features"]:
    props = feat["properties"]
    margin_directions = []
    habitat_directions = []
    if props.get("type") == "ag_plot":
        geom = shape(feat["geometry"])
        touching = [d for d, q in quadrants(geom).items() if any(q.intersects(h) for h in habitats)]
        margin_directions = touching
        revenue = float(props.get("yield") or 0.0) * PRICES.get(props.get("label"), 0.0)
        if revenue < PARAMS["habitat_threshold"]:
            habitat_directions = touching
    records.append({{
        "plot_id": props["id"],
        "plot_type": props.get("type"),
        "label": props.get("label"),
        "margin_directions": margin_directions,
        "habitat_directions": habitat_directions,
    }})

with open("output.json", "w") as f:
    json.dump(records, f)
'''

_ADJUST_TEMPLATE = '''

# Adjustment after the policy message: move toward habitat-adjacent quadrants.
from shapely.geometry import box as _box, shape as _shape

ADJUST = {adjust}

with open("input.geojson") as f:
    _inp = json.load(f)
with open("output.geojson") as f:
    _out = json.load(f)

_hab = [_shape(f["geometry"]).buffer(ADJUST["touch_buffer"])
        for f in _inp["features"] if f["properties"].get("type") == "hab_plot"]
_geom = {{f["properties"]["id"]: _shape(f["geometry"]) for f in _inp["features"]}}


def _touching(g):
    minx, miny, maxx, maxy = g.bounds
    c = g.centroid
    boxes = [_box(minx, c.y, c.x, maxy), _box(c.x, c.y, maxx, maxy), _box(minx, miny, c.x, c.y), _box(c.x, miny, maxx, c.y)]
    return sum(1 for b in boxes if any(g.intersection(b).intersects(h) for h in _hab))


_w = ADJUST["weight"]
for f in _out["features"]:
    p = f["properties"]
    if p.get("type") != "ag_plot":
        continue
    q = _touching(_geom[p["id"]]) / 4
    m = float(p.get("margin_intervention", 0.0))
    h = float(p.get("habitat_conversion", 0.0))
    p["margin_intervention"] = round((1 - _w) * m + _w * q, 4)
    p["habitat_conversion"] = round((1 - _w) * h + _w * (q if h > 0 else 0.0), 4)

with open("output.geojson", "w") as f:
    json.dump(_out, f)
'''


def _fmt_params(params: Mapping[str, float]) -> str:
    return "{" + ", ".join(f"{json.dumps(k)}: {round(float(v), 4)!r}" for k, v in params.items()) + "}"


def render_baseline_script(params: Mapping[str, float], prices: Mapping[str, float]) -> str:
    return _BASELINE_TEMPLATE.format(params=_fmt_params(params), prices=json.dumps(dict(prices)))


def render_global_script(params: Mapping[str, float], prices: Mapping[str, float]) -> str:
    return _GLOBAL_TEMPLATE.format(params=_fmt_params(params), prices=json.dumps(dict(prices)))


def append_adjustment(script: str, weight: float, touch_buffer: float = 1.0) -> str:
    adjust = _fmt_params({"weight": min(1.0, max(0.0, weight)), "touch_buffer": touch_buffer})
    return script.rstrip("\n") + "\n" + _ADJUST_TEMPLATE.format(adjust=adjust)


def script_params(code: str) -> dict[str, float] | None:
    m = _PARAMS_LINE.search(code)
    if not m:
        return None
    try:
        value = ast.literal_eval(m.group(1))
    except (ValueError, SyntaxError):
        return None
    return {k: float(v) for k, v in value.items()} if isinstance(value, dict) else None


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

OFFER_FIELDS = (
    ("margin_establishment", "margin establishment"),
    ("habitat_establishment", "habitat establishment"),
    ("margin_maintenance", "margin maintenance"),
    ("habitat_maintenance", "habitat maintenance"),
)
_OFFER_RE = {key: re.compile(rf"(\d+(?:\.\d+)?) subsidy factor for {text}") for key, text in OFFER_FIELDS}
_PAYMENT_RE = re.compile(r"payment of (\d+(?:\.\d+)?) per hectare")
_NEIGHBOURS_RE = re.compile(r"(\d+) of your neighbours")
LEVER_SENTENCES = {
    "default": "The recommended default in your community is a margin on every field edge that meets existing habitat.",
    "commitment": "Would you commit to a small trial strip on one field edge this season?",
    "framing": "Connected habitat brings pollinators and pest predators to the crops right next to it.",
}


def parse_offer(message: str) -> dict[str, float]:
    """Instrument values stated in the canonical phrasing, where present."""
    out = {}
    for key, rx in _OFFER_RE.items():
        m = rx.search(message)
        if m:
            out[key] = float(m.group(1))
    m = _PAYMENT_RE.search(message)
    if m:
        out["payment"] = float(m.group(1))
    return out


def message_levers(message: str) -> dict[str, float]:
    m = _NEIGHBOURS_RE.search(message)
    levers = {"neighbours": float(m.group(1)) if m else 0.0}
    for name, sentence in LEVER_SENTENCES.items():
        levers[name] = 1.0 if sentence in message else 0.0
    return levers


def render_message(offer: Mapping[str, float], levers: Mapping[str, float]) -> str:
    parts = ["Dear farmer, connecting your field edges to existing habitat helps the whole landscape."]
    if offer:
        terms = [f"a {offer[k]:.2f} subsidy factor for {text}" for k, text in OFFER_FIELDS if k in offer]
        if "payment" in offer:
            terms.append(f"a payment of {offer['payment']:.0f} per hectare of new habitat")
        parts.append("We offer " + ", ".join(terms) + ".")
    n = int(levers.get("neighbours", 0))
    if n > 0:
        parts.append(f"{n} of your neighbours have already established margins next to existing habitat.")
    for name, sentence in LEVER_SENTENCES.items():
        if levers.get(name, 0) >= 0.5:
            parts.append(sentence)
    return " ".join(parts)


# ---------------------------------------------------------------------------
# Persona response
# ---------------------------------------------------------------------------

def persona_weight(persona: str, offer: Mapping[str, float], levers: Mapping[str, float]) -> float:
    """How far the offline farm agent moves toward the connectivity plan (0..1)."""
    subsidy = sum(offer.get(k, 0.0) for k, _ in OFFER_FIELDS) / 4
    pay = offer.get("payment", 0.0) / 150
    social = min(levers.get("neighbours", 0.0), 5) / 5
    extras = (levers.get("default", 0) + levers.get("commitment", 0) + levers.get("framing", 0)) / 3
    if persona == "economic":
        w = 0.7 * subsidy + 0.3 * pay + 0.1 * extras
    elif persona == "social":
        w = 0.6 * social + 0.3 * extras + 0.2 * subsidy
    elif persona == "resistant":
        raw = 0.5 * subsidy + 0.3 * pay + 0.2 * social
        w = max(0.0, (raw - 0.6) / 0.4)
    else:
        w = 0.4 * subsidy + 0.2 * pay + 0.3 * social + 0.1 * extras
    return round(min(1.0, max(0.0, w)), 4)


# ---------------------------------------------------------------------------
# Strategy
# ---------------------------------------------------------------------------

class OfflineStrategy:
    """Callable for ``ScriptedProvider``: prompt bundle -> raw model text."""

    def __init__(self, seed: int = 0, prices: Mapping[str, float] | None = None) -> None:
        self.seed = seed
        self.prices = dict(prices or EconomicParams.default().crop_prices)

    def _rng(self, bundle: PromptBundle) -> np.random.Generator:
        return np.random.default_rng([self.seed, int(bundle.context_digest[:15], 16)])

    def __call__(self, bundle: PromptBundle) -> str:
        handler = {
            Role.GENERATOR: self._generate_script,
            Role.MODIFIER: self._modify_script,
            Role.FIXER: self._fix_script,
            Role.POLICY_GENERATOR: self._generate_message,
            Role.POLICY_MODIFIER: self._modify_message,
            Role.FARM_SIM: self._farm_response,
            Role.EXPLAINER: self._explain,
            Role.MERGER: self._merge,
        }[bundle.role]
        return handler(bundle)

    # scripts ---------------------------------------------------------------
    def _prices(self, text: str) -> dict[str, float]:
        m = _PRICES.search(text)
        if m:
            try:
                return json.loads(m.group(1))
            except json.JSONDecodeError:
                pass
        return dict(self.prices)

    def _ranges(self, stage: Stage) -> dict[str, tuple[float, float]]:
        return GLOBAL_PARAM_RANGES if stage is Stage.GLOBAL else BASELINE_PARAM_RANGES

    def _random_params(self, rng, stage: Stage) -> dict[str, float]:
        return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in self._ranges(stage).items()}

    def _clip(self, params: Mapping[str, float], stage: Stage) -> dict[str, float]:
        out = {}
        for k, (lo, hi) in self._ranges(stage).items():
            out[k] = float(min(hi, max(lo, params.get(k, (lo + hi) / 2))))
        return out

    def _render(self, params, bundle: PromptBundle) -> str:
        prices = self._prices(bundle.text)
        params = self._clip(params, bundle.stage)
        code = render_global_script(params, prices) if bundle.stage is Stage.GLOBAL else render_baseline_script(params, prices)
        return f"Reasoning: the plan follows the revenue and adjacency pattern in the examples.\n\n```python\n{code}```\n"

    def _generate_script(self, bundle: PromptBundle) -> str:
        return self._render(self._random_params(self._rng(bundle), bundle.stage), bundle)

    def _modify_script(self, bundle: PromptBundle) -> str:
        rng = self._rng(bundle)
        ranges = self._ranges(bundle.stage)
        blocks = [p for p in (script_params(c) for c in _CODE_BLOCK.findall(bundle.text)) if p is not None]
        if not blocks:
            return self._render(self._random_params(rng, bundle.stage), bundle)
        text = bundle.text
        if "Suggest a subtle mutation" in text:
            params = dict(blocks[0])
            key = list(ranges)[int(rng.integers(len(ranges)))]
            lo, hi = ranges[key]
            params[key] = params.get(key, lo) + float(rng.normal(0, 0.1 * (hi - lo)))
        elif "Combine these two sets" in text:
            a, b = blocks[0], blocks[-1]
            params = {k: a.get(k, 0) if rng.random() < 0.5 else b.get(k, 0) for k in ranges}
        elif "as much different as possible from parent" in text:
            params = self._random_params(rng, bundle.stage)
        elif "share the same idea" in text:
            a, b = blocks[0], blocks[-1]
            params = {k: (a.get(k, 0) + b.get(k, 0)) / 2 + float(rng.normal(0, 0.05 * (hi - lo)))
                      for k, (lo, hi) in ranges.items()}
        else:  # reflect: refine the best listed heuristic
            params = {k: blocks[0].get(k, 0) + float(rng.normal(0, 0.03 * (hi - lo))) for k, (lo, hi) in ranges.items()}
        return self._render(params, bundle)

    def _fix_script(self, bundle: PromptBundle) -> str:
        blocks = _CODE_BLOCK.findall(bundle.text)
        params = script_params(blocks[0]) if blocks else None
        if params is None:
            params = self._random_params(self._rng(bundle), bundle.stage)
        return self._render(params, bundle)

    # messages --------------------------------------------------------------
    @staticmethod
    def _mechanism(text: str) -> str:
        if "primarily uses **economic incentives**" in text:
            return "economic"
        if "employ **behavioral economics levers**" in text:
            return "behavioral"
        return "generic"

    def _random_message(self, rng, mechanism: str) -> tuple[dict, dict]:
        offer, levers = {}, {}
        if mechanism in ("economic", "generic"):
            offer = {k: round(float(rng.uniform(0, 0.6)), 2) for k, _ in OFFER_FIELDS}
            offer["payment"] = round(float(rng.uniform(0, 100)))
        if mechanism in ("behavioral", "generic"):
            levers = {"neighbours": float(rng.integers(0, 4))}
            levers.update({k: float(rng.random() < 0.5) for k in LEVER_SENTENCES})
        return offer, levers

    def _wrap(self, offer, levers) -> str:
        return "Reasoning: the offer targets the farmer's main concerns.\n\n" + embed_message(render_message(offer, levers))

    def _generate_message(self, bundle: PromptBundle) -> str:
        return self._wrap(*self._random_message(self._rng(bundle), self._mechanism(bundle.text)))

    def _parent_messages(self, text: str) -> list[str]:
        if "Parent 1:" in text:
            m = re.search(r"Parent 1: (.*?)\nParent 2: (.*?)\n\n", text, re.DOTALL)
            return [m.group(1), m.group(2)] if m else []
        m = re.search(r"landscape connectivity:\n(.*?)\n\nSuggest a subtle mutation", text, re.DOTALL)
        if m:
            return [m.group(1)]
        return re.findall(r"Message \d+ \(fitness [^)]*\): (.*?)(?=\n\nMessage \d+ |, please analyze)", text, re.DOTALL)

    def _modify_message(self, bundle: PromptBundle) -> str:
        rng = self._rng(bundle)
        text = bundle.text
        mechanism = self._mechanism(text)
        parents = [(parse_offer(m), message_levers(m)) for m in self._parent_messages(text)]
        if not parents or "as much different as possible from parent" in text:
            return self._wrap(*self._random_message(rng, mechanism))
        offer, levers = dict(parents[0][0]), dict(parents[0][1])
        if "Combine these two sets" in text or "share the same idea" in text:
            o2, l2 = parents[-1]
            for k in set(offer) | set(o2):
                offer[k] = (offer.get(k, 0.0) + o2.get(k, 0.0)) / 2
            for k in set(levers) | set(l2):
                levers[k] = max(levers.get(k, 0.0), l2.get(k, 0.0))
        step = 0.3 if "Suggest a subtle mutation" in text else 0.1
        for k in list(offer):
            hi = 150.0 if k == "payment" else 1.0
            offer[k] = float(min(hi, max(0.0, offer[k] + rng.normal(0, step * hi))))
        if levers:
            if rng.random() < step * 2:
                name = list(LEVER_SENTENCES)[int(rng.integers(len(LEVER_SENTENCES)))]
                levers[name] = 1.0 - levers.get(name, 0.0)
            levers["neighbours"] = float(min(5, max(0, levers.get("neighbours", 0) + int(rng.integers(-1, 2)))))
        return self._wrap(offer, levers)

    def _farm_response(self, bundle: PromptBundle) -> str:
        text = bundle.text
        persona = "generic"
        catalog = default_catalog()
        for name in ("resistant", "economic", "social"):
            if catalog.block(f"personas.{name}") in text:
                persona = name
        blocks = _CODE_BLOCK.findall(text)
        baseline = blocks[-1] if blocks else ""
        m = re.search(r"Message from the policy professional is: (.*)\.\Z", text, re.DOTALL)
        message = m.group(1) if m else ""
        weight = persona_weight(persona, parse_offer(message), message_levers(message))
        if weight <= 0:
            return f"I will keep my current approach.\n\n```python\n{baseline}```\n"
        return f"I will adjust my plan.\n\n```python\n{append_adjustment(baseline, weight)}```\n"

    # explanations ----------------------------------------------------------
    def _explain(self, bundle: PromptBundle) -> str:
        params = [script_params(c) for c in _CODE_BLOCK.findall(bundle.text)]
        params = [p for p in params if p]
        lines = [f"The group holds {len(params)} parameterised programs, ordered from weakest to strongest."]
        if len(params) >= 2:
            first, last = params[0], params[-1]
            for k in sorted(set(first) & set(last)):
                if last[k] == first[k]:
                    lines.append(f"- {k} stays at {first[k]:.4g}.")
                else:
                    trend = "rises" if last[k] > first[k] else "falls"
                    lines.append(f"- {k} {trend} from {first[k]:.4g} to {last[k]:.4g}.")
        return "\n".join(lines)

    def _merge(self, bundle: PromptBundle) -> str:
        m = re.search(r"previous summary of insights:\n(.*?)\nAdditionally, here is the new explanation for the current group:\n(.*?)\nTask Background:",
                      bundle.text, re.DOTALL)
        prev, new = (m.group(1).strip(), m.group(2).strip()) if m else ("", "")
        merged = [line for line in prev.splitlines() if line.strip()]
        for line in new.splitlines():
            if line.strip() and line not in merged:
                merged.append(line)
        return "\n".join(merged)


def offline_provider(seed: int = 0, prices: Mapping[str, float] | None = None):
    from .llm_gateway import ScriptedProvider

    return ScriptedProvider(OfflineStrategy(seed, prices), name="offline")

