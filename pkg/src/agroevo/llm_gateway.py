"""Prompt composition, response extraction and model providers.

Prompt text lives in ``data/prompt_catalog.yaml``: named blocks with
``{{slot}}`` placeholders and one composition per (role, stage). Composition
is a pure function of (role, stage, context).

Providers take a PromptBundle and return raw text. ``complete`` wraps a
provider with retries, rate limiting, extraction and a JSONL audit log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence

import yaml

logger = logging.getLogger(__name__)


class Role(str, Enum):
    GENERATOR = "generator"
    MODIFIER = "modifier"
    FIXER = "fixer"
    POLICY_GENERATOR = "policy_generator"
    POLICY_MODIFIER = "policy_modifier"
    FARM_SIM = "farm_sim"
    EXPLAINER = "explainer"
    MERGER = "merger"


class Stage(str, Enum):
    BASELINE = "baseline"
    GLOBAL = "global"
    NUDGE = "nudge"


CODE_ROLES = frozenset({Role.GENERATOR, Role.MODIFIER, Role.FIXER, Role.FARM_SIM})
MESSAGE_ROLES = frozenset({Role.POLICY_GENERATOR, Role.POLICY_MODIFIER})


class PromptCompositionError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "prompt composition failed"


class ExtractionError(ValueError):
    pass


class ProviderError(RuntimeError):
    pass


class TransientProviderError(ProviderError):
    """A failure worth retrying (timeouts, 429, 5xx)."""


# ---------------------------------------------------------------------------
# Template catalog
# ---------------------------------------------------------------------------

_SLOT = re.compile(r"\{\{(\w+)\}\}")
_NAME_SLOT = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class TemplateCatalog:
    version: int
    blocks: Mapping[str, str]
    compositions: Mapping[str, tuple[str, tuple[str, ...]]]

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "TemplateCatalog":
        blocks = {}
        for group, entries in doc["blocks"].items():
            for name, text in entries.items():
                blocks[f"{group}.{name}"] = text or ""
        compositions = {}
        for key, spec in doc["compositions"].items():
            if isinstance(spec, list):
                compositions[key] = ("\n\n", tuple(spec))
            else:
                compositions[key] = (spec.get("joiner", "\n\n"), tuple(spec["blocks"]))
        return cls(int(doc.get("version", 1)), blocks, compositions)

    @classmethod
    def load(cls, path: str | Path) -> "TemplateCatalog":
        return cls.from_document(yaml.safe_load(Path(path).read_text()))

    def block(self, name: str) -> str:
        try:
            return self.blocks[name]
        except KeyError:
            raise PromptCompositionError(f"unknown template block {name!r}") from None

    def composition(self, role: Role, stage: Stage) -> tuple[str, tuple[str, ...]]:
        key = f"{role.value}/{stage.value}"
        if key not in self.compositions:
            raise PromptCompositionError(f"no template for role {role.value!r} in stage {stage.value!r}")
        return self.compositions[key]


@lru_cache(maxsize=1)
def default_catalog() -> TemplateCatalog:
    text = resources.files("agroevo.data").joinpath("prompt_catalog.yaml").read_text()
    return TemplateCatalog.from_document(yaml.safe_load(text))


def persona_block(name: str, catalog: TemplateCatalog | None = None) -> str:
    return (catalog or default_catalog()).block(f"personas.{name}")


@dataclass(frozen=True)
class PromptBundle:
    role: Role
    stage: Stage
    text: str
    context_digest: str
    sample: int = 0

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("prompt text is empty")


def prompt_digest(role: Role | str, stage: Stage | str, text: str, sample: int = 0) -> str:
    """Cassette key. ``sample`` separates repeated draws from one prompt."""
    h = hashlib.sha256()
    parts = [Role(role).value, Stage(stage).value, text]
    if sample:
        parts.append(f"sample={sample}")
    for part in parts:
        h.update(part.encode())
        h.update(b"\x00")
    return h.hexdigest()


def _as_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=False)
    return str(value)


def format_neighbors(neighbors: Sequence[Mapping[str, Any]]) -> str:
    """ICL exemplar blocks, one per neighbour, in the given order."""
    parts = []
    for k, nb in enumerate(neighbors, start=1):
        parts.append(f"Neighbour {k}: input: {_as_text(nb['input'])}  Output: {_as_text(nb['output'])}\n\n")
    return "".join(parts)


def format_ranked(items: Sequence[tuple[str, float]], code: bool = True) -> str:
    """Top-k bodies with their fitness, best first (used by reflect)."""
    lines = []
    for i, (body, fit) in enumerate(items, start=1):
        if code:
            lines.append(f"Heuristic {i} (fitness {fit:.6g}):\n```python\n{body.rstrip()}\n```")
        else:
            lines.append(f"Message {i} (fitness {fit:.6g}): {body}")
    return "\n\n".join(lines)


def _derived_slots(role: Role, context: Mapping[str, Any], catalog: TemplateCatalog) -> dict[str, str]:
    slots = {k: _as_text(v) for k, v in context.items() if k not in ("neighbors", "parents", "top")}
    if "neighbors" in context:
        slots["icl_examples"] = format_neighbors(context["neighbors"])
    parents = context.get("parents")
    if parents:
        slots["parent_code"] = parents[0]
        slots["parent1"] = parents[0]
        if len(parents) > 1:
            slots["parent2"] = parents[1]
    if "top" in context:
        slots["heuristics_info"] = format_ranked(context["top"], code=role is not Role.POLICY_MODIFIER)
    if "crop_prices" in slots and "costs" in slots and "params_text" not in slots:
        slots["params_text"] = _fill(catalog.block("shared.params"), slots, "shared.params")
    return slots


_SOURCE_HINT = {"icl_examples": "neighbors", "parent_code": "parents", "parent1": "parents",
                "parent2": "parents", "heuristics_info": "top", "params_text": "crop_prices/costs"}


def _fill(template: str, slots: Mapping[str, str], block_name: str) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in slots:
            hint = f" (provide {_SOURCE_HINT[name]!r})" if name in _SOURCE_HINT else ""
            raise PromptCompositionError(f"missing slot {name!r} required by block {block_name!r}{hint}")
        return slots[name]

    return _SLOT.sub(sub, template)


def compose_prompt(
    role: Role | str,
    stage: Stage | str,
    context: Mapping[str, Any],
    catalog: TemplateCatalog | None = None,
    sample: int = 0,
) -> PromptBundle:
    role, stage = Role(role), Stage(stage)
    catalog = catalog or default_catalog()
    joiner, names = catalog.composition(role, stage)
    slots = _derived_slots(role, context, catalog)
    parts = []
    for raw_name in names:
        def name_sub(m: re.Match) -> str:
            key = m.group(1)
            if key not in slots:
                raise PromptCompositionError(f"missing slot {key!r} required to select block {raw_name!r}")
            return slots[key]

        name = _NAME_SLOT.sub(name_sub, raw_name)
        text = _fill(catalog.block(name), slots, name)
        if text:
            parts.append(text)
    text = joiner.join(parts)
    return PromptBundle(role, stage, text, prompt_digest(role, stage, text, sample), sample)


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"```[ \t]*([\w+-]*)[^\n]*\n(.*?)```", re.DOTALL)
_MARKER = "\\communication{"


def extract_code(raw: str) -> str:
    """Contents of the last fenced code block."""
    blocks = _FENCE.findall(raw or "")
    if not blocks:
        raise ExtractionError("no fenced code block in response")
    body = blocks[-1][1]
    if not body.strip():
        raise ExtractionError("last fenced code block is empty")
    return body.rstrip() + "\n"


def extract_message(raw: str) -> str:
    """Contents of the last top-level ``\\communication{...}`` block.

    Braces inside the block must balance; a block left open is ignored.
    """
    raw = raw or ""
    found = None
    i = 0
    while True:
        start = raw.find(_MARKER, i)
        if start < 0:
            break
        depth = 1
        j = start + len(_MARKER)
        while j < len(raw) and depth:
            if raw[j] == "{":
                depth += 1
            elif raw[j] == "}":
                depth -= 1
            j += 1
        if depth:
            break
        found = raw[start + len(_MARKER): j - 1]
        i = j
    if found is None:
        raise ExtractionError("no complete \\communication{...} block in response")
    return found.strip()


def embed_message(message: str) -> str:
    return f"{_MARKER}{message}}}"


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

@dataclass
class ProviderResponse:
    raw: str
    parsed: str | None = None
    usage: dict[str, int] = field(default_factory=dict)
    latency: float = 0.0
    attempts: int = 1
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.parsed is not None


@dataclass
class RawReply:
    text: str
    usage: dict[str, int] = field(default_factory=dict)


class Provider(Protocol):
    name: str

    def generate(self, bundle: PromptBundle) -> RawReply: ...


class ScriptedProvider:
    """Answers from a strategy function of the prompt bundle."""

    def __init__(self, strategy: Callable[[PromptBundle], str], name: str = "scripted") -> None:
        self.strategy = strategy
        self.name = name

    def generate(self, bundle: PromptBundle) -> RawReply:
        return RawReply(self.strategy(bundle))


class CassetteProvider:
    """Content-addressed replay store: ``<dir>/<digest>.json`` per prompt.

    On a miss, a ``fallback`` provider (if given) answers and its reply is
    recorded; otherwise the miss is a ProviderError.
    """

    def __init__(self, directory: str | Path, fallback: Provider | None = None, name: str = "cassette") -> None:
        self.directory = Path(directory)
        self.fallback = fallback
        self.name = name
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def record(self, bundle: PromptBundle, text: str, usage: Mapping[str, int] | None = None) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        doc = {"role": bundle.role.value, "stage": bundle.stage.value, "digest": bundle.context_digest,
               "response": text, "usage": dict(usage or {})}
        tmp = self.path_for(bundle.context_digest).with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=1))
        os.replace(tmp, self.path_for(bundle.context_digest))

    def generate(self, bundle: PromptBundle) -> RawReply:
        path = self.path_for(bundle.context_digest)
        if path.is_file():
            doc = json.loads(path.read_text())
            return RawReply(doc["response"], doc.get("usage", {}))
        if self.fallback is None:
            raise ProviderError(f"cassette miss for {bundle.role.value}/{bundle.stage.value} digest {bundle.context_digest[:12]}")
        reply = self.fallback.generate(bundle)
        with self._lock:
            self.record(bundle, reply.text, reply.usage)
        return reply


class OpenAICompatibleProvider:
    """Chat-completions endpoint over HTTP.

    Configured from arguments or ``AGROEVO_API_KEY``, ``AGROEVO_BASE_URL``,
    ``AGROEVO_MODEL`` and ``AGROEVO_TEMPERATURE``.
    """

    def __init__(self, model: str | None = None, base_url: str | None = None, api_key: str | None = None,
                 temperature: float | None = None, timeout: float = 120.0, name: str = "openai-compatible") -> None:
        import httpx

        self.model = model or os.environ.get("AGROEVO_MODEL", "gpt-4o")
        self.base_url = (base_url or os.environ.get("AGROEVO_BASE_URL", "https://api.openai.com/v1")).rstrip("/")
        self.api_key = api_key or os.environ.get("AGROEVO_API_KEY") or os.environ.get("OPENAI_API_KEY")
        if not self.api_key:
            raise ProviderError("no API key: set AGROEVO_API_KEY")
        t = temperature if temperature is not None else os.environ.get("AGROEVO_TEMPERATURE")
        self.temperature = float(t) if t is not None else None
        self.name = name
        self._client = httpx.Client(timeout=timeout)
        self._httpx = httpx

    def config(self) -> dict[str, Any]:
        return {"model": self.model, "base_url": self.base_url, "temperature": self.temperature}

    def generate(self, bundle: PromptBundle) -> RawReply:
        payload: dict[str, Any] = {"model": self.model, "messages": [{"role": "user", "content": bundle.text}]}
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        try:
            r = self._client.post(f"{self.base_url}/chat/completions", json=payload,
                                  headers={"Authorization": f"Bearer {self.api_key}"})
        except self._httpx.TransportError as exc:
            raise TransientProviderError(f"transport error: {exc}") from exc
        if r.status_code == 429 or r.status_code >= 500:
            raise TransientProviderError(f"HTTP {r.status_code}")
        if r.status_code != 200:
            raise ProviderError(f"HTTP {r.status_code}: {r.text[:300]}")
        doc = r.json()
        usage = {k: int(v) for k, v in (doc.get("usage") or {}).items() if isinstance(v, int)}
        return RawReply(doc["choices"][0]["message"]["content"] or "", usage)


# ---------------------------------------------------------------------------
# Call policy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 1.0
    factor: float = 2.0
    max_delay: float = 30.0

    def delay(self, attempt: int) -> float:
        """Back-off before retry number ``attempt`` (1-based)."""
        return min(self.max_delay, self.base_delay * self.factor ** (attempt - 1))


class RateLimiter:
    """Spaces calls at least ``1/rate`` seconds apart across threads."""

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = None

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            slot = now if self._next is None else max(now, self._next)
            self._next = slot + self.interval
        wait = slot - now
        if wait > 0:
            self._sleep(wait)


class AuditLog:
    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def write(self, entry: Mapping[str, Any]) -> None:
        line = json.dumps(dict(entry), sort_keys=True)
        with self._lock, self.path.open("a") as fh:
            fh.write(line + "\n")

    def entries(self) -> list[dict[str, Any]]:
        if not self.path.is_file():
            return []
        return [json.loads(l) for l in self.path.read_text().splitlines() if l.strip()]


def parse_response(role: Role, raw: str) -> str:
    if role in CODE_ROLES:
        return extract_code(raw)
    if role in MESSAGE_ROLES:
        return extract_message(raw)
    if not raw.strip():
        raise ExtractionError("empty response")
    return raw.strip()


def complete(
    provider: Provider,
    bundle: PromptBundle,
    retry_policy: RetryPolicy | None = None,
    rate_limiter: RateLimiter | None = None,
    audit: AuditLog | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ProviderResponse:
    """Call ``provider`` with retries on transient errors and extract the answer.

    Exhausted retries or a permanent error raise ProviderError. An answer that
    cannot be extracted comes back with ``parsed=None`` and ``error`` set.
    """
    policy = retry_policy or RetryPolicy()
    attempt = 0
    while True:
        attempt += 1
        if rate_limiter is not None:
            rate_limiter.acquire()
        start = time.monotonic()
        try:
            reply = provider.generate(bundle)
        except TransientProviderError as exc:
            latency = time.monotonic() - start
            _audit(audit, provider, bundle, attempt, latency, {}, f"transient: {exc}")
            if attempt >= policy.max_attempts:
                raise ProviderError(f"gave up after {attempt} attempts: {exc}") from exc
            sleep(policy.delay(attempt))
            continue
        except ProviderError as exc:
            _audit(audit, provider, bundle, attempt, time.monotonic() - start, {}, f"error: {exc}")
            raise
        latency = time.monotonic() - start
        try:
            parsed, error = parse_response(bundle.role, reply.text), None
        except ExtractionError as exc:
            parsed, error = None, str(exc)
        _audit(audit, provider, bundle, attempt, latency, reply.usage, error or "ok")
        return ProviderResponse(reply.text, parsed, dict(reply.usage), latency, attempt, error)


def _audit(audit, provider, bundle, attempt, latency, usage, outcome) -> None:
    if audit is None:
        return
    audit.write({"role": bundle.role.value, "stage": bundle.stage.value, "digest": bundle.context_digest,
                 "provider": getattr(provider, "name", type(provider).__name__), "attempt": attempt,
                 "latency": round(latency, 6), "usage": usage, "outcome": outcome, "time": time.time()})


class Gateway:
    """A provider plus its call policy, shared by all roles of a run."""

    def __init__(self, provider: Provider, retry_policy: RetryPolicy | None = None,
                 rate_limit: float | None = None, audit_path: str | Path | None = None,
                 catalog: TemplateCatalog | None = None, sleep: Callable[[float], None] = time.sleep) -> None:
        self.provider = provider
        self.retry_policy = retry_policy or RetryPolicy()
        self.rate_limiter = RateLimiter(rate_limit) if rate_limit else None
        self.audit = AuditLog(audit_path) if audit_path else None
        self.catalog = catalog or default_catalog()
        self._sleep = sleep

    def compose(self, role: Role | str, stage: Stage | str, sample: int = 0, **context: Any) -> PromptBundle:
        return compose_prompt(role, stage, context, self.catalog, sample)

    def ask(self, role: Role | str, stage: Stage | str, sample: int = 0, **context: Any) -> ProviderResponse:
        bundle = self.compose(role, stage, sample, **context)
        return complete(self.provider, bundle, self.retry_policy, self.rate_limiter, self.audit, self._sleep)
