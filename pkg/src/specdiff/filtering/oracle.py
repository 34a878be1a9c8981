"""Semantic-equivalence oracles for divergent field values."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx

from ..errors import ConfigError, OracleError
from ..schema import SchemaNode, schema_to_json
from .diff import marker_json

log = logging.getLogger(__name__)

API_KEY_ENV = "ORACLE_API_KEY"
_SECTION = re.compile(r"^\[(\w+)\]\s*$", re.M)


@dataclass(frozen=True)
class OracleAnswer:
    semantically_equivalent: bool
    reason: str


class EquivalenceOracle(Protocol):
    name: str

    def judge(self, schema: SchemaNode, values: dict[int, Any]) -> OracleAnswer:
        """Raise :class:`OracleError` when no verdict can be produced."""


def load_template(name: str = "oracle_prompt.txt") -> dict[str, str]:
    text = resources.files("specdiff.data").joinpath(name).read_text(encoding="utf-8")
    parts = _SECTION.split(text)
    return {parts[i]: parts[i + 1].strip() for i in range(1, len(parts) - 1, 2)}


def build_messages(schema: SchemaNode, values: dict[int, Any], template: dict[str, str] | None = None) -> list[dict]:
    """Chat messages asking whether ``values`` are equivalent under ``schema``."""
    t = template or load_template()
    responses = [{"endpoint": e, "value": marker_json(v)} for e, v in sorted(values.items())]
    user = "\n\n".join([
        "Task: " + t["task"],
        "Instructions:\n" + t["instructions"],
        "Input format: " + t["input"],
        "Output format: " + t["output"],
        "Note: " + t["note"],
        "Target API JSON Schema:\n" + json.dumps(schema_to_json(schema), sort_keys=True, indent=2),
        "Client JSON Responses:\n" + json.dumps(responses, sort_keys=True, indent=2),
    ])
    return [{"role": "system", "content": t["system"]}, {"role": "user", "content": user}]


def parse_answer(content: str) -> OracleAnswer:
    """Strict parse of the oracle reply; anything else is an :class:`OracleError`."""
    try:
        doc = json.loads(content.strip())
    except (ValueError, AttributeError) as exc:
        raise OracleError(f"oracle reply is not JSON: {content!r:.200}") from exc
    if not isinstance(doc, dict) or set(doc) != {"semantically_equivalent", "reason"}:
        raise OracleError(f"oracle reply has wrong shape: {content!r:.200}")
    if not isinstance(doc["semantically_equivalent"], bool) or not isinstance(doc["reason"], str):
        raise OracleError(f"oracle reply has wrong types: {content!r:.200}")
    return OracleAnswer(doc["semantically_equivalent"], doc["reason"])


class StubFalseOracle:
    """Never equivalent; makes the filter conservative and deterministic."""

    name = "stub_false"

    def judge(self, schema, values):
        return OracleAnswer(False, "stub")


class UnavailableOracle:
    name = "unavailable"

    def judge(self, schema, values):
        raise OracleError("oracle disabled")


def _key(value: Any) -> str:
    return json.dumps(marker_json(value), sort_keys=True)


class LookupOracle:
    """Equivalent exactly when all distinct values fall in one listed group.

    The lookup file holds ``{"groups": [[v1, v2, ...], ...]}``.
    """

    name = "stub_lookup"

    def __init__(self, groups: Sequence[Sequence[Any]]):
        self.groups = [frozenset(_key(v) for v in g) for g in groups]

    @classmethod
    def load(cls, path: str | Path) -> "LookupOracle":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read oracle lookup file {path}: {exc}") from exc
        groups = doc.get("groups") if isinstance(doc, dict) else doc
        if not isinstance(groups, list) or not all(isinstance(g, list) for g in groups):
            raise ConfigError(f"{path}: expected {{\"groups\": [[...], ...]}}")
        return cls(groups)

    def judge(self, schema, values):
        distinct = {_key(v) for v in values.values()}
        if any(distinct <= g for g in self.groups):
            return OracleAnswer(True, "values listed as equivalent")
        return OracleAnswer(False, "no equivalence group covers these values")


class ExternalOracle:
    """OpenAI-compatible chat-completions backend.

    The request uses temperature 0; a malformed reply is retried once.
    The API key is read from the environment and never logged.
    """

    name = "external"

    def __init__(self, base_url: str, model: str, *, api_key_env: str = API_KEY_ENV, temperature: float = 0.0,
                 timeout_s: float = 60.0, client: httpx.Client | None = None):
        if not base_url or not model:
            raise ConfigError("external oracle needs a base URL and a model name")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.client = client or httpx.Client(timeout=timeout_s)

    def _complete(self, messages: list[dict]) -> str:
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {"model": self.model, "temperature": self.temperature, "messages": messages}
        try:
            resp = self.client.post(self.url, json=body, headers=headers)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except httpx.HTTPError as exc:
            raise OracleError(f"oracle request failed: {type(exc).__name__}") from exc
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise OracleError("oracle response lacks choices[0].message.content") from exc

    def _ask(self, messages: list[dict], parse):
        last: OracleError | None = None
        for attempt in range(2):
            content = self._complete(messages)
            try:
                return parse(content)
            except OracleError as exc:
                log.warning("malformed oracle reply (attempt %d)", attempt + 1)
                last = exc
        raise last

    def judge(self, schema, values):
        return self._ask(build_messages(schema, values), parse_answer)

    def classify_field(self, method, field_path: str, node: SchemaNode) -> dict:
        t = load_template("classifier_prompt.txt")
        user = "\n\n".join([
            "Task: " + t["task"], "Instructions:\n" + t["instructions"], "Input format: " + t["input"],
            "Output format: " + t["output"], "Note: " + t["note"],
            f"Method: {method.name}\nField path: {field_path or '/'}\nField schema:\n"
            + json.dumps(schema_to_json(node), sort_keys=True, indent=2),
        ])
        messages = [{"role": "system", "content": t["system"]}, {"role": "user", "content": user}]

        def parse(content: str) -> dict:
            try:
                doc = json.loads(content.strip())
            except ValueError as exc:
                raise OracleError("classifier reply is not JSON") from exc
            if not isinstance(doc, dict) or "policy" not in doc:
                raise OracleError("classifier reply lacks a policy")
            return doc

        return self._ask(messages, parse)


class ConsensusOracle:
    """Equivalent only when every backend agrees it is."""

    name = "consensus"

    def __init__(self, backends: Sequence[EquivalenceOracle]):
        if not backends:
            raise ConfigError("consensus oracle needs at least one backend")
        self.backends = list(backends)

    def judge(self, schema, values):
        answers = [b.judge(schema, values) for b in self.backends]
        if all(a.semantically_equivalent for a in answers):
            return OracleAnswer(True, "; ".join(a.reason for a in answers))
        dissent = next(a for a in answers if not a.semantically_equivalent)
        return OracleAnswer(False, dissent.reason)


class CachingOracle:
    """Memoises verdicts (and failures) per schema and value set."""

    def __init__(self, inner: EquivalenceOracle):
        self.inner = inner
        self.name = inner.name
        self._cache: dict[str, OracleAnswer | OracleError] = {}
        self._lock = threading.Lock()
        self.calls = 0

    def judge(self, schema, values):
        key = json.dumps([schema_to_json(schema), [_key(v) for _, v in sorted(values.items())]], sort_keys=True)
        with self._lock:
            hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            try:
                hit = self.inner.judge(schema, values)
            except OracleError as exc:
                hit = exc
            with self._lock:
                self._cache[key] = hit
        if isinstance(hit, OracleError):
            raise hit
        return hit


@dataclass(frozen=True)
class OracleConfig:
    mode: str = "stub_false"
    base_url: str | None = None
    model: str | None = None
    api_key_env: str = API_KEY_ENV
    temperature: float = 0.0
    max_parallel: int = 4


def make_oracle(config: OracleConfig) -> EquivalenceOracle:
    """Build an oracle from a mode string.

    Modes: ``stub_false``, ``stub_lookup:<file>``, ``external``,
    ``unavailable`` and ``consensus:<mode>+<mode>...``.
    """
    mode = config.mode
    if mode == "stub_false":
        return StubFalseOracle()
    if mode == "unavailable":
        return UnavailableOracle()
    if mode.startswith("stub_lookup:"):
        return LookupOracle.load(mode.split(":", 1)[1])
    if mode == "external":
        return ExternalOracle(config.base_url or "", config.model or "", api_key_env=config.api_key_env,
                              temperature=config.temperature)
    if mode.startswith("consensus:"):
        parts = [p for p in mode.split(":", 1)[1].split("+") if p]
        return ConsensusOracle([make_oracle(OracleConfig(p, config.base_url, config.model, config.api_key_env,
                                                         config.temperature)) for p in parts])
    raise ConfigError(f"unknown oracle mode {mode!r}")
