"""Live-state facts and semantic enrichment of generated requests.

Facts are harvested from one reference endpoint per layer through the
source calls listed in a rule file, then used to replace generated
parameter values with entities that exist on the chain.
"""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any

import httpx

from .errors import ConfigError, EmptyFactStoreError, FactError, MissingAnchorError
from .generate import SEMANTIC_VALID, SYNTACTIC_VALID, TestRequest, build_request, decode_params, decode_wire, render
from .harness import Endpoint, call_jsonrpc, call_rest
from .schema import SchemaNode, split_pointer, validate_value
from .spec import ApiSpec, MethodSpec, Param

log = logging.getLogger(__name__)

SLOTS_PER_EPOCH = 8
FANOUT_LIMIT = 8
TEMPLATE_PREFIX = "$fact:"

# param types mutated over a numeric range rather than drawn from the store
RANGE_ANCHORS = {
    "block_number": "block",
    "state_id.slot": "slot",
    "block_id.slot": "slot",
    "epoch": "epoch",
}


def _hex_to_int(v: Any) -> int:
    return int(v, 16)


def _str_to_int(v: Any) -> int:
    return int(v)


def _slot_to_epoch(v: Any) -> int:
    return int(v) // SLOTS_PER_EPOCH


TRANSFORMS = {"hex_to_int": _hex_to_int, "str_to_int": _str_to_int, "slot_to_epoch": _slot_to_epoch}


@dataclass(frozen=True)
class FactRule:
    param_type: str
    layer: str
    source_method: str
    extraction_path: str
    post_transform: str | None = None
    params: list | None = None
    path: str | None = None
    body: Any = None
    external: bool = False

    def __post_init__(self) -> None:
        if not self.param_type:
            raise ConfigError("fact rule needs a param_type")
        if self.layer not in ("EL", "CL"):
            raise ConfigError(f"fact rule {self.param_type}: layer must be EL or CL")
        if self.post_transform is not None and self.post_transform not in TRANSFORMS:
            raise ConfigError(f"fact rule {self.param_type}: unknown transform {self.post_transform!r}")
        if self.layer == "CL" and not self.path:
            raise ConfigError(f"fact rule {self.param_type}: CL rules need a request path")

    @property
    def key(self) -> str:
        return f"{self.param_type}<-{self.source_method}{self.extraction_path}"

    @property
    def template(self) -> str | None:
        for v in self.params or ():
            if isinstance(v, str) and v.startswith(TEMPLATE_PREFIX):
                return v[len(TEMPLATE_PREFIX):]
        if self.path and TEMPLATE_PREFIX in self.path:
            return self.path.split(TEMPLATE_PREFIX, 1)[1].split("/", 1)[0]
        return None


def load_rules(path: str | Path | None = None) -> list[FactRule]:
    if path is None:
        text = resources.files("specdiff").joinpath("data/fact_rules.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ConfigError("fact-rule file must hold a JSON array")
    return [FactRule(**r) for r in raw]


def active_rules(rules: list[FactRule], spec: ApiSpec | None) -> list[FactRule]:
    """Rules whose source method is in ``spec`` or declared external."""
    if spec is None:
        return list(rules)
    keep = [r for r in rules if r.external or r.source_method in spec.methods]
    for r in rules:
        if r not in keep:
            log.debug("fact rule %s is dormant: %s not in the active spec", r.key, r.source_method)
    return keep


@dataclass(frozen=True)
class FactStore:
    facts: dict[str, list] = field(default_factory=dict)
    captured_at: dict[str, str] = field(default_factory=dict)
    current_slot: int | None = None
    current_block: int | None = None
    failures: dict[str, str] = field(default_factory=dict)
    cl_types: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        for k, v in self.facts.items():
            if not v:
                raise FactError(f"fact list for {k!r} is empty")
        if self.current_slot is None and any(t in self.cl_types for t in self.facts):
            raise FactError("CL facts present without a current slot")

    def has(self, param_type: str) -> bool:
        anchor = RANGE_ANCHORS.get(param_type)
        if anchor is not None:
            try:
                self.anchor(anchor)
                return True
            except MissingAnchorError:
                return False
        return bool(self.facts.get(param_type))

    def anchor(self, name: str) -> int:
        if name == "block":
            value = self.current_block
        elif name == "slot":
            value = self.current_slot
        elif self.facts.get("epoch"):
            value = max(self.facts["epoch"])
        elif self.current_slot is not None:
            value = self.current_slot // SLOTS_PER_EPOCH
        else:
            value = None
        if value is None or value < 1:
            raise MissingAnchorError(f"no usable {name} anchor in the fact store")
        return value

    def merged(self, other: "FactStore") -> "FactStore":
        facts = {k: list(v) for k, v in self.facts.items()}
        for k, v in other.facts.items():
            facts[k] = _unique(facts.get(k, []) + list(v))
        return FactStore(
            facts=facts,
            captured_at={**self.captured_at, **other.captured_at},
            current_slot=other.current_slot if other.current_slot is not None else self.current_slot,
            current_block=other.current_block if other.current_block is not None else self.current_block,
            failures={**self.failures, **other.failures},
            cl_types=self.cl_types | other.cl_types,
        )

    def to_json(self) -> dict:
        return {
            "facts": self.facts,
            "captured_at": self.captured_at,
            "current_slot": self.current_slot,
            "current_block": self.current_block,
            "failures": self.failures,
            "cl_types": sorted(self.cl_types),
        }

    @classmethod
    def from_json(cls, data: dict) -> "FactStore":
        return cls(
            facts={k: list(v) for k, v in data.get("facts", {}).items()},
            captured_at=dict(data.get("captured_at", {})),
            current_slot=data.get("current_slot"),
            current_block=data.get("current_block"),
            failures=dict(data.get("failures", {})),
            cl_types=frozenset(data.get("cl_types", ())),
        )


def _unique(values: list) -> list:
    out: list = []
    seen: set[str] = set()
    for v in values:
        key = json.dumps(v, sort_keys=True)
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out


def extract_pointer(doc: Any, pointer: str) -> list:
    """Values at ``pointer``; a ``*`` token fans out over array items or object values."""
    current = [doc]
    for token in split_pointer(pointer):
        nxt = []
        for node in current:
            if token == "*":
                if isinstance(node, list):
                    nxt.extend(node)
                elif isinstance(node, dict):
                    nxt.extend(node.values())
            elif isinstance(node, dict) and token in node:
                nxt.append(node[token])
            elif isinstance(node, list) and token.isdigit() and int(token) < len(node):
                nxt.append(node[int(token)])
        current = nxt
    return current


def _substitute(value: Any, fact_type: str, fact: Any) -> Any:
    marker = TEMPLATE_PREFIX + fact_type
    if value == marker:
        return fact
    if isinstance(value, str) and marker in value:
        return value.replace(marker, render(fact))
    if isinstance(value, list):
        return [_substitute(v, fact_type, fact) for v in value]
    return value


def _call(client: httpx.Client, endpoint: Endpoint, rule: FactRule, fact_type: str | None, fact: Any) -> Any:
    if rule.layer == "EL":
        params = list(rule.params or [])
        if fact_type is not None:
            params = _substitute(params, fact_type, fact)
        envelope = call_jsonrpc(client, endpoint, rule.source_method, params)
        if not isinstance(envelope, dict) or "error" in envelope:
            err = envelope.get("error") if isinstance(envelope, dict) else envelope
            raise FactError(f"{rule.source_method} returned error {err!r}")
        return envelope
    path = _substitute(rule.path, fact_type, fact) if fact_type is not None else rule.path
    status, body = call_rest(client, endpoint, path, rule.body, "POST" if rule.body is not None else "GET")
    if status != 200:
        raise FactError(f"{rule.source_method} {path} returned HTTP {status}")
    return body


def _apply_rule(client: httpx.Client, endpoint: Endpoint, rule: FactRule, facts: dict[str, list],
                max_workers: int) -> list:
    fact_type = rule.template
    if fact_type is not None:
        inputs = facts.get(fact_type, [])[:FANOUT_LIMIT]
        if not inputs:
            raise FactError(f"template needs facts of type {fact_type!r}, none extracted yet")
    else:
        inputs = [None]
    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(inputs)))) as pool:
        bodies = list(pool.map(lambda f: _call(client, endpoint, rule, fact_type, f), inputs))
    transform = TRANSFORMS.get(rule.post_transform) if rule.post_transform else None
    values = []
    for body in bodies:
        for v in extract_pointer(body, rule.extraction_path):
            if v is None:
                continue
            values.append(transform(v) if transform else v)
    if not values:
        raise FactError(f"nothing found at {rule.extraction_path}")
    return values


def extract_facts(rules: list[FactRule], endpoint: Endpoint, *, client: httpx.Client | None = None,
                  max_workers: int = 4) -> FactStore:
    """Run every rule of ``endpoint``'s layer against it, in file order.

    Later rules may template on facts gathered by earlier ones.  A failing
    rule is recorded and skipped; if every rule fails the store would be
    useless and :class:`EmptyFactStoreError` is raised.
    """
    mine = [r for r in rules if r.layer == endpoint.layer]
    if not mine:
        return FactStore()
    facts: dict[str, list] = {}
    captured: dict[str, str] = {}
    failures: dict[str, str] = {}
    own = client is None
    client = client or httpx.Client()
    try:
        for rule in mine:
            try:
                values = _apply_rule(client, endpoint, rule, facts, max_workers)
            except (FactError, httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
                failures[rule.key] = str(exc) or type(exc).__name__
                log.info("fact rule %s failed: %s", rule.key, failures[rule.key])
                continue
            facts[rule.param_type] = _unique(facts.get(rule.param_type, []) + values)
            captured[rule.param_type] = datetime.now(timezone.utc).isoformat()
        if len(failures) == len(mine):
            raise EmptyFactStoreError(f"all {len(mine)} fact rules failed against {endpoint.label}")
        current_block = current_slot = None
        if endpoint.layer == "EL":
            if facts.get("block_number"):
                current_block = max(facts["block_number"])
            else:
                current_block = int(call_jsonrpc(client, endpoint, "eth_blockNumber", [])["result"], 16)
        else:
            slots = facts.get("state_id.slot", []) + facts.get("block_id.slot", [])
            if slots:
                current_slot = max(slots)
            else:
                _, body = call_rest(client, endpoint, "/eth/v1/beacon/headers/head")
                current_slot = int(body["data"]["header"]["message"]["slot"])
    finally:
        if own:
            client.close()
    cl_types = frozenset(facts) if endpoint.layer == "CL" else frozenset()
    return FactStore(facts, captured, current_slot, current_block, failures, cl_types)


# -- mutation and enrichment -------------------------------------------------

def mutate_semantic(param_type: str, store: FactStore, rng: random.Random) -> Any:
    """A plausible value for ``param_type`` given the stored chain state.

    Counters (slots, epochs, block numbers) are drawn uniformly from
    ``[1, anchor]``; identifiers are drawn verbatim from the store.
    """
    anchor = RANGE_ANCHORS.get(param_type)
    if anchor is not None:
        return rng.randint(1, store.anchor(anchor))
    values = store.facts.get(param_type)
    if not values:
        raise MissingAnchorError(f"no stored facts of type {param_type!r}")
    return rng.choice(values)


def _encodings(value: Any) -> list[Any]:
    if isinstance(value, bool):
        return [value]
    if isinstance(value, int):
        return [value, str(value), hex(value)]
    return [value]


def _fits(param: Param, value: Any) -> bool:
    if param.location in ("path", "query"):
        return validate_value(param.schema, decode_wire(render(value), param.schema))
    return validate_value(param.schema, value)


def _is_tag(schema: SchemaNode, value: Any) -> bool:
    branches = schema.any_of if schema.any_of is not None else (schema,)
    return any(b.enum_values is not None and b.pattern is None and value in b.enum_values for b in branches)


def enrich(request: TestRequest, store: FactStore, rng: random.Random, method: MethodSpec) -> TestRequest:
    """Swap bound parameters for stored or mutated facts.

    Enum tags such as ``"latest"`` already name a live entity and are kept.
    When no bound parameter could be filled the request comes back
    unchanged, still ``syntactic_valid``, with a degrade note.
    """
    if request.validity != SYNTACTIC_VALID:
        raise FactError(f"only syntactic_valid requests can be enriched, got {request.validity}")
    values, extras = decode_params(method, request)
    used: dict[str, dict] = {}
    for p in method.params:
        if not p.semantic_types or p.name not in values:
            continue
        if _is_tag(p.schema, values[p.name]):
            continue
        candidates = [t for t in p.semantic_types if store.has(t)]
        rng.shuffle(candidates)
        for t in candidates:
            raw = mutate_semantic(t, store, rng)
            encoded = next((e for e in _encodings(raw) if _fits(p, e)), _MISSING)
            if encoded is _MISSING:
                continue
            values[p.name] = encoded
            used[p.name] = {"type": t, "source": "mutation" if t in RANGE_ANCHORS else "fact"}
            break
    prov = dict(request.provenance)
    if not used:
        prov["degraded"] = "no facts for any bound parameter"
        log.debug("request %d (%s) stays syntactic_valid: no facts", request.request_id, request.method)
        return replace(request, provenance=prov)
    trace = {k: v for k, v in prov.get("anyOf", {}).items() if k not in used}
    if trace:
        prov["anyOf"] = trace
    else:
        prov.pop("anyOf", None)
    prov["facts"] = used
    out = build_request(method, values, request_id=request.request_id, validity=SEMANTIC_VALID,
                        seed=request.seed, provenance=prov, extra_positional=extras or None)
    return out


_MISSING = object()


def extract_for_fleet(rules: list[FactRule], fleet: list[Endpoint], spec: ApiSpec | None = None,
                      client: httpx.Client | None = None) -> FactStore:
    """Facts from the lowest-id endpoint of each layer present in ``fleet``."""
    rules = active_rules(rules, spec)
    store = FactStore()
    for layer in ("EL", "CL"):
        refs = sorted((e for e in fleet if e.layer == layer), key=lambda e: e.endpoint_id)
        layer_rules = [r for r in rules if r.layer == layer]
        if refs and layer_rules:
            start = time.perf_counter()
            store = store.merged(extract_facts(layer_rules, refs[0], client=client))
            log.info("extracted %s facts from %s in %.0f ms", layer, refs[0].label,
                     (time.perf_counter() - start) * 1000)
    return store
