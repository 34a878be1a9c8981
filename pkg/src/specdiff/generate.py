"""Schema-driven synthesis of valid and invalid test requests."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import random
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable
from urllib.parse import parse_qsl, quote, unquote, urlencode, urlsplit

from .errors import GenerationError, InapplicableCategoryError, UnsatisfiableSchemaError
from .regexgen import generate_matching
from .schema import SchemaNode, kind_matches, validate_value
from .spec import ApiSpec, MethodSpec, Param

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
MAX_ATTEMPTS = 64
MAX_STRING = 64
UNDEFINED_PARAM = "<undefined>"

SYNTACTIC_INVALID = "syntactic_invalid"
SYNTACTIC_VALID = "syntactic_valid"
SEMANTIC_VALID = "semantic_valid"


class InvalidCategory(str, enum.Enum):
    UNDEFINED_FIELD = "undefined_field"
    MISSING_REQUIRED = "missing_required"
    CONSTRAINT_VIOLATION = "constraint_violation"


def _code_point_pool() -> tuple[str, ...]:
    pool = [chr(c) for c in range(0x20, 0x7F)]
    pool += [chr(c) for c in range(0xA1, 0x180)]          # Latin-1 / Latin Extended-A
    pool += [chr(c) for c in range(0x391, 0x3CA)]         # Greek
    pool += [chr(c) for c in range(0x4E00, 0x4E40)]       # CJK
    pool += [chr(c) for c in range(0x1F600, 0x1F640)]     # emoji, outside the BMP
    pool += [chr(c) for c in range(0x20000, 0x20020)]     # CJK Ext-B, outside the BMP
    pool += [chr(c) for c in range(0x70960, 0x70970)]     # unassigned plane-7 code points
    return tuple(pool)


STRING_POOL = _code_point_pool()


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def method_seed(seed: int, method: str) -> int:
    return (seed ^ stable_hash(method)) & MASK64


def request_seed(seed: int, method: str, slot: int) -> int:
    return stable_hash(f"{method_seed(seed, method)}/{slot}")


@dataclass
class TestRequest:
    __test__ = False  # not a pytest class

    request_id: int
    method: str
    transport: str
    body: Any
    validity: str
    path: str | None = None
    fault_note: str | None = None
    seed: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def http_method(self) -> str:
        return "GET" if self.transport == "rest_get" else "POST"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TestRequest":
        return cls(**data)

    def wire_bytes(self) -> bytes | None:
        """The exact request body sent to every endpoint."""
        if self.body is None and self.transport != "jsonrpc_post":
            return None
        return json.dumps(self.body, separators=(",", ":"), ensure_ascii=True).encode()


@dataclass(frozen=True)
class TestMix:
    __test__ = False

    invalid: int = 5
    valid: int = 5
    semantic: int = 10

    def __post_init__(self) -> None:
        if min(self.invalid, self.valid, self.semantic) < 0:
            raise ValueError("mix counts must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "TestMix":
        parts = [int(p) for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"mix needs three comma-separated counts, got {text!r}")
        return cls(*parts)

    @property
    def total(self) -> int:
        return self.invalid + self.valid + self.semantic

    def __str__(self) -> str:
        return f"{self.invalid},{self.valid},{self.semantic}"


# -- values ------------------------------------------------------------------

def random_string(rng: random.Random, length: int | None = None) -> str:
    n = rng.randint(0, MAX_STRING) if length is None else length
    return "".join(rng.choice(STRING_POOL) for _ in range(n))


def random_json(rng: random.Random, depth: int = 2) -> Any:
    roll = rng.randrange(8 if depth > 0 else 6)
    if roll == 0:
        return None
    if roll == 1:
        return rng.random() < 0.5
    if roll == 2:
        return rng.randint(-(2 ** 31), 2 ** 31)
    if roll == 3:
        return round(rng.uniform(-1e7, 1e7), 3)
    if roll in (4, 5):
        return random_string(rng, rng.randint(0, 12))
    if roll == 6:
        return [random_json(rng, depth - 1) for _ in range(rng.randint(0, 3))]
    return {random_string(rng, rng.randint(1, 6)): random_json(rng, depth - 1) for _ in range(rng.randint(0, 3))}


def _draw(schema: SchemaNode, rng: random.Random, trace: dict, path: str) -> Any:
    if schema.enum_values is not None:
        options = [e for e in schema.enum_values if validate_value(schema, e)]
        if not options:
            raise UnsatisfiableSchemaError(f"no enum member satisfies the schema at {path or '/'}")
        return rng.choice(options)
    if schema.any_of is not None:
        index = rng.randrange(len(schema.any_of))
        trace[path or "/"] = index
        return _valid(schema.any_of[index], rng, trace, path)
    kind = schema.kind
    if kind == "string":
        if schema.pattern is not None:
            return generate_matching(schema.pattern, rng)
        return random_string(rng)
    if kind == "integer":
        return rng.randint(-16, 16) if rng.random() < 0.5 else rng.randint(-(2 ** 53), 2 ** 53)
    if kind == "number":
        return round(rng.uniform(-1e9, 1e9), rng.randint(0, 6))
    if kind == "boolean":
        return rng.random() < 0.5
    if kind == "null":
        return None
    if kind == "array":
        lo = schema.min_items or 0
        hi = schema.max_items if schema.max_items is not None else lo + 4
        hi = min(hi, lo + 16)
        item = schema.items or SchemaNode()
        return [_valid(item, rng, trace, f"{path}/{i}") for i in range(rng.randint(lo, hi))]
    if kind == "object":
        props = schema.properties or {}
        required = set(schema.required or ())
        out = {}
        for name, sub in props.items():
            if name in required or rng.random() < 0.5:
                out[name] = _valid(sub, rng, trace, f"{path}/{name}")
        return out
    return random_json(rng)


def _valid(schema: SchemaNode, rng: random.Random, trace: dict, path: str) -> Any:
    for _ in range(MAX_ATTEMPTS):
        local: dict = {}
        value = _draw(schema, rng, local, path)
        if validate_value(schema, value):
            trace.update(local)
            return value
    raise UnsatisfiableSchemaError(f"could not satisfy schema at {path or '/'} in {MAX_ATTEMPTS} attempts")


def gen_valid_value(schema: SchemaNode, rng: random.Random, trace: dict | None = None) -> Any:
    """A random value that satisfies ``schema``.

    anyOf branch choices are written into ``trace`` (path → branch index).
    """
    return _valid(schema, rng, trace if trace is not None else {}, "")


def json_type(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    return "object"


def _foreign_candidates(rng: random.Random) -> list[Any]:
    cands = [
        rng.random() < 0.5,
        rng.randint(-(2 ** 31), 2 ** 31),
        round(rng.uniform(-1e7, 1e7), 2) + 0.5,
        None,
        [random_json(rng, 1) for _ in range(rng.randint(0, 3))],
        {random_string(rng, rng.randint(1, 6)): random_json(rng, 1)},
        random_string(rng, rng.randint(1, 16)),
    ]
    rng.shuffle(cands)
    return cands


# -- wire encoding -----------------------------------------------------------

def render(value: Any) -> str:
    """Text form of a value in a URL path segment or query string."""
    if isinstance(value, str):
        return value
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False)


def decode_wire(text: str, schema: SchemaNode) -> Any:
    if validate_value(schema, text):
        return text
    try:
        parsed = json.loads(text)
    except ValueError:
        return text
    return parsed if validate_value(schema, parsed) else text


def _resolve_path(method: MethodSpec, values: dict[str, Any]) -> str:
    def fill(match: re.Match) -> str:
        name = match.group(1)
        if name not in values:
            return ""
        return quote(render(values[name]), safe="")

    path = re.sub(r"\{([^{}]+)\}", fill, method.path_template)
    query = [(p.name, render(values[p.name])) for p in method.params if p.location == "query" and p.name in values]
    query += [(k, render(v)) for k, v in values.items() if k.startswith("?")]
    if query:
        path += "?" + urlencode([(k.lstrip("?"), v) for k, v in query])
    return path


def build_request(method: MethodSpec, values: dict[str, Any], *, request_id: int, validity: str,
                  seed: int, fault_note: str | None = None, provenance: dict | None = None,
                  extra_positional: list | None = None) -> TestRequest:
    """Assemble a wire request from logical parameter values.

    ``values`` keeps insertion order.  For JSON-RPC it is emitted
    positionally; ``extra_positional`` entries are appended verbatim.  For
    REST, keys starting with ``?`` become undeclared query parameters.
    """
    if method.transport == "jsonrpc_post":
        params = list(values.values()) + list(extra_positional or [])
        body = {"id": request_id, "jsonrpc": "2.0", "method": method.name, "params": params}
        path = None
    else:
        body_param = next((p for p in method.params if p.location == "body"), None)
        body = values.get(body_param.name) if body_param is not None else None
        path = _resolve_path(method, values)
    return TestRequest(
        request_id=request_id, method=method.name, transport=method.transport, body=body,
        validity=validity, path=path, fault_note=fault_note, seed=seed,
        provenance=dict(provenance or {}),
    )


def decode_params(method: MethodSpec, request: TestRequest) -> tuple[dict[str, Any], list[Any]]:
    """Recover ``(declared values, undeclared extras)`` from a wire request."""
    if method.transport == "jsonrpc_post":
        params = request.body.get("params", []) if isinstance(request.body, dict) else []
        values = {p.name: v for p, v in zip(method.params, params)}
        return values, list(params[len(method.params):])
    split = urlsplit(request.path or "")
    template = re.escape(method.path_template)
    template = re.sub(r"\\\{([^{}]+)\\\}", lambda m: f"(?P<p{_slot(method, m.group(1))}>[^/]*)", template)
    match = re.fullmatch(template, split.path)
    values: dict[str, Any] = {}
    extras: list[Any] = []
    if match is None:
        extras.append(split.path)
    else:
        for p in method.params:
            if p.location == "path":
                text = unquote(match.group(f"p{_slot(method, p.name)}"))
                if text != "":
                    values[p.name] = decode_wire(text, p.schema)
    declared = {p.name: p for p in method.params if p.location == "query"}
    for k, v in parse_qsl(split.query, keep_blank_values=True):
        if k in declared:
            values[k] = decode_wire(v, declared[k].schema)
        else:
            extras.append({k: v})
    body_param = next((p for p in method.params if p.location == "body"), None)
    if body_param is not None and request.body is not None:
        values[body_param.name] = request.body
    elif body_param is None and request.body is not None:
        extras.append(request.body)
    return values, extras


def _slot(method: MethodSpec, name: str) -> int:
    return [p.name for p in method.params].index(name)


def params_valid(method: MethodSpec, request: TestRequest) -> bool:
    """True iff every parameter on the wire satisfies the method's schemas."""
    values, extras = decode_params(method, request)
    if extras:
        return False
    for p in method.params:
        if p.name in values:
            if not validate_value(p.schema, values[p.name]):
                return False
        elif p.required:
            return False
    if method.transport == "jsonrpc_post":
        # positional params cannot skip a slot
        sent = len(request.body.get("params", []))
        if any(p.required for p in method.params[sent:]):
            return False
    return True


# -- requests ----------------------------------------------------------------

def _valid_values(method: MethodSpec, rng: random.Random, trace: dict) -> dict[str, Any]:
    params = method.params
    if method.transport == "jsonrpc_post":
        last_required = max((i for i, p in enumerate(params) if p.required), default=-1)
        cut = rng.randint(last_required + 1, len(params))
        chosen = params[:cut]
    else:
        chosen = tuple(p for p in params if p.required or rng.random() < 0.5)
    values = {}
    for p in chosen:
        branch: dict = {}
        values[p.name] = gen_valid_value(p.schema, rng, branch)
        if branch:
            trace[p.name] = branch
    return values


def gen_valid_request(method: MethodSpec, rng: random.Random, *, request_id: int = 1, seed: int = 0) -> TestRequest:
    trace: dict = {}
    values = _valid_values(method, rng, trace)
    prov = {"anyOf": trace} if trace else {}
    return build_request(method, values, request_id=request_id, validity=SYNTACTIC_VALID, seed=seed, provenance=prov)


_NO_VALUE = object()


def _constrained(param: Param, rng: random.Random, original: Any, wire_text: bool) -> Any:
    """A value of another JSON type that ``param`` rejects, or ``_NO_VALUE``."""
    for cand in _foreign_candidates(rng):
        if json_type(cand) == json_type(original):
            continue
        if cand is None and param.location == "body":
            continue  # a null REST body goes out as no body at all
        if param.location == "path" and render(cand) == "":
            continue  # an empty segment reads as a missing value
        probe = decode_wire(render(cand), param.schema) if wire_text else cand
        if not validate_value(param.schema, probe):
            return cand
    return _NO_VALUE


def applicable_categories(method: MethodSpec) -> list[InvalidCategory]:
    cats = [InvalidCategory.UNDEFINED_FIELD]
    if any(p.required for p in method.params):
        cats.append(InvalidCategory.MISSING_REQUIRED)
    if any(_is_constrained(method, p) for p in method.params):
        cats.append(InvalidCategory.CONSTRAINT_VIOLATION)
    return cats


def _is_constrained(method: MethodSpec, p: Param) -> bool:
    wire_text = p.location in ("path", "query")
    probes: list[Any] = [True, 7, 2.5, None, [], {}, "", "x"]
    for v in probes:
        value = decode_wire(render(v), p.schema) if wire_text else v
        if not validate_value(p.schema, value):
            return True
    return False


def gen_invalid_request(method: MethodSpec, category: InvalidCategory | str, rng: random.Random, *,
                        request_id: int = 1, seed: int = 0) -> TestRequest:
    """A request that breaks exactly one rule of ``category``.

    The envelope (id, jsonrpc, method) or REST path shape is kept intact.
    """
    category = InvalidCategory(category)
    if category not in applicable_categories(method):
        raise InapplicableCategoryError(category.value, method.name)
    trace: dict = {}
    prov: dict[str, Any] = {"category": category.value}
    extra_positional: list | None = None

    if category is InvalidCategory.MISSING_REQUIRED:
        required = [p for p in method.params if p.required]
        target = rng.choice(required)
        if method.transport == "jsonrpc_post":
            # generate through the target so it exists before removal
            keep = max(i for i, p in enumerate(method.params) if p.required) + 1
            values = {p.name: gen_valid_value(p.schema, rng, trace) for p in method.params[:keep]}
        else:
            values = {p.name: gen_valid_value(p.schema, rng, trace) for p in method.params if p.required}
        del values[target.name]
        note = f"missing required: {target.name}"
        prov["target"] = target.name
    else:
        values = _valid_values(method, rng, trace)
        if category is InvalidCategory.UNDEFINED_FIELD:
            key = random_string(rng, rng.randint(1, 8))
            extra = random_json(rng, 2)
            body_param = next((p for p in method.params if p.location == "body"), None)
            if method.transport == "jsonrpc_post":
                extra_positional = [{key: extra}]
                note = f"undefined field: extra positional param {{{key!r}: ...}}"
                prov["target"] = UNDEFINED_PARAM
            elif body_param is not None and isinstance(values.get(body_param.name), dict):
                while key in (body_param.schema.properties or {}):
                    key += "_"
                values[body_param.name] = {**values[body_param.name], key: extra}
                note = f"undefined field: body key {key!r}"
                prov["target"] = f"{body_param.name}/{key}"
            else:
                declared = {p.name for p in method.params}
                while key in declared:
                    key += "_"
                values["?" + key] = extra
                note = f"undefined field: query parameter {key!r}"
                prov["target"] = "?" + key
        else:
            eligible = [p for p in method.params if _is_constrained(method, p)]
            rng.shuffle(eligible)
            for target in eligible:
                wire_text = target.location in ("path", "query")
                original = values.get(target.name)
                bad = _constrained(target, rng, original, wire_text)
                if bad is _NO_VALUE:
                    continue
                if target.name not in values and method.transport == "jsonrpc_post":
                    # fill earlier optional slots so the bad value lands in position
                    index = [p.name for p in method.params].index(target.name)
                    for p in method.params[:index]:
                        if p.name not in values:
                            values[p.name] = gen_valid_value(p.schema, rng, trace)
                    values = {p.name: values[p.name] for p in method.params[:index] if p.name in values}
                values[target.name] = bad
                if method.transport == "jsonrpc_post":
                    values = {p.name: values[p.name] for p in method.params if p.name in values}
                note = f"constraint violation: {target.name} replaced by {json_type(bad)}"
                prov["target"] = target.name
                break
            else:
                raise GenerationError(f"no rejectable replacement found for {method.name}")

    if trace:
        prov["anyOf"] = trace
    return build_request(method, values, request_id=request_id, validity=SYNTACTIC_INVALID, seed=seed,
                         fault_note=note, provenance=prov, extra_positional=extra_positional)


def gen_batch(spec: ApiSpec, mix: TestMix, seed: int, store=None) -> list[TestRequest]:
    """``mix.total`` requests per method, ordered by method name.

    Invalid slots rotate through the applicable categories.  Semantic slots
    need a fact store; without one, or without facts for the method, they
    stay syntactically valid and are marked degraded.
    """
    from .facts import enrich  # cycle: facts builds on the request model

    seed &= MASK64
    out: list[TestRequest] = []
    next_id = 1
    if mix.semantic and store is None:
        log.warning("no fact store: %d semantic slots per method degrade to syntactic_valid", mix.semantic)
    for name in sorted(spec.methods):
        method = spec.methods[name]
        cats = applicable_categories(method)
        slot = 0
        for i in range(mix.invalid):
            rseed = request_seed(seed, name, slot)
            out.append(gen_invalid_request(method, cats[i % len(cats)], random.Random(rseed),
                                           request_id=next_id, seed=rseed))
            next_id += 1
            slot += 1
        for _ in range(mix.valid):
            rseed = request_seed(seed, name, slot)
            out.append(gen_valid_request(method, random.Random(rseed), request_id=next_id, seed=rseed))
            next_id += 1
            slot += 1
        for _ in range(mix.semantic):
            rseed = request_seed(seed, name, slot)
            rng = random.Random(rseed)
            req = gen_valid_request(method, rng, request_id=next_id, seed=rseed)
            if store is not None:
                req = enrich(req, store, rng, method)
            else:
                req.provenance["degraded"] = "no fact store"
            out.append(req)
            next_id += 1
            slot += 1
    return out


# -- JSON Lines --------------------------------------------------------------

def dumps_batch(batch: Iterable[TestRequest]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=True, sort_keys=True) + "\n" for r in batch)


def write_batch(batch: Iterable[TestRequest], path: str | Path) -> None:
    Path(path).write_text(dumps_batch(batch))


def read_batch(path: str | Path) -> list[TestRequest]:
    lines = Path(path).read_text().splitlines()
    return [TestRequest.from_json(json.loads(line)) for line in lines if line.strip()]


def with_id(request: TestRequest, request_id: int) -> TestRequest:
    body = request.body
    if request.transport == "jsonrpc_post" and isinstance(body, dict):
        body = {**body, "id": request_id}
    return replace(request, request_id=request_id, body=body)
