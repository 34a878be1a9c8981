"""JSON-Schema subset used to describe parameters and results.

Only a closed vocabulary is understood: ``type``, ``pattern``, ``enum``,
``anyOf``, ``properties``, ``required``, ``items``, ``minItems``,
``maxItems``, ``additionalProperties``, ``title`` and ``description``, plus
the ``x-consistency-policy`` / ``x-environmental`` / ``x-unordered``
annotations.  Anything else is rejected at parse time.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Iterator, Mapping

from .errors import InvariantViolation, UnsupportedConstructError

KINDS = ("string", "integer", "number", "boolean", "array", "object", "null", "any")

POLICY_KEY = "x-consistency-policy"
ENVIRONMENTAL_KEY = "x-environmental"
UNORDERED_KEY = "x-unordered"

SUPPORTED_KEYS = frozenset({
    "type", "pattern", "enum", "anyOf", "properties", "required", "items",
    "minItems", "maxItems", "additionalProperties", "title", "description",
    POLICY_KEY, ENVIRONMENTAL_KEY, UNORDERED_KEY,
})


class ConsistencyPolicy(str, enum.Enum):
    MUST_IDENTICAL = "must-identical"
    MAY_DIVERGENT = "may-divergent"
    MUST_DIVERGENT = "must-divergent"

    @classmethod
    def parse(cls, text: str) -> "ConsistencyPolicy":
        norm = text.strip().lower().replace("_", "-")
        for member in cls:
            if member.value == norm:
                return member
        raise ValueError(f"unknown consistency policy {text!r}")


@dataclass(frozen=True)
class SchemaNode:
    kind: str = "any"
    pattern: str | None = None
    enum_values: tuple | None = None
    any_of: tuple["SchemaNode", ...] | None = None
    properties: Mapping[str, "SchemaNode"] | None = None
    required: tuple[str, ...] | None = None
    items: "SchemaNode | None" = None
    min_items: int | None = None
    max_items: int | None = None
    additional_properties_allowed: bool = True
    title: str | None = None
    description: str | None = None
    consistency_policy: ConsistencyPolicy | None = None
    environmental: bool = False
    unordered: bool = False

    def __post_init__(self) -> None:
        check_invariants(self)

    @property
    def is_leaf(self) -> bool:
        """True for nodes with no structural children to descend into."""
        if self.kind == "object":
            return not self.properties
        if self.kind == "array":
            return self.items is None
        return not self.any_of

    def with_policy(self, policy: ConsistencyPolicy, environmental: bool = False) -> "SchemaNode":
        return replace(self, consistency_policy=policy, environmental=environmental)


def check_invariants(node: SchemaNode, path: str = "") -> None:
    if node.kind not in KINDS:
        raise InvariantViolation(f"unknown kind {node.kind!r}", path)
    if node.pattern is not None and node.kind != "string":
        raise InvariantViolation("pattern is only allowed on string schemas", path)
    if node.kind != "array" and (node.items is not None or node.min_items is not None or node.max_items is not None):
        raise InvariantViolation("items/minItems/maxItems are only allowed on array schemas", path)
    if node.kind != "object" and (node.properties is not None or node.required is not None):
        raise InvariantViolation("properties/required are only allowed on object schemas", path)
    if node.kind != "object" and not node.additional_properties_allowed:
        raise InvariantViolation("additionalProperties is only allowed on object schemas", path)
    for bound in (node.min_items, node.max_items):
        if bound is not None and (not isinstance(bound, int) or isinstance(bound, bool) or bound < 0):
            raise InvariantViolation("minItems/maxItems must be non-negative integers", path)
    if node.min_items is not None and node.max_items is not None and node.min_items > node.max_items:
        raise InvariantViolation(f"minItems {node.min_items} exceeds maxItems {node.max_items}", path)
    if node.required:
        props = node.properties or {}
        for name in node.required:
            if name not in props:
                raise InvariantViolation(f"required field {name!r} is not declared in properties", path)
    if node.any_of is not None and len(node.any_of) == 0:
        raise InvariantViolation("anyOf must not be empty", path)
    if node.enum_values is not None and not isinstance(node.enum_values, tuple):
        raise InvariantViolation("enum must be a tuple", path)
    if node.environmental and node.consistency_policy is not ConsistencyPolicy.MAY_DIVERGENT:
        raise InvariantViolation("x-environmental requires the may-divergent policy", path)


# -- parsing -----------------------------------------------------------------

def parse_schema(doc: Any, path: str = "", method: str | None = None) -> SchemaNode:
    """Build a :class:`SchemaNode` from a JSON object.

    ``path`` is a JSON pointer used in error messages; ``method`` names the
    owning method so a rejection can say where it happened.
    """
    if doc is True or doc == {}:
        return SchemaNode()
    if not isinstance(doc, dict):
        raise UnsupportedConstructError(f"schema of JSON type {type(doc).__name__}", path, method)
    for key in doc:
        if key not in SUPPORTED_KEYS:
            raise UnsupportedConstructError(key, f"{path}/{_escape(key)}", method)

    try:
        return _build(doc, path, method)
    except InvariantViolation as exc:
        if exc.method is None:
            raise InvariantViolation(str(exc).rsplit(" (", 1)[0], exc.path or path, method) from None
        raise


def _build(doc: dict, path: str, method: str | None) -> SchemaNode:
    kind = "any"
    any_of: list[SchemaNode] | None = None
    if "type" in doc:
        t = doc["type"]
        if isinstance(t, list):
            # a type union is the same thing as an anyOf over bare kinds
            if not t:
                raise InvariantViolation("empty type list", path, method)
            any_of = [SchemaNode(kind=_kind(k, path, method)) for k in t]
        else:
            kind = _kind(t, path, method)
    if "anyOf" in doc:
        branches = doc["anyOf"]
        if not isinstance(branches, list):
            raise InvariantViolation("anyOf must be a list", path, method)
        parsed = [parse_schema(b, f"{path}/anyOf/{i}", method) for i, b in enumerate(branches)]
        if any_of is not None:
            raise UnsupportedConstructError("type list combined with anyOf", path, method)
        any_of = parsed

    properties = None
    if "properties" in doc:
        if not isinstance(doc["properties"], dict):
            raise InvariantViolation("properties must be an object", path, method)
        properties = {
            name: parse_schema(sub, f"{path}/properties/{_escape(name)}", method)
            for name, sub in doc["properties"].items()
        }
    items = None
    if "items" in doc:
        if not isinstance(doc["items"], (dict, bool)):
            raise UnsupportedConstructError("tuple-form items", f"{path}/items", method)
        items = parse_schema(doc["items"], f"{path}/items", method)
    additional = doc.get("additionalProperties", True)
    if not isinstance(additional, bool):
        raise UnsupportedConstructError("schema-valued additionalProperties", f"{path}/additionalProperties", method)

    enum_values = None
    if "enum" in doc:
        if not isinstance(doc["enum"], list):
            raise InvariantViolation("enum must be a list", path, method)
        enum_values = tuple(doc["enum"])
    required = None
    if "required" in doc:
        if not isinstance(doc["required"], list) or not all(isinstance(r, str) for r in doc["required"]):
            raise InvariantViolation("required must be a list of names", path, method)
        required = tuple(doc["required"])
    pattern = doc.get("pattern")
    if pattern is not None:
        if not isinstance(pattern, str):
            raise InvariantViolation("pattern must be a string", path, method)
        try:
            _compiled(pattern)
        except re.error as exc:
            raise InvariantViolation(f"invalid pattern {pattern!r}: {exc}", path, method) from None

    policy = None
    if POLICY_KEY in doc:
        try:
            policy = ConsistencyPolicy.parse(doc[POLICY_KEY])
        except (ValueError, AttributeError):
            raise InvariantViolation(f"bad {POLICY_KEY} value {doc[POLICY_KEY]!r}", path, method) from None

    node = SchemaNode(
        kind=kind,
        pattern=pattern,
        enum_values=enum_values,
        any_of=tuple(any_of) if any_of is not None else None,
        properties=properties,
        required=required,
        items=items,
        min_items=doc.get("minItems"),
        max_items=doc.get("maxItems"),
        additional_properties_allowed=additional,
        title=doc.get("title"),
        description=doc.get("description"),
        consistency_policy=policy,
        environmental=bool(doc.get(ENVIRONMENTAL_KEY, False)),
        unordered=bool(doc.get(UNORDERED_KEY, False)),
    )
    return node


def _kind(t: Any, path: str, method: str | None) -> str:
    if t not in KINDS or t == "any":
        raise UnsupportedConstructError(f"type {t!r}", path, method)
    return t


def _escape(token: str) -> str:
    return token.replace("~", "~0").replace("/", "~1")


def schema_to_json(node: SchemaNode) -> dict:
    out: dict[str, Any] = {}
    if node.title is not None:
        out["title"] = node.title
    if node.description is not None:
        out["description"] = node.description
    if node.kind != "any":
        out["type"] = node.kind
    if node.pattern is not None:
        out["pattern"] = node.pattern
    if node.enum_values is not None:
        out["enum"] = list(node.enum_values)
    if node.any_of is not None:
        out["anyOf"] = [schema_to_json(b) for b in node.any_of]
    if node.properties is not None:
        out["properties"] = {k: schema_to_json(v) for k, v in node.properties.items()}
    if node.required is not None:
        out["required"] = list(node.required)
    if node.items is not None:
        out["items"] = schema_to_json(node.items)
    if node.min_items is not None:
        out["minItems"] = node.min_items
    if node.max_items is not None:
        out["maxItems"] = node.max_items
    if not node.additional_properties_allowed:
        out["additionalProperties"] = False
    if node.consistency_policy is not None:
        out[POLICY_KEY] = node.consistency_policy.value
    if node.environmental:
        out[ENVIRONMENTAL_KEY] = True
    if node.unordered:
        out[UNORDERED_KEY] = True
    return out


# -- validation --------------------------------------------------------------

@lru_cache(maxsize=1024)
def _compiled(pattern: str) -> re.Pattern:
    return re.compile(pattern)


def json_equal(a: Any, b: Any) -> bool:
    """Equality under JSON semantics: ``true`` is not ``1``, ``1`` is ``1.0``."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return a == b
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(json_equal(a[k], b[k]) for k in a)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(json_equal(x, y) for x, y in zip(a, b))
    return type(a) is type(b) and a == b


def kind_matches(kind: str, value: Any) -> bool:
    if kind == "any":
        return True
    if kind == "string":
        return isinstance(value, str)
    if kind == "boolean":
        return isinstance(value, bool)
    if kind == "null":
        return value is None
    if kind == "array":
        return isinstance(value, list)
    if kind == "object":
        return isinstance(value, dict)
    if isinstance(value, bool):
        return False
    if kind == "integer":
        return isinstance(value, int) or (isinstance(value, float) and math.isfinite(value) and value.is_integer())
    if kind == "number":
        return isinstance(value, (int, float))
    return False


def validate_value(schema: SchemaNode, value: Any) -> bool:
    if not kind_matches(schema.kind, value):
        return False
    if schema.enum_values is not None and not any(json_equal(value, e) for e in schema.enum_values):
        return False
    if schema.pattern is not None and _compiled(schema.pattern).search(value) is None:
        return False
    if schema.any_of is not None and not any(validate_value(b, value) for b in schema.any_of):
        return False
    if schema.kind == "array":
        if schema.min_items is not None and len(value) < schema.min_items:
            return False
        if schema.max_items is not None and len(value) > schema.max_items:
            return False
        if schema.items is not None and not all(validate_value(schema.items, v) for v in value):
            return False
    if schema.kind == "object":
        props = schema.properties or {}
        for name in schema.required or ():
            if name not in value:
                return False
        for name, sub in value.items():
            if name in props:
                if not validate_value(props[name], sub):
                    return False
            elif not schema.additional_properties_allowed:
                return False
    return True


# -- navigation --------------------------------------------------------------

def split_pointer(pointer: str) -> list[str]:
    if pointer in ("", "/"):
        return []
    if not pointer.startswith("/"):
        raise ValueError(f"not a JSON pointer: {pointer!r}")
    return [t.replace("~1", "/").replace("~0", "~") for t in pointer[1:].split("/")]


def join_pointer(tokens: list[str] | tuple[str, ...]) -> str:
    return "".join("/" + _escape(str(t)) for t in tokens)


def child_schemas(node: SchemaNode, token: str) -> list[SchemaNode]:
    """All sub-schemas that describe member ``token`` of a value of ``node``.

    anyOf alternatives are searched in declaration order.
    """
    found: list[SchemaNode] = []
    if node.kind == "object" and node.properties and token in node.properties:
        found.append(node.properties[token])
    if node.kind == "array" and node.items is not None and (token.isdigit() or token == "*"):
        found.append(node.items)
    for branch in node.any_of or ():
        found.extend(child_schemas(branch, token))
    return found


def declares(node: SchemaNode, token: str) -> bool | None:
    """Whether ``node`` declares member ``token``.

    Returns ``None`` when ``node`` says nothing structural (kind ``any`` with
    no branches), so callers can fall back to a heuristic.
    """
    if child_schemas(node, token):
        return True
    structural = node.kind in ("object", "array") or any(
        b.kind in ("object", "array") for b in node.any_of or ()
    )
    return False if structural else None


def resolve(node: SchemaNode | None, tokens: list[str]) -> list[SchemaNode]:
    """Schemas along ``tokens``; stops early when the path leaves the schema.

    Where anyOf offers several candidates, the first one that follows the
    path furthest is taken.
    """
    best: list[SchemaNode] = []
    if node is None:
        return best
    acc: list[SchemaNode] = []

    def walk(current: SchemaNode, i: int) -> bool:
        nonlocal best
        if len(acc) > len(best):
            best = list(acc)
        if i == len(tokens):
            return True
        for nxt in child_schemas(current, tokens[i]):
            acc.append(nxt)
            if walk(nxt, i + 1):
                return True
            acc.pop()
        return False

    walk(node, 0)
    return best


def schema_at(root: SchemaNode, pointer: str) -> SchemaNode | None:
    tokens = split_pointer(pointer)
    chain = resolve(root, tokens)
    if len(chain) != len(tokens):
        return None
    return chain[-1] if chain else root


def iter_leaves(node: SchemaNode, prefix: tuple[str, ...] = ()) -> Iterator[tuple[tuple[str, ...], SchemaNode]]:
    """Yield ``(path tokens, leaf)`` for every leaf reachable from ``node``.

    Array items are addressed with ``*``; anyOf branches contribute their own
    leaves under the same path.
    """
    if node.is_leaf:
        yield prefix, node
        return
    if node.kind == "object" and node.properties:
        for name, sub in node.properties.items():
            yield from iter_leaves(sub, prefix + (name,))
    if node.kind == "array" and node.items is not None:
        yield from iter_leaves(node.items, prefix + ("*",))
    for branch in node.any_of or ():
        yield from iter_leaves(branch, prefix)


def map_leaves(node: SchemaNode, fn, prefix: tuple[str, ...] = ()) -> SchemaNode:
    """Return a copy of ``node`` with ``fn(path, leaf)`` applied to every leaf."""
    if node.is_leaf:
        return fn(prefix, node)
    changes: dict[str, Any] = {}
    if node.kind == "object" and node.properties:
        changes["properties"] = {k: map_leaves(v, fn, prefix + (k,)) for k, v in node.properties.items()}
    if node.kind == "array" and node.items is not None:
        changes["items"] = map_leaves(node.items, fn, prefix + ("*",))
    if node.any_of:
        changes["any_of"] = tuple(map_leaves(b, fn, prefix) for b in node.any_of)
    return replace(node, **changes)


def is_quantity(node: SchemaNode | None) -> bool:
    """Heuristic: does this schema describe a hex-encoded unsigned integer?"""
    if node is None:
        return False
    if node.kind == "string":
        if node.pattern and "0|[1-9a-f]" in node.pattern:
            return True
        if node.title and re.search(r"\b(quantity|unsigned integer)\b", node.title, re.I):
            return True
    return any(is_quantity(b) for b in node.any_of or ())


def unordered_at(root: SchemaNode, pointer: str) -> bool:
    node = schema_at(root, pointer)
    return bool(node and node.unordered)


@dataclass(frozen=True)
class PolicyLookup:
    policy: ConsistencyPolicy
    environmental: bool = False
    explicit: bool = field(default=False, compare=False)


def policy_at(root: SchemaNode, pointer: str) -> PolicyLookup:
    """Consistency policy governing the value at ``pointer``.

    The deepest annotated node along the path wins.  A fully resolved
    composite node without its own annotation inherits its leaves' policy
    when they all agree.  Everything else falls back to must-identical.
    """
    tokens = split_pointer(pointer)
    chain = [root] + resolve(root, tokens)
    for node in reversed(chain):
        if node.consistency_policy is not None:
            return PolicyLookup(node.consistency_policy, node.environmental, True)
        if node is chain[-1] and len(chain) == len(tokens) + 1 and not node.is_leaf:
            found = {
                (leaf.consistency_policy, leaf.environmental)
                for _, leaf in iter_leaves(node)
                if leaf.consistency_policy is not None
            }
            if len(found) == 1:
                policy, env = found.pop()
                return PolicyLookup(policy, env, True)
    return PolicyLookup(ConsistencyPolicy.MUST_IDENTICAL)
