"""Structural n-way comparison of response records."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..harness import ResponseRecord
from ..schema import (ConsistencyPolicy, SchemaNode, declares, join_pointer, json_equal, policy_at, schema_at,
                      unordered_at)

STATUS_PATH = "/$status"
ROOT_PATH = "/"
KINDS = ("value_mismatch", "missing_field", "extra_field", "type_mismatch", "status_mismatch", "availability")


class _Absent:
    """Marks an endpoint whose response lacks the compared member."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "<absent>"

    def __reduce__(self):
        return (_Absent, ())


ABSENT = _Absent()
RESPONDED = {"$marker": "responded"}


def marker_json(value: Any) -> Any:
    """JSON form of a per-endpoint value (the absence marker becomes an object)."""
    return {"$marker": "absent"} if value is ABSENT else value


@dataclass(frozen=True)
class Divergence:
    field_path: str
    kind: str
    per_endpoint_values: dict[int, Any]
    policy: ConsistencyPolicy
    environmental: bool = field(default=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown divergence kind {self.kind!r}")
        distinct = {_fingerprint(v) for v in self.per_endpoint_values.values()}
        if len(distinct) < 2:
            raise ValueError(f"divergence at {self.field_path} needs at least two distinct values")

    def to_json(self) -> dict:
        return {
            "field_path": self.field_path,
            "kind": self.kind,
            "policy": self.policy.value,
            "environmental": self.environmental,
            "per_endpoint_values": {str(k): marker_json(v) for k, v in sorted(self.per_endpoint_values.items())},
        }


def _fingerprint(value: Any) -> str:
    if value is ABSENT:
        return "<absent>"
    return json.dumps(_numeric_normal(value), sort_keys=True)


def _numeric_normal(value: Any) -> Any:
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, list):
        return [_numeric_normal(v) for v in value]
    if isinstance(value, dict):
        return {k: _numeric_normal(v) for k, v in value.items()}
    return value


def json_kind(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    return "object"


class _Differ:
    def __init__(self, schema: SchemaNode):
        self.schema = schema
        self.out: list[Divergence] = []

    def emit(self, tokens: Sequence[str], kind: str, values: dict[int, Any]) -> None:
        pointer = join_pointer(tokens)
        lookup = policy_at(self.schema, pointer)
        self.out.append(Divergence(pointer, kind, dict(values), lookup.policy, lookup.environmental))

    def presence_kind(self, tokens: Sequence[str], values: dict[int, Any]) -> str:
        parent = schema_at(self.schema, join_pointer(tokens[:-1]))
        declared = declares(parent, tokens[-1]) if parent is not None else None
        if tokens[-1].isdigit():
            declared = None  # array positions are never declared individually
        if declared is None:
            holders = sum(1 for v in values.values() if v is not ABSENT)
            return "extra_field" if holders * 2 < len(values) else "missing_field"
        return "missing_field" if declared else "extra_field"

    def walk(self, tokens: list[str], values: dict[int, Any]) -> None:
        present = [v for v in values.values() if v is not ABSENT]
        if len(present) != len(values):
            if present:
                self.emit(tokens, self.presence_kind(tokens, values), values)
            return
        kinds = {json_kind(v) for v in present}
        if len(kinds) > 1:
            self.emit(tokens, "type_mismatch", values)
            return
        kind = kinds.pop()
        if kind == "object":
            keys = sorted(set().union(*(v.keys() for v in present)))
            for k in keys:
                self.walk(tokens + [k], {e: v.get(k, ABSENT) for e, v in values.items()})
        elif kind == "array":
            if unordered_at(self.schema, join_pointer(tokens)):
                bags = {_bag(v) for v in present}
                if len(bags) > 1:
                    self.emit(tokens, "value_mismatch", values)
                return
            for i in range(max(len(v) for v in present)):
                self.walk(tokens + [str(i)], {e: v[i] if i < len(v) else ABSENT for e, v in values.items()})
        else:
            first = present[0]
            if not all(json_equal(first, v) for v in present[1:]):
                self.emit(tokens, "value_mismatch", values)


def _bag(items: list) -> tuple:
    return tuple(sorted(_fingerprint(v) for v in items))


def diff_records(records: Sequence[ResponseRecord], result_schema: SchemaNode | None = None) -> list[Divergence]:
    """Every field path on which the endpoints disagree.

    Transport failures short-circuit to a single ``availability`` divergence
    at ``/``; otherwise the status code and then the bodies are compared.
    """
    if len(records) < 2:
        raise ValueError("diffing needs at least two records")
    schema = result_schema or SchemaNode()
    by_id = {r.endpoint_id: r for r in sorted(records, key=lambda r: r.endpoint_id)}
    if any(r.failed for r in by_id.values()):
        values = {e: ({"$marker": r.transport_error} if r.failed else RESPONDED) for e, r in by_id.items()}
        if len({_fingerprint(v) for v in values.values()}) > 1:
            return [Divergence(ROOT_PATH, "availability", values, ConsistencyPolicy.MUST_IDENTICAL)]
        return []
    out: list[Divergence] = []
    statuses = {e: r.http_status for e, r in by_id.items()}
    if len(set(statuses.values())) > 1:
        out.append(Divergence(STATUS_PATH, "status_mismatch", statuses, ConsistencyPolicy.MUST_IDENTICAL))
    differ = _Differ(schema)
    differ.walk([], {e: r.body for e, r in by_id.items()})
    return out + differ.out
