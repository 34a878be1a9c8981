"""Deterministic equivalence of differently formatted values."""

from __future__ import annotations

import re
from typing import Any

from ..schema import SchemaNode, child_schemas, is_quantity, unordered_at

_HEX = re.compile(r"^0[xX][0-9a-fA-F]*$")
_DECIMAL = re.compile(r"^[+-]?[0-9]+$")


def _child(schema: SchemaNode | None, token: str) -> SchemaNode | None:
    if schema is None:
        return None
    found = child_schemas(schema, token)
    return found[0] if found else None


def canonical_form(value: Any, schema: SchemaNode | None = None) -> Any:
    """Hashable normal form; two values are equivalent iff their forms are equal.

    * quantity-typed hex strings become their integer value,
    * other hex strings are case-folded,
    * decimal integer strings become their integer value,
    * containers are normalised member by member.
    """
    if isinstance(value, str):
        if _HEX.match(value):
            if is_quantity(schema) and len(value) > 2:
                return ("qty", int(value, 16))
            return ("hex", value.lower())
        if _DECIMAL.match(value):
            return ("dec", int(value))
        return ("str", value)
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, (int, float)):
        return ("num", value)
    if value is None:
        return ("null",)
    if isinstance(value, list):
        items = tuple(canonical_form(v, _child(schema, str(i))) for i, v in enumerate(value))
        if schema is not None and schema.unordered:
            items = tuple(sorted(items, key=repr))
        return ("list", items)
    if isinstance(value, dict):
        return ("obj", tuple(sorted((k, canonical_form(v, _child(schema, k))) for k, v in value.items())))
    return ("other", repr(value))


def canonical_equivalent(a: Any, b: Any, schema: SchemaNode | None = None) -> bool:
    return canonical_form(a, schema) == canonical_form(b, schema)
