"""Reference implementations used only to check the package from the outside.

They share no code with the modules under test beyond the public data
classes, so a bug in one is unlikely to be mirrored in the other.
"""

from __future__ import annotations

import json
import re
from urllib.parse import parse_qsl, unquote, urlsplit

import jsonschema

from specdiff.schema import schema_to_json


def _validator(schema_node):
    return jsonschema.Draft7Validator(schema_to_json(schema_node))


def _wire_ok(text: str, validator) -> bool:
    if validator.is_valid(text):
        return True
    try:
        return validator.is_valid(json.loads(text))
    except ValueError:
        return False


def _group(name: str) -> str:
    return "g_" + re.sub(r"\W", "_", name)


def inspect_request(method, request) -> dict:
    """Independent verdict on a request's params.

    Returns ``{"extra": [...], "missing": [...], "bad": [...]}`` where each
    list names offending params; all three empty means the request is valid.
    """
    extra, missing, bad = [], [], []
    params = {p.name: p for p in method.params}
    if method.transport == "jsonrpc_post":
        body = request.body
        assert {"id", "jsonrpc", "method"} <= set(body), "envelope must be intact"
        sent = body.get("params", [])
        for i, value in enumerate(sent):
            if i >= len(method.params):
                extra.append(f"#{i}")
            elif not _validator(method.params[i].schema).is_valid(value):
                bad.append(method.params[i].name)
        for i, p in enumerate(method.params):
            if p.required and i >= len(sent):
                missing.append(p.name)
        return {"extra": extra, "missing": missing, "bad": bad}

    split = urlsplit(request.path)
    template = re.escape(method.path_template)
    template = re.sub(r"\\\{([^{}]+)\\\}", lambda m: "(?P<" + _group(m.group(1)) + ">[^/]*)", template)
    m = re.fullmatch(template, split.path)
    assert m is not None, f"path {split.path} does not fit {method.path_template}"
    path_names = {_group(p.name): p for p in method.params if p.location == "path"}
    seen = set()
    for key, raw in m.groupdict().items():
        p = path_names[key]
        if raw == "":
            continue  # an empty segment carries no value
        seen.add(p.name)
        if not _wire_ok(unquote(raw), _validator(p.schema)):
            bad.append(p.name)
    for key, raw in parse_qsl(split.query, keep_blank_values=True):
        p = params.get(key)
        if p is None or p.location != "query":
            extra.append("?" + key)
            continue
        seen.add(p.name)
        if not _wire_ok(raw, _validator(p.schema)):
            bad.append(p.name)
    for p in method.params:
        if p.location == "body":
            if request.body is None:
                if p.required:
                    missing.append(p.name)
                continue
            seen.add(p.name)
            if not _validator(p.schema).is_valid(request.body):
                bad.append(p.name)
            declared = schema_to_json(p.schema).get("properties")
            if declared and isinstance(request.body, dict):
                extra += [f"{p.name}/{k}" for k in request.body if k not in declared]
    for p in method.params:
        if p.required and p.name not in seen and p.name not in missing:
            missing.append(p.name)
    return {"extra": extra, "missing": missing, "bad": bad}


def request_is_valid(method, request) -> bool:
    return not any(inspect_request(method, request).values())


# -- structural diff ---------------------------------------------------------------

def _kind(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "bool"
    if isinstance(v, (int, float)):
        return "num"
    if isinstance(v, str):
        return "str"
    if isinstance(v, list):
        return "list"
    return "dict"


def _esc(token) -> str:
    return str(token).replace("~", "~0").replace("/", "~1")


def brute_force_diff(a, b) -> set[tuple[str, str]]:
    """(path, kind) pairs on which two schema-less JSON documents differ."""
    out: set[tuple[str, str]] = set()

    def walk(x, y, path):
        if _kind(x) != _kind(y):
            out.add((path, "type_mismatch"))
        elif isinstance(x, dict):
            for k in set(x) | set(y):
                sub = path + "/" + _esc(k)
                if (k in x) != (k in y):
                    out.add((sub, "missing_field"))
                else:
                    walk(x[k], y[k], sub)
        elif isinstance(x, list):
            for i in range(max(len(x), len(y))):
                sub = path + "/" + str(i)
                if i >= len(x) or i >= len(y):
                    out.add((sub, "missing_field"))
                else:
                    walk(x[i], y[i], sub)
        elif x != y:
            out.add((path, "value_mismatch"))

    walk(a, b, "")
    return out


def hex_int(text: str) -> int:
    """Hex quantity parsed digit by digit, without int(x, 16)."""
    assert text[:2].lower() == "0x" and len(text) > 2
    value = 0
    for ch in text[2:].lower():
        value = value * 16 + "0123456789abcdef".index(ch)
    return value
