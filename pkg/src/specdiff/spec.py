"""Parsed API specifications.

Three document dialects are accepted and normalised into one
:class:`ApiSpec`:

* the neutral format written by :func:`dump_spec` (also covers OpenRPC
  documents, which share its ``methods`` list shape),
* a single OpenRPC method object, as found in the execution-API repository,
* OpenAPI-shaped REST documents (``paths`` → operations), as used by the
  Beacon API.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Iterable

from .errors import InvariantViolation, SpecParseError, UnsupportedConstructError
from .schema import SchemaNode, parse_schema, schema_to_json

TRANSPORTS = ("jsonrpc_post", "rest_get", "rest_post")
LOCATIONS = ("positional", "path", "query", "body")

_PLACEHOLDER = re.compile(r"\{([^{}]+)\}")


@dataclass(frozen=True)
class Param:
    name: str
    required: bool
    schema: SchemaNode
    location: str = "positional"
    semantic_type: str | tuple[str, ...] | None = None

    @property
    def semantic_types(self) -> tuple[str, ...]:
        if self.semantic_type is None:
            return ()
        if isinstance(self.semantic_type, str):
            return (self.semantic_type,)
        return tuple(self.semantic_type)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    transport: str
    params: tuple[Param, ...]
    result: SchemaNode
    path_template: str | None = None
    summary: str | None = None
    result_name: str | None = None

    def __post_init__(self) -> None:
        if self.transport not in TRANSPORTS:
            raise InvariantViolation(f"unknown transport {self.transport!r}", "", self.name)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InvariantViolation("duplicate parameter names", "/params", self.name)
        rest = self.transport != "jsonrpc_post"
        if rest != (self.path_template is not None):
            raise InvariantViolation("path template is required for REST methods and forbidden otherwise", "/path", self.name)
        for p in self.params:
            if p.location not in LOCATIONS:
                raise InvariantViolation(f"bad parameter location {p.location!r}", "/params", self.name)
            if rest == (p.location == "positional"):
                raise InvariantViolation(f"parameter {p.name!r} location {p.location!r} does not fit {self.transport}", "/params", self.name)
        if rest:
            holes = _PLACEHOLDER.findall(self.path_template)
            by_name = {p.name: p for p in self.params}
            for hole in holes:
                if hole not in by_name or by_name[hole].location != "path":
                    raise InvariantViolation(f"placeholder {{{hole}}} names no path parameter", "/path", self.name)
            if len(set(holes)) != len(holes):
                raise InvariantViolation("placeholder repeated in path template", "/path", self.name)
            for p in self.params:
                if p.location == "path" and p.name not in holes:
                    raise InvariantViolation(f"path parameter {p.name!r} missing from template", "/path", self.name)
            bodies = [p for p in self.params if p.location == "body"]
            if len(bodies) > 1 or (bodies and self.transport == "rest_get"):
                raise InvariantViolation("at most one body parameter, and only on POST", "/params", self.name)

    @property
    def layer(self) -> str:
        return "EL" if self.transport == "jsonrpc_post" else "CL"

    @property
    def http_method(self) -> str:
        return "GET" if self.transport == "rest_get" else "POST"

    def param(self, name: str) -> Param:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def response_schema(self) -> SchemaNode:
        """Schema of the whole response body, used for diffing.

        JSON-RPC results are wrapped in the 2.0 envelope; REST bodies are
        either the declared result or the conventional ``{code, message}``
        error object.
        """
        if self.transport == "jsonrpc_post":
            error = SchemaNode(kind="object", properties={
                "code": SchemaNode(kind="integer"),
                "message": SchemaNode(kind="string"),
                "data": SchemaNode(),
            }, required=("code", "message"))
            return SchemaNode(kind="object", properties={
                "jsonrpc": SchemaNode(kind="string"),
                "id": SchemaNode(),
                "result": self.result,
                "error": error,
            })
        error = SchemaNode(kind="object", properties={
            "code": SchemaNode(kind="integer"),
            "message": SchemaNode(kind="string"),
            "stacktraces": SchemaNode(kind="array", items=SchemaNode(kind="string")),
        })
        return SchemaNode(any_of=(self.result, error))


@dataclass(frozen=True)
class ApiSpec:
    methods: dict[str, MethodSpec]
    source_label: str = ""

    def __iter__(self):
        return iter(self.methods.values())

    def __len__(self) -> int:
        return len(self.methods)

    def merged(self, other: "ApiSpec") -> "ApiSpec":
        clash = set(self.methods) & set(other.methods)
        if clash:
            raise InvariantViolation(f"method names defined twice: {sorted(clash)}")
        label = "+".join(x for x in (self.source_label, other.source_label) if x)
        return ApiSpec({**self.methods, **other.methods}, label)


# -- parsing -----------------------------------------------------------------

def parse_spec(document: str | bytes, source_label: str = "") -> ApiSpec:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return spec_from_json(doc, source_label)


def load_spec(path: str | Path, source_label: str | None = None) -> ApiSpec:
    path = Path(path)
    return parse_spec(path.read_bytes(), source_label or path.name)


def spec_from_json(doc: Any, source_label: str = "") -> ApiSpec:
    if not isinstance(doc, dict):
        raise SpecParseError("specification document must be a JSON object")
    if "paths" in doc:
        return _import_openapi(doc, source_label)
    if "methods" in doc:
        raw = doc["methods"]
        label = doc.get("source") or source_label
    elif "name" in doc and "params" in doc:
        raw = [doc]
        label = source_label
    else:
        raise SpecParseError("document has neither 'methods', 'paths' nor a method descriptor")
    if not isinstance(raw, list):
        raise SpecParseError("'methods' must be a list")
    methods: dict[str, MethodSpec] = {}
    for i, m in enumerate(raw):
        spec = _method_from_json(m, doc, i)
        if spec.name in methods:
            raise InvariantViolation("duplicate method name", f"/methods/{i}", spec.name)
        methods[spec.name] = spec
    return ApiSpec(methods, label)


def _method_from_json(m: Any, root: dict, index: int) -> MethodSpec:
    if not isinstance(m, dict) or not isinstance(m.get("name"), str):
        raise InvariantViolation("method descriptor needs a string 'name'", f"/methods/{index}")
    name = m["name"]
    transport = m.get("transport", "jsonrpc_post")
    default_loc = "positional" if transport == "jsonrpc_post" else "query"
    params = []
    for j, p in enumerate(m.get("params", [])):
        if "$ref" in p:
            p = _deref(p, root, name, f"/params/{j}")
        if not isinstance(p, dict) or "name" not in p:
            raise InvariantViolation("parameter needs a name", f"/params/{j}", name)
        schema = _inline_refs(p.get("schema", {}), root, name, f"/params/{j}/schema")
        params.append(Param(
            name=p["name"],
            required=bool(p.get("required", False)),
            schema=parse_schema(schema, f"/params/{j}/schema", name),
            location=p.get("in", default_loc),
            semantic_type=_semantic(p.get("x-semantic-type")),
        ))
    result_doc = m.get("result", {"name": "result", "schema": {}})
    if "$ref" in result_doc:
        result_doc = _deref(result_doc, root, name, "/result")
    result_schema = _inline_refs(result_doc.get("schema", {}), root, name, "/result/schema")
    return MethodSpec(
        name=name,
        transport=transport,
        params=tuple(params),
        result=parse_schema(result_schema, "/result/schema", name),
        path_template=m.get("path"),
        summary=m.get("summary"),
        result_name=result_doc.get("name"),
    )


def _semantic(value: Any) -> str | tuple[str, ...] | None:
    if value is None or isinstance(value, str):
        return value
    return tuple(value)


def _deref(node: dict, root: dict, method: str, path: str, seen: tuple[str, ...] = ()) -> Any:
    ref = node["$ref"]
    if not isinstance(ref, str) or not ref.startswith("#/"):
        raise UnsupportedConstructError(f"remote $ref {ref!r}", path, method)
    if ref in seen:
        raise UnsupportedConstructError(f"recursive $ref {ref!r}", path, method)
    target: Any = root
    for token in ref[2:].split("/"):
        token = token.replace("~1", "/").replace("~0", "~")
        if not isinstance(target, dict) or token not in target:
            raise InvariantViolation(f"unresolvable $ref {ref!r}", path, method)
        target = target[token]
    if len(node) > 1:
        raise UnsupportedConstructError("$ref with sibling keywords", path, method)
    if isinstance(target, dict) and "$ref" in target:
        return _deref(target, root, method, path, seen + (ref,))
    return target


def _inline_refs(schema: Any, root: dict, method: str, path: str, seen: tuple[str, ...] = ()) -> Any:
    """Replace same-document ``$ref`` nodes by their targets."""
    if isinstance(schema, dict):
        if "$ref" in schema:
            ref = schema["$ref"]
            target = _deref(schema, root, method, path, seen)
            return _inline_refs(target, root, method, path, seen + (ref,))
        return {k: _inline_refs(v, root, method, f"{path}/{k}", seen) for k, v in schema.items()}
    if isinstance(schema, list):
        return [_inline_refs(v, root, method, f"{path}/{i}", seen) for i, v in enumerate(schema)]
    return schema


def _import_openapi(doc: dict, source_label: str) -> ApiSpec:
    methods: dict[str, MethodSpec] = {}
    paths = doc["paths"]
    if not isinstance(paths, dict):
        raise SpecParseError("'paths' must be an object")
    for template, ops in paths.items():
        for verb, op in ops.items():
            if verb not in ("get", "post"):
                raise UnsupportedConstructError(f"HTTP verb {verb!r}", f"/paths/{template}")
            name = op.get("operationId")
            if not name:
                raise InvariantViolation("operation needs an operationId", f"/paths/{template}/{verb}")
            params = []
            for j, p in enumerate(op.get("parameters", [])):
                if "$ref" in p:
                    p = _deref(p, doc, name, f"/parameters/{j}")
                loc = p.get("in", "query")
                if loc not in ("path", "query"):
                    raise UnsupportedConstructError(f"parameter location {loc!r}", f"/parameters/{j}", name)
                schema = _inline_refs(p.get("schema", {}), doc, name, f"/parameters/{j}/schema")
                params.append(Param(
                    name=p["name"],
                    required=bool(p.get("required", loc == "path")),
                    schema=parse_schema(schema, f"/parameters/{j}/schema", name),
                    location=loc,
                    semantic_type=_semantic(p.get("x-semantic-type")),
                ))
            body = op.get("requestBody")
            if body is not None:
                schema = _json_content(body, doc, name, "/requestBody")
                params.append(Param(
                    name="body",
                    required=bool(body.get("required", False)),
                    schema=parse_schema(schema, "/requestBody", name),
                    location="body",
                    semantic_type=_semantic(body.get("x-semantic-type")),
                ))
            responses = op.get("responses", {})
            ok = responses.get("200") or responses.get(200)
            result = {}
            if ok is not None and "content" in ok:
                result = _json_content(ok, doc, name, "/responses/200")
            spec = MethodSpec(
                name=name,
                transport="rest_get" if verb == "get" else "rest_post",
                params=tuple(params),
                result=parse_schema(result, "/responses/200", name),
                path_template=template,
                summary=op.get("summary"),
                result_name=None,
            )
            if name in methods:
                raise InvariantViolation("duplicate operationId", f"/paths/{template}", name)
            methods[name] = spec
    return ApiSpec(methods, source_label or doc.get("info", {}).get("title", ""))


def _json_content(holder: dict, root: dict, method: str, path: str) -> Any:
    content = holder.get("content", {})
    media = content.get("application/json")
    if media is None:
        raise UnsupportedConstructError("non-JSON media type", f"{path}/content", method)
    return _inline_refs(media.get("schema", {}), root, method, f"{path}/content/application~1json/schema")


# -- serialisation -----------------------------------------------------------

def method_to_json(m: MethodSpec) -> dict:
    out: dict[str, Any] = {"name": m.name}
    if m.summary is not None:
        out["summary"] = m.summary
    out["transport"] = m.transport
    if m.path_template is not None:
        out["path"] = m.path_template
    params = []
    for p in m.params:
        pj: dict[str, Any] = {"name": p.name, "required": p.required}
        if p.location != "positional":
            pj["in"] = p.location
        if p.semantic_type is not None:
            pj["x-semantic-type"] = p.semantic_type if isinstance(p.semantic_type, str) else list(p.semantic_type)
        pj["schema"] = schema_to_json(p.schema)
        params.append(pj)
    out["params"] = params
    result: dict[str, Any] = {}
    if m.result_name is not None:
        result["name"] = m.result_name
    result["schema"] = schema_to_json(m.result)
    out["result"] = result
    return out


def spec_to_json(spec: ApiSpec) -> dict:
    return {"source": spec.source_label, "methods": [method_to_json(m) for m in spec.methods.values()]}


def dump_spec(spec: ApiSpec) -> str:
    return json.dumps(spec_to_json(spec), indent=2, ensure_ascii=False) + "\n"


# -- semantic-type sidecar ---------------------------------------------------

def apply_semantic_types(spec: ApiSpec, sidecar: dict[str, dict[str, Any]]) -> ApiSpec:
    """Bind parameters to fact types from a ``method → param → type`` map.

    Entries for unknown methods are ignored so one sidecar can serve several
    specification files; an entry naming an unknown parameter is an error.
    """
    methods = dict(spec.methods)
    for mname, binding in sidecar.items():
        if mname not in methods:
            continue
        m = methods[mname]
        known = {p.name for p in m.params}
        unknown = set(binding) - known
        if unknown:
            raise InvariantViolation(f"sidecar binds unknown parameters {sorted(unknown)}", "/params", mname)
        params = tuple(
            replace(p, semantic_type=_semantic(binding[p.name])) if p.name in binding else p
            for p in m.params
        )
        methods[mname] = replace(m, params=params)
    return ApiSpec(methods, spec.source_label)


def load_sidecar(path: str | Path) -> dict[str, dict[str, Any]]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise SpecParseError("semantic-type sidecar must be a JSON object")
    return data


def merge_specs(specs: Iterable[ApiSpec]) -> ApiSpec:
    out = ApiSpec({}, "")
    for s in specs:
        out = out.merged(s)
    return out


