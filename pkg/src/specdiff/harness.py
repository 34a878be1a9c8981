"""Fan-out execution of test requests against a fleet of endpoints."""

from __future__ import annotations

import base64
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import httpx

from .errors import ConfigError, ReadinessError
from .generate import TestRequest
from .spec import ApiSpec

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_THRESHOLD_EPOCHS = 5
LAYERS = ("EL", "CL")
TRANSPORT_ERRORS = ("timeout", "connect_failure", "non_json")
CONTROL_PATH = "/__control/status"


@dataclass(frozen=True)
class Endpoint:
    endpoint_id: int
    label: str
    base_url: str
    layer: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self) -> None:
        if self.layer not in LAYERS:
            raise ConfigError(f"endpoint {self.endpoint_id}: layer must be EL or CL, got {self.layer!r}")
        if not isinstance(self.timeout_ms, int) or self.timeout_ms <= 0:
            raise ConfigError(f"endpoint {self.endpoint_id}: timeout_ms must be a positive integer")

    def url(self, path: str | None) -> str:
        return self.base_url.rstrip("/") + (path or "/")

    def to_json(self) -> dict:
        return asdict(self)


def check_fleet(fleet: list[Endpoint]) -> None:
    ids = [e.endpoint_id for e in fleet]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate endpoint ids in fleet: {sorted(ids)}")


def load_fleet(path: str | Path, timeout_ms: int | None = None) -> list[Endpoint]:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read fleet file {path}: {exc}") from exc
    if isinstance(raw, dict) and "endpoints" in raw:
        raw = raw["endpoints"]
    if not isinstance(raw, list):
        raise ConfigError("fleet file must hold a JSON array of endpoints or an object with 'endpoints'")
    try:
        fleet = [Endpoint(**{**e, **({"timeout_ms": timeout_ms} if timeout_ms else {})}) for e in raw]
    except TypeError as exc:
        raise ConfigError(f"bad endpoint entry: {exc}") from exc
    check_fleet(fleet)
    return fleet


@dataclass
class ResponseRecord:
    endpoint_id: int
    request_id: int
    http_status: int | None
    body: Any
    raw_body: bytes
    transport_error: str | None = None
    latency_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.transport_error is not None and self.transport_error not in TRANSPORT_ERRORS:
            raise ValueError(f"unknown transport error {self.transport_error!r}")
        if (self.http_status is None) != (self.transport_error in ("timeout", "connect_failure")):
            raise ValueError("http_status must be absent exactly on timeout or connect failure")
        if self.transport_error == "non_json" and self.body is not None:
            raise ValueError("non_json records carry no parsed body")

    @property
    def failed(self) -> bool:
        return self.transport_error is not None

    def to_json(self) -> dict:
        return {
            "endpoint_id": self.endpoint_id,
            "request_id": self.request_id,
            "http_status": self.http_status,
            "body": self.body,
            "raw_body": base64.b64encode(self.raw_body).decode("ascii"),
            "transport_error": self.transport_error,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ResponseRecord":
        return cls(**{**data, "raw_body": base64.b64decode(data["raw_body"])})


@dataclass(frozen=True)
class EndpointReadiness:
    endpoint_id: int
    label: str
    layer: str
    reachable: bool
    height: int | None = None
    finalized_epochs: int | None = None
    syncing: bool = False


@dataclass(frozen=True)
class ReadinessReport:
    endpoints: tuple[EndpointReadiness, ...]
    failures: tuple[str, ...]
    threshold_epochs: int

    @property
    def ready(self) -> bool:
        return not self.failures

    def syncing_ids(self) -> frozenset[int]:
        return frozenset(e.endpoint_id for e in self.endpoints if e.syncing)

    def to_json(self) -> dict:
        return {
            "ready": self.ready,
            "threshold_epochs": self.threshold_epochs,
            "failures": list(self.failures),
            "endpoints": [asdict(e) for e in self.endpoints],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ReadinessReport":
        return cls(
            endpoints=tuple(EndpointReadiness(**e) for e in data["endpoints"]),
            failures=tuple(data["failures"]),
            threshold_epochs=data["threshold_epochs"],
        )


# -- low-level calls ---------------------------------------------------------

def _timeout(endpoint: Endpoint) -> httpx.Timeout:
    return httpx.Timeout(endpoint.timeout_ms / 1000)


def call_jsonrpc(client: httpx.Client, endpoint: Endpoint, method: str, params: list, request_id: int = 1) -> Any:
    """POST one JSON-RPC call and return the decoded envelope."""
    payload = {"id": request_id, "jsonrpc": "2.0", "method": method, "params": params}
    resp = client.post(endpoint.url("/"), json=payload, timeout=_timeout(endpoint))
    return resp.json()


def call_rest(client: httpx.Client, endpoint: Endpoint, path: str, body: Any = None, verb: str = "GET") -> tuple[int, Any]:
    if verb == "GET":
        resp = client.get(endpoint.url(path), timeout=_timeout(endpoint))
    else:
        resp = client.post(endpoint.url(path), json=body, timeout=_timeout(endpoint))
    try:
        return resp.status_code, resp.json() if resp.content else None
    except ValueError:
        return resp.status_code, None


def send(client: httpx.Client, request: TestRequest, endpoint: Endpoint, payload: bytes | None = None) -> ResponseRecord:
    """Send ``request`` to one endpoint; transport failures become record fields."""
    if payload is None:
        payload = request.wire_bytes()
    headers = {"Content-Type": "application/json"} if payload is not None else {}
    start = time.perf_counter()
    try:
        resp = client.request(request.http_method, endpoint.url(request.path), content=payload,
                              headers=headers, timeout=_timeout(endpoint))
    except httpx.TimeoutException:
        return ResponseRecord(endpoint.endpoint_id, request.request_id, None, None, b"", "timeout",
                              _elapsed(start))
    except httpx.TransportError:
        return ResponseRecord(endpoint.endpoint_id, request.request_id, None, None, b"", "connect_failure",
                              _elapsed(start))
    raw = resp.content
    if not raw:
        return ResponseRecord(endpoint.endpoint_id, request.request_id, resp.status_code, None, raw, None,
                              _elapsed(start))
    try:
        body = json.loads(raw)
    except ValueError:
        return ResponseRecord(endpoint.endpoint_id, request.request_id, resp.status_code, None, raw, "non_json",
                              _elapsed(start))
    return ResponseRecord(endpoint.endpoint_id, request.request_id, resp.status_code, body, raw, None, _elapsed(start))


def _elapsed(start: float) -> float:
    return round((time.perf_counter() - start) * 1000, 3)


# -- readiness ---------------------------------------------------------------

def _probe(client: httpx.Client, endpoint: Endpoint) -> EndpointReadiness:
    base = dict(endpoint_id=endpoint.endpoint_id, label=endpoint.label, layer=endpoint.layer)
    try:
        resp = client.get(endpoint.url(CONTROL_PATH), timeout=_timeout(endpoint))
        if resp.status_code == 200:
            st = resp.json()
            return EndpointReadiness(**base, reachable=True, height=int(st["height"]),
                                     finalized_epochs=int(st["finalized_epochs"]) if endpoint.layer == "CL" else None,
                                     syncing=bool(st.get("syncing", False)))
        # real clients have no control endpoint: use the standard queries
        if endpoint.layer == "EL":
            height = int(call_jsonrpc(client, endpoint, "eth_blockNumber", [])["result"], 16)
            syncing = call_jsonrpc(client, endpoint, "eth_syncing", []).get("result") not in (False, None)
            return EndpointReadiness(**base, reachable=True, height=height, syncing=syncing)
        _, sync = call_rest(client, endpoint, "/eth/v1/node/syncing")
        _, fin = call_rest(client, endpoint, "/eth/v1/beacon/states/head/finality_checkpoints")
        return EndpointReadiness(**base, reachable=True, height=int(sync["data"]["head_slot"]),
                                 finalized_epochs=int(fin["data"]["finalized"]["epoch"]),
                                 syncing=bool(sync["data"].get("is_syncing", False)))
    except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
        log.debug("readiness probe of %s failed: %r", endpoint.label, exc)
        return EndpointReadiness(**base, reachable=False)


def check_readiness(fleet: list[Endpoint], threshold_epochs: int = DEFAULT_THRESHOLD_EPOCHS,
                    client: httpx.Client | None = None) -> ReadinessReport:
    """Gate: every endpoint reachable, one head height per layer, enough finality."""
    if not fleet:
        raise ConfigError("readiness check needs a non-empty fleet")
    with _client(client) as c, ThreadPoolExecutor(max_workers=len(fleet)) as pool:
        probes = sorted(pool.map(lambda e: _probe(c, e), fleet), key=lambda p: p.endpoint_id)
    failures: list[str] = []
    for p in probes:
        if not p.reachable:
            failures.append(f"endpoint {p.endpoint_id} ({p.label}) unreachable")
    for layer in LAYERS:
        heights = {p.endpoint_id: p.height for p in probes if p.layer == layer and p.reachable}
        if len(set(heights.values())) > 1:
            detail = ", ".join(f"{k}={v}" for k, v in sorted(heights.items()))
            failures.append(f"height mismatch on {layer}: {detail}")
    for p in probes:
        if p.layer == "CL" and p.reachable and (p.finalized_epochs or 0) < threshold_epochs:
            failures.append(f"endpoint {p.endpoint_id} ({p.label}) finalized {p.finalized_epochs} "
                            f"epochs, below threshold {threshold_epochs}")
    return ReadinessReport(tuple(probes), tuple(failures), threshold_epochs)


class _client:
    """Use a caller's client or own a short-lived one."""

    def __init__(self, client: httpx.Client | None):
        self.given = client
        self.owned: httpx.Client | None = None

    def __enter__(self) -> httpx.Client:
        if self.given is not None:
            return self.given
        self.owned = httpx.Client()
        return self.owned

    def __exit__(self, *exc) -> None:
        if self.owned is not None:
            self.owned.close()


# -- dispatch and rounds -----------------------------------------------------

def dispatch(request: TestRequest, fleet: list[Endpoint], client: httpx.Client | None = None) -> list[ResponseRecord]:
    """One record per endpoint, ordered by endpoint id.

    The payload is serialised once so every endpoint receives the same bytes.
    """
    if not fleet:
        return []
    payload = request.wire_bytes()
    ordered = sorted(fleet, key=lambda e: e.endpoint_id)
    with _client(client) as c, ThreadPoolExecutor(max_workers=len(ordered)) as pool:
        futures = [pool.submit(send, c, request, e, payload) for e in ordered]
        return [f.result() for f in futures]


def layer_of(request: TestRequest) -> str:
    return "EL" if request.transport == "jsonrpc_post" else "CL"


def partition(batch: Iterable[TestRequest], fleet: list[Endpoint], spec: ApiSpec | None = None) -> dict[str, list[Endpoint]]:
    """Endpoints per layer; fails before any dispatch if a request has no target."""
    by_layer = {layer: sorted((e for e in fleet if e.layer == layer), key=lambda e: e.endpoint_id) for layer in LAYERS}
    for req in batch:
        if spec is not None:
            method = spec.methods.get(req.method)
            if method is None:
                raise ConfigError(f"request {req.request_id} names unknown method {req.method!r}")
            if method.transport != req.transport:
                raise ConfigError(f"request {req.request_id} uses {req.transport} but {req.method} is {method.transport}")
        if not by_layer[layer_of(req)]:
            raise ConfigError(f"request {req.request_id} ({req.method}) targets the {layer_of(req)} layer, "
                              f"but the fleet has no {layer_of(req)} endpoints")
    return by_layer


@dataclass
class RoundEntry:
    request: TestRequest
    records: list[ResponseRecord]


@dataclass
class RoundLog:
    entries: list[RoundEntry] = field(default_factory=list)
    fleet: list[Endpoint] = field(default_factory=list)
    readiness: ReadinessReport | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def dumps(self) -> str:
        header = {"kind": "round", "fleet": [e.to_json() for e in self.fleet],
                  "readiness": self.readiness.to_json() if self.readiness else None}
        lines = [json.dumps(header, sort_keys=True)]
        for entry in self.entries:
            lines.append(json.dumps({"kind": "entry", "request": entry.request.to_json(),
                                     "records": [r.to_json() for r in entry.records]}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "RoundLog":
        log_ = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except ValueError as exc:
                raise ConfigError(f"round log line {n} is not JSON: {exc}") from exc
            if obj.get("kind") == "round":
                log_.fleet = [Endpoint(**e) for e in obj.get("fleet", [])]
                if obj.get("readiness"):
                    log_.readiness = ReadinessReport.from_json(obj["readiness"])
            elif obj.get("kind") == "entry":
                log_.entries.append(RoundEntry(TestRequest.from_json(obj["request"]),
                                               [ResponseRecord.from_json(r) for r in obj["records"]]))
            else:
                raise ConfigError(f"round log line {n} has unknown kind {obj.get('kind')!r}")
        return log_

    @classmethod
    def read(cls, path: str | Path) -> "RoundLog":
        try:
            return cls.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read round log {path}: {exc}") from exc


def run_round(spec: ApiSpec | None, fleet: list[Endpoint], batch: list[TestRequest], *,
              threshold_epochs: int = DEFAULT_THRESHOLD_EPOCHS, skip_readiness: bool = False,
              client: httpx.Client | None = None, readiness: ReadinessReport | None = None) -> RoundLog:
    """Readiness gate, then each request in order against its layer's endpoints.

    A ``readiness`` report taken moments earlier may be passed in to avoid
    probing twice.
    """
    check_fleet(fleet)
    by_layer = partition(batch, fleet, spec)
    with _client(client) as c:
        if fleet:
            if readiness is None:
                readiness = check_readiness(fleet, threshold_epochs, c)
            if not readiness.ready:
                if not skip_readiness:
                    raise ReadinessError(readiness)
                log.warning("fleet not ready, continuing anyway: %s", "; ".join(readiness.failures))
        entries = [RoundEntry(req, dispatch(req, by_layer[layer_of(req)], c)) for req in batch]
    return RoundLog(entries, sorted(fleet, key=lambda e: e.endpoint_id), readiness)
