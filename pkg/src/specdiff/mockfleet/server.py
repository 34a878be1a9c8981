"""HTTP front end for mock nodes and fleet lifecycle."""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qsl, urlsplit

from ..errors import ConfigError
from ..harness import CONTROL_PATH, DEFAULT_TIMEOUT_MS, Endpoint
from .chain import SyntheticChain, build_chain
from .injections import DivergenceInjection, Scenario, apply_injection
from .responses import NodeState, cl_response, el_response, match_route, parse_error, RestError

log = logging.getLogger(__name__)


def _encode(body: Any) -> bytes:
    if body is None:
        return b""
    return json.dumps(body, separators=(",", ":")).encode()


@dataclass
class MockNode:
    index: int
    chain: SyntheticChain
    state: NodeState
    injections: list[DivergenceInjection]
    received: list[tuple[str, str, bytes]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def label(self) -> str:
        return f"node-{self.index}"

    def record(self, verb: str, target: str, raw: bytes) -> None:
        with self.lock:
            self.received.append((verb, target, raw))

    def handle(self, verb: str, target: str, raw: bytes) -> tuple[int, bytes]:
        """Status and body bytes for one HTTP exchange."""
        split = urlsplit(target)
        if verb == "GET" and split.path == CONTROL_PATH:
            return 200, _encode(self.state.control())
        if verb == "POST" and split.path == "/":
            try:
                payload = json.loads(raw) if raw else None
            except ValueError:
                return _pair(parse_error())
            status, body = el_response(payload, self.chain, self.state)
            method = payload.get("method") if isinstance(payload, dict) else None
            params = payload.get("params") if isinstance(payload, dict) else None
            trigger_view = {str(i): v for i, v in enumerate(params)} if isinstance(params, list) else {}
            return self._inject(method, trigger_view, status, body, jsonrpc=True)
        body_in: Any = None
        if raw:
            try:
                body_in = json.loads(raw)
            except ValueError:
                return 400, _encode({"code": 400, "message": "Unable to decode data"})
        status, body, operation = cl_response(verb, split.path, split.query, body_in, self.chain, self.state)
        view: dict[str, Any] = dict(parse_qsl(split.query))
        try:
            view.update(match_route(verb, split.path)[1])
        except RestError:
            pass
        return self._inject(operation, view, status, body, jsonrpc=False)

    def _inject(self, method: str | None, params: dict, status: int, body: Any, jsonrpc: bool) -> tuple[int, bytes]:
        for inj in self.injections:
            if inj.method != method or not inj.fires(params):
                continue
            if inj.action == "stall":
                time.sleep(inj.ms / 1000)
            status, body = apply_injection(inj, status, body, jsonrpc)
        return status, _encode(body)


def _pair(resp: tuple[int, Any]) -> tuple[int, bytes]:
    return resp[0], _encode(resp[1])


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "_NodeServer"

    def setup(self) -> None:
        super().setup()
        # headers and body go out in separate writes; avoid delayed-ACK stalls
        self.connection.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def _serve(self, verb: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        node = self.server.node
        node.record(verb, self.path, raw)
        try:
            status, payload = node.handle(verb, self.path, raw)
        except Exception:  # a mock crash still answers, like a real client's panic handler
            log.exception("mock node %s failed on %s %s", node.label, verb, self.path)
            status, payload = 500, _encode({"code": 500, "message": "internal error"})
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if payload:
            try:
                self.wfile.write(payload)
            except (BrokenPipeError, ConnectionResetError):
                pass

    def do_GET(self) -> None:  # noqa: N802 - stdlib hook name
        self._serve("GET")

    def do_POST(self) -> None:  # noqa: N802
        self._serve("POST")

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s: " + fmt, self.server.node.label, *args)


class _NodeServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, node: MockNode):
        self.node = node
        super().__init__(("127.0.0.1", 0), _Handler)


class MockFleet:
    """Running mock nodes; use as a context manager or call :meth:`close`."""

    def __init__(self, nodes: list[MockNode], servers: list[_NodeServer], endpoints: list[Endpoint]):
        self.nodes = nodes
        self.servers = servers
        self.endpoints = endpoints
        self._threads = []
        for s in servers:
            t = threading.Thread(target=s.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
            t.start()
            self._threads.append(t)

    @property
    def el(self) -> list[Endpoint]:
        return [e for e in self.endpoints if e.layer == "EL"]

    @property
    def cl(self) -> list[Endpoint]:
        return [e for e in self.endpoints if e.layer == "CL"]

    def close(self) -> None:
        for s in self.servers:
            s.shutdown()
            s.server_close()

    def __enter__(self) -> "MockFleet":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def spawn_fleet(chain_seed: int = 7, node_count: int = 3, injections: list[DivergenceInjection] | None = None,
                *, node_overrides: dict | None = None, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> MockFleet:
    """Start ``node_count`` nodes over the chain for ``chain_seed``.

    Each node answers both API families, so the fleet exposes ``2 ×
    node_count`` endpoints: EL ids ``0..n-1`` then CL ids ``n..2n-1``.
    """
    scenario = Scenario(chain_seed, node_count, list(injections or []), dict(node_overrides or {}))
    return spawn_scenario(scenario, timeout_ms=timeout_ms)


def spawn_scenario(scenario: Scenario, *, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> MockFleet:
    chain = build_chain(scenario.chain_seed)
    nodes, servers = [], []
    try:
        for i in range(scenario.node_count):
            own = [inj for inj in scenario.injections if inj.targets(i)]
            node = MockNode(i, chain, NodeState.of(chain, scenario.overrides_for(i)), own)
            nodes.append(node)
            servers.append(_NodeServer(node))
    except OSError as exc:
        for s in servers:
            s.server_close()
        raise ConfigError(f"could not allocate a port for mock node {len(servers)}: {exc}") from exc
    n = scenario.node_count
    endpoints = []
    for layer, offset in (("EL", 0), ("CL", n)):
        for i, s in enumerate(servers):
            host, port = s.server_address[:2]
            endpoints.append(Endpoint(offset + i, f"node-{i}/{layer.lower()}", f"http://{host}:{port}", layer,
                                      timeout_ms))
    return MockFleet(nodes, servers, endpoints)
