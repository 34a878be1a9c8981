"""Per-node divergence injections applied on top of canonical responses."""

from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field
from typing import Any

from ..errors import ConfigError
from ..schema import split_pointer

ACTIONS = ("drop_field", "extra_field", "reformat", "wrong_value", "wrong_status", "error_message", "stall",
           "crash_message")
TRANSFORMS = ("pad_hex", "upper_hex", "pad_decimal")
LABELS = ("genuine", "benign")
_HEX = re.compile(r"^0x[0-9a-fA-F]+$")


@dataclass(frozen=True)
class DivergenceInjection:
    node_selector: int | str
    method: str
    action: str
    path: str | None = None
    value: Any = None
    transform: str | None = None
    status: int | None = None
    text: str | None = None
    ms: int | None = None
    trigger: dict | None = None
    label: str | None = None
    note: str | None = None

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ConfigError(f"unknown injection action {self.action!r}")
        if self.action in ("drop_field", "extra_field", "reformat", "wrong_value") and not self.path:
            raise ConfigError(f"{self.action} injection on {self.method} needs a path")
        if self.action == "reformat" and self.transform not in TRANSFORMS:
            raise ConfigError(f"reformat injection needs a transform in {TRANSFORMS}")
        if self.action == "wrong_status" and not isinstance(self.status, int):
            raise ConfigError("wrong_status injection needs an integer status")
        if self.action in ("error_message", "crash_message") and not isinstance(self.text, str):
            raise ConfigError(f"{self.action} injection needs text")
        if self.action == "stall" and (not isinstance(self.ms, int) or self.ms < 0):
            raise ConfigError("stall injection needs non-negative ms")
        if self.label is not None and self.label not in LABELS:
            raise ConfigError(f"injection label must be one of {LABELS}")
        if self.trigger is not None and ("param" not in self.trigger
                                         or not ({"equals", "in"} & set(self.trigger))):
            raise ConfigError("trigger needs 'param' and 'equals' or 'in'")

    @classmethod
    def from_json(cls, data: dict) -> "DivergenceInjection":
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"bad injection {data!r}: {exc}") from exc

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def targets(self, node_index: int) -> bool:
        if isinstance(self.node_selector, int) and not isinstance(self.node_selector, bool):
            return self.node_selector == node_index
        return self.node_selector == f"node-{node_index}"

    def fires(self, params: dict[str, Any]) -> bool:
        if self.trigger is None:
            return True
        key = str(self.trigger["param"])
        if key not in params:
            return False
        actual = params[key]
        if "equals" in self.trigger:
            return actual == self.trigger["equals"]
        return actual in self.trigger["in"]


@dataclass
class Scenario:
    chain_seed: int = 7
    node_count: int = 3
    injections: list[DivergenceInjection] = field(default_factory=list)
    node_overrides: dict[str, dict] = field(default_factory=dict)
    description: str | None = None

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ConfigError("a fleet needs at least one node")
        for inj in self.injections:
            idx = inj.node_selector if isinstance(inj.node_selector, int) else _node_index(inj.node_selector)
            if idx is None or not 0 <= idx < self.node_count:
                raise ConfigError(f"injection selects unknown node {inj.node_selector!r}")

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        return cls(
            chain_seed=int(data.get("chain_seed", 7)),
            node_count=int(data.get("node_count", 3)),
            injections=[DivergenceInjection.from_json(i) for i in data.get("injections", [])],
            node_overrides={str(k): v for k, v in data.get("node_overrides", {}).items()},
            description=data.get("description"),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        from pathlib import Path
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read scenario {path}: {exc}") from exc

    def to_json(self) -> dict:
        out: dict[str, Any] = {"chain_seed": self.chain_seed, "node_count": self.node_count,
                               "injections": [i.to_json() for i in self.injections]}
        if self.node_overrides:
            out["node_overrides"] = self.node_overrides
        if self.description:
            out["description"] = self.description
        return out

    def overrides_for(self, node_index: int) -> dict:
        return self.node_overrides.get(str(node_index)) or self.node_overrides.get(f"node-{node_index}") or {}


def _node_index(selector: str) -> int | None:
    m = re.fullmatch(r"node-(\d+)", selector)
    return int(m.group(1)) if m else None


# -- applying ----------------------------------------------------------------

def _locate(doc: Any, tokens: list[str]) -> list[tuple[Any, Any]]:
    """(container, key) pairs addressed by ``tokens``; ``*`` expands."""
    if not tokens:
        return []
    parents = [doc]
    for token in tokens[:-1]:
        nxt = []
        for node in parents:
            nxt.extend(_children(node, token))
        parents = nxt
    last = tokens[-1]
    out = []
    for node in parents:
        if last == "*":
            if isinstance(node, list):
                out.extend((node, i) for i in range(len(node)))
            elif isinstance(node, dict):
                out.extend((node, k) for k in node)
        elif isinstance(node, dict):
            out.append((node, last))
        elif isinstance(node, list) and last.isdigit() and int(last) < len(node):
            out.append((node, int(last)))
    return out


def _children(node: Any, token: str) -> list:
    if token == "*":
        if isinstance(node, list):
            return list(node)
        if isinstance(node, dict):
            return list(node.values())
        return []
    if isinstance(node, dict) and token in node:
        return [node[token]]
    if isinstance(node, list) and token.isdigit() and int(token) < len(node):
        return [node[int(token)]]
    return []


def _present(container: Any, key: Any) -> bool:
    return key in container if isinstance(container, dict) else 0 <= key < len(container)


def reformat_value(value: Any, transform: str) -> Any:
    if not isinstance(value, str):
        return value
    if transform in ("pad_hex", "upper_hex") and _HEX.match(value):
        digits = value[2:]
        return "0x" + ("00" + digits if transform == "pad_hex" else digits.upper())
    if transform == "pad_decimal" and value.isdigit():
        return "00" + value
    return value


def is_error(status: int, body: Any) -> bool:
    if isinstance(body, dict) and "error" in body and "jsonrpc" in body:
        return True
    return status >= 400


def apply_injection(inj: DivergenceInjection, status: int, body: Any, jsonrpc: bool) -> tuple[int, Any]:
    """New ``(status, body)``; unresolvable paths leave the response as is."""
    if inj.action == "wrong_status":
        return inj.status, body
    if inj.action == "crash_message":
        if jsonrpc:
            rid = body.get("id") if isinstance(body, dict) else None
            return 200, {"jsonrpc": "2.0", "id": rid, "error": {"code": -32603, "message": inj.text}}
        return 500, {"code": 500, "message": inj.text}
    if inj.action == "error_message":
        if not is_error(status, body):
            return status, body
        body = copy.deepcopy(body)
        target = body["error"] if jsonrpc else body
        # with a value set, only that exact original message is reworded
        if isinstance(target, dict) and "message" in target and inj.value in (None, target["message"]):
            target["message"] = inj.text
        return status, body
    if inj.action == "stall":
        return status, body
    body = copy.deepcopy(body)
    tokens = split_pointer(inj.path)
    if inj.action == "extra_field":
        for container, key in _locate(body, tokens):
            if isinstance(container, dict) and key not in container:
                container[key] = copy.deepcopy(inj.value)
        return status, body
    for container, key in _locate(body, tokens):
        if not _present(container, key):
            continue
        if inj.action == "drop_field":
            if isinstance(container, dict):
                del container[key]
        elif inj.action == "wrong_value":
            container[key] = copy.deepcopy(inj.value)
        elif inj.action == "reformat":
            container[key] = reformat_value(container[key], inj.transform)
    if inj.action == "drop_field":
        # list elements are removed back to front so indices stay valid
        for container, key in sorted((c for c in _locate(body, tokens) if isinstance(c[0], list)),
                                     key=lambda c: -c[1]):
            del container[key]
    return status, body
