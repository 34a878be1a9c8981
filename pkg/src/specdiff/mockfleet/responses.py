"""Canonical (injection-free) answers of a mock node.

The validation here is written against the conventions of real clients,
not derived from the bundled specification files, so generated requests
meet an independent implementation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Callable
from urllib.parse import parse_qsl, unquote

from ..facts import SLOTS_PER_EPOCH
from .chain import CHAIN_ID, GAS_LIMIT, ZERO_BLOOM, Block, SyntheticChain, Tx, digest

NOT_FOUND = -32001
INVALID_PARAMS = -32602
METHOD_NOT_FOUND = -32601
INVALID_REQUEST = -32600
PARSE_ERROR = -32700
MOCK_VERSION = "Mock/v1.0.0/linux-x86_64"
COMMITTEES_PER_SLOT = 2
DEPOSIT_PROOF_LENGTH = 33

_ADDRESS = re.compile(r"^0x[0-9a-fA-F]{40}$")
_HASH = re.compile(r"^0x[0-9a-fA-F]{64}$")
_QUANTITY = re.compile(r"^0x(0|[1-9a-fA-F][0-9a-fA-F]*)$")
_DECIMAL = re.compile(r"^[0-9]+$")
_PUBKEY = re.compile(r"^0x[0-9a-fA-F]{96}$")
_TAGS = ("earliest", "finalized", "safe", "latest", "pending")
_CL_TAGS = ("head", "genesis", "finalized", "justified")


@dataclass(frozen=True)
class NodeState:
    """Per-node view of sync progress (overridable for readiness tests)."""

    height: int
    finalized_epochs: int
    syncing: bool = False

    @classmethod
    def of(cls, chain: SyntheticChain, overrides: dict | None = None) -> "NodeState":
        o = overrides or {}
        return cls(int(o.get("height", chain.tip.number)), int(o.get("finalized_epochs", chain.finalized_epochs)),
                   bool(o.get("syncing", False)))

    def control(self) -> dict:
        return {"height": self.height, "finalized_epochs": self.finalized_epochs, "syncing": self.syncing}


def qty(n: int) -> str:
    return hex(n)


class RpcError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class RestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


# -- execution layer ---------------------------------------------------------

def _arg_address(v: Any) -> str:
    if not isinstance(v, str) or not _ADDRESS.match(v):
        raise ValueError("hex string of 40 digits expected for address")
    return v.lower()


def _arg_hash(v: Any) -> str:
    if not isinstance(v, str) or not _HASH.match(v):
        raise ValueError("hex string of 64 digits expected for hash")
    return v.lower()


def _arg_bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise ValueError("boolean expected")
    return v


def _arg_block_tag(v: Any) -> str | int:
    if isinstance(v, str) and v in _TAGS:
        return v
    if isinstance(v, str) and _QUANTITY.match(v):
        return int(v, 16)
    raise ValueError("block number or tag expected")


def _arg_block_ref(v: Any) -> str | int:
    if isinstance(v, str) and _HASH.match(v):
        return v.lower()
    return _arg_block_tag(v)


def _block(chain: SyntheticChain, ref: str | int) -> Block:
    if isinstance(ref, int):
        if ref >= len(chain.blocks):
            raise RpcError(NOT_FOUND, "block not found")
        return chain.blocks[ref]
    if ref in _TAGS:
        return chain.block_for_tag(ref)
    block = chain.block_by_hash.get(ref)
    if block is None:
        raise RpcError(NOT_FOUND, "block not found")
    return block


def _tx(chain: SyntheticChain, h: str) -> Tx:
    tx = chain.tx_by_hash.get(h)
    if tx is None:
        raise RpcError(NOT_FOUND, "transaction not found")
    return tx


def tx_json(chain: SyntheticChain, t: Tx) -> dict:
    return {
        "type": "0x0",
        "hash": t.hash,
        "blockHash": chain.blocks[t.block_number].hash,
        "blockNumber": qty(t.block_number),
        "transactionIndex": qty(t.index),
        "from": t.sender,
        "to": t.to,
        "nonce": qty(t.nonce),
        "value": qty(t.value),
        "gas": qty(t.gas),
        "gasPrice": qty(t.gas_price),
        "input": "0x",
        "chainId": qty(CHAIN_ID),
    }


def receipt_json(chain: SyntheticChain, t: Tx) -> dict:
    block = chain.blocks[t.block_number]
    cumulative = sum(x.gas for x in block.transactions[: t.index + 1])
    return {
        "type": "0x0",
        "transactionHash": t.hash,
        "transactionIndex": qty(t.index),
        "blockHash": block.hash,
        "blockNumber": qty(block.number),
        "from": t.sender,
        "to": t.to,
        "cumulativeGasUsed": qty(cumulative),
        "gasUsed": qty(t.gas),
        "contractAddress": None,
        "logs": [],
        "logsBloom": ZERO_BLOOM,
        "status": "0x1",
        "effectiveGasPrice": qty(t.gas_price),
    }


def block_json(chain: SyntheticChain, b: Block, hydrated: bool) -> dict:
    txs = [tx_json(chain, t) for t in b.transactions] if hydrated else [t.hash for t in b.transactions]
    return {
        "hash": b.hash,
        "parentHash": b.parent_hash,
        "number": qty(b.number),
        "miner": b.miner,
        "stateRoot": b.state_root,
        "transactionsRoot": b.transactions_root,
        "receiptsRoot": b.receipts_root,
        "logsBloom": ZERO_BLOOM,
        "gasLimit": qty(GAS_LIMIT),
        "gasUsed": qty(b.gas_used),
        "timestamp": qty(b.timestamp),
        "extraData": "0x",
        "baseFeePerGas": qty(b.base_fee),
        "size": qty(540 + 110 * len(b.transactions)),
        "transactions": txs,
    }


def _el_balance(chain, node, address, ref):
    block = _block(chain, ref)
    return qty(chain.balance_history[block.number].get(address, 0))


def _el_nonce(chain, node, address, ref):
    block = _block(chain, ref)
    return qty(chain.nonce_history[block.number].get(address, 0))


def _el_syncing(chain, node):
    if not node.syncing:
        return False
    return {"startingBlock": "0x0", "currentBlock": qty(node.height), "highestBlock": qty(chain.tip.number)}


# name → (argument parsers, number of required arguments, handler)
EL_METHODS: dict[str, tuple[tuple[Callable, ...], int, Callable]] = {
    "eth_blockNumber": ((), 0, lambda c, n: qty(c.tip.number)),
    "eth_chainId": ((), 0, lambda c, n: qty(CHAIN_ID)),
    "eth_syncing": ((), 0, _el_syncing),
    "eth_getBalance": ((_arg_address, _arg_block_ref), 2, _el_balance),
    "eth_getTransactionCount": ((_arg_address, _arg_block_ref), 2, _el_nonce),
    "eth_getBlockByNumber": ((_arg_block_tag, _arg_bool), 2,
                             lambda c, n, ref, full: block_json(c, _block(c, ref), full)),
    "eth_getBlockByHash": ((_arg_hash, _arg_bool), 2,
                           lambda c, n, h, full: block_json(c, _block(c, h), full)),
    "eth_getBlockReceipts": ((_arg_block_ref,), 1,
                             lambda c, n, ref: [receipt_json(c, t) for t in _block(c, ref).transactions]),
    "eth_getBlockTransactionCountByNumber": ((_arg_block_tag,), 1,
                                             lambda c, n, ref: qty(len(_block(c, ref).transactions))),
    "eth_getBlockTransactionCountByHash": ((_arg_hash,), 1,
                                           lambda c, n, h: qty(len(_block(c, h).transactions))),
    "eth_getTransactionByHash": ((_arg_hash,), 1, lambda c, n, h: tx_json(c, _tx(c, h))),
    "eth_getTransactionReceipt": ((_arg_hash,), 1, lambda c, n, h: receipt_json(c, _tx(c, h))),
}


def _el_result(method: Any, params: Any, chain: SyntheticChain, node: NodeState) -> Any:
    if not isinstance(method, str) or method not in EL_METHODS:
        raise RpcError(METHOD_NOT_FOUND, f"the method {method} does not exist/is not available")
    parsers, required, handler = EL_METHODS[method]
    if params is None:
        params = []
    if not isinstance(params, list):
        raise RpcError(INVALID_PARAMS, "non-array args")
    if len(params) > len(parsers):
        raise RpcError(INVALID_PARAMS, f"too many arguments, want at most {len(parsers)}")
    if len(params) < required:
        raise RpcError(INVALID_PARAMS, f"missing value for required argument {len(params)}")
    args = []
    for i, (parse, raw) in enumerate(zip(parsers, params)):
        try:
            args.append(parse(raw))
        except ValueError as exc:
            raise RpcError(INVALID_PARAMS, f"invalid argument {i}: {exc}") from None
    return handler(chain, node, *args)


def el_response(payload: Any, chain: SyntheticChain, node: NodeState) -> tuple[int, dict]:
    """JSON-RPC answer for an already-decoded request body."""
    if not isinstance(payload, dict) or payload.get("jsonrpc") != "2.0" or "method" not in payload:
        return 200, {"jsonrpc": "2.0", "id": None, "error": {"code": INVALID_REQUEST, "message": "invalid request"}}
    rid = payload.get("id")
    try:
        result = _el_result(payload["method"], payload.get("params"), chain, node)
    except RpcError as exc:
        return 200, {"jsonrpc": "2.0", "id": rid, "error": {"code": exc.code, "message": exc.message}}
    return 200, {"jsonrpc": "2.0", "id": rid, "result": result}


def parse_error() -> tuple[int, dict]:
    return 200, {"jsonrpc": "2.0", "id": None, "error": {"code": PARSE_ERROR, "message": "parse error"}}


# -- consensus layer ---------------------------------------------------------

def _slot_for_id(chain: SyntheticChain, ident: str, kind: str) -> int:
    """Resolve a block or state identifier to a slot."""
    label = "Block" if kind == "block" else "State"
    if ident in _CL_TAGS:
        return {"head": chain.current_slot, "genesis": 0, "finalized": chain.finalized_slot,
                "justified": chain.justified_slot}[ident]
    if _DECIMAL.match(ident):
        slot = int(ident)
        if slot > chain.current_slot:
            raise RestError(404, f"{label} not found")
        return slot
    if _HASH.match(ident):
        ident = ident.lower()
        if kind == "block":
            header = chain.header_by_root.get(ident)
            if header is None:
                raise RestError(404, "Block not found")
            return header.slot
        slot = chain.slot_by_state_root.get(ident)
        if slot is None:
            raise RestError(404, "State not found")
        return slot
    raise RestError(400, f"Invalid {kind} ID")


def _meta(chain: SyntheticChain, slot: int) -> dict:
    return {"execution_optimistic": False, "finalized": slot <= chain.finalized_slot}


def _uint_query(query: dict, name: str) -> int | None:
    if name not in query:
        return None
    if not _DECIMAL.match(query[name]):
        raise RestError(400, f"Invalid query parameter: {name}")
    return int(query[name])


def _cl_genesis(chain, node, p):
    return {"data": {"genesis_time": str(chain.blocks[0].timestamp),
                     "genesis_validators_root": "0x" + digest(chain.rng_seed, "gvr").hex(),
                     "genesis_fork_version": "0x10000038"}}


def _cl_header(chain, node, p):
    slot = _slot_for_id(chain, p["block_id"], "block")
    h = chain.headers[slot]
    return {**_meta(chain, slot), "data": {
        "root": h.root, "canonical": True,
        "header": {"message": {"slot": str(h.slot), "proposer_index": str(h.proposer_index),
                               "parent_root": h.parent_root, "state_root": h.state_root, "body_root": h.body_root},
                   "signature": h.signature}}}


def _cl_state_root(chain, node, p):
    slot = _slot_for_id(chain, p["state_id"], "state")
    return {**_meta(chain, slot), "data": {"root": chain.headers[slot].state_root}}


def _checkpoint(chain: SyntheticChain, epoch: int) -> dict:
    return {"epoch": str(epoch), "root": chain.headers[min(epoch * SLOTS_PER_EPOCH, chain.current_slot)].root}


def _cl_finality(chain, node, p):
    slot = _slot_for_id(chain, p["state_id"], "state")
    finalized = min(chain.finalized_epochs, max(0, slot // SLOTS_PER_EPOCH - 2))
    justified = min(chain.finalized_epochs + 1, max(0, slot // SLOTS_PER_EPOCH - 1))
    return {**_meta(chain, slot), "data": {
        "previous_justified": _checkpoint(chain, finalized),
        "current_justified": _checkpoint(chain, justified),
        "finalized": _checkpoint(chain, finalized)}}


def _validator_index(chain: SyntheticChain, ident: Any) -> int | None:
    if not isinstance(ident, str):
        raise RestError(400, "Invalid validator ID")
    if _DECIMAL.match(ident):
        i = int(ident)
        return i if i < len(chain.validators) else None
    if _PUBKEY.match(ident):
        ident = ident.lower()
        return next((v.index for v in chain.validators if v.pubkey == ident), None)
    raise RestError(400, "Invalid validator ID")


def _cl_validator(chain, node, p):
    slot = _slot_for_id(chain, p["state_id"], "state")
    i = _validator_index(chain, p["validator_id"])
    if i is None:
        raise RestError(404, "Validator not found")
    v = chain.validators[i]
    return {**_meta(chain, slot), "data": {
        "index": str(v.index), "balance": str(v.balance), "status": "active_ongoing",
        "validator": {"pubkey": v.pubkey, "effective_balance": "32000000000", "slashed": False,
                      "activation_epoch": str(v.activation_epoch)}}}


def _cl_identities(chain, node, p):
    slot = _slot_for_id(chain, p["state_id"], "state")
    body = p.get("body")
    if body is None or body == []:
        chosen = list(range(len(chain.validators)))
    elif isinstance(body, list):
        chosen = sorted({i for i in (_validator_index(chain, x) for x in body) if i is not None})
    else:
        raise RestError(400, "Unable to decode data")
    return {**_meta(chain, slot), "data": [
        {"index": str(i), "pubkey": chain.validators[i].pubkey,
         "activation_epoch": str(chain.validators[i].activation_epoch)} for i in chosen]}


def _cl_committees(chain, node, p):
    slot = _slot_for_id(chain, p["state_id"], "state")
    q = p["query"]
    epoch = _uint_query(q, "epoch")
    index = _uint_query(q, "index")
    at_slot = _uint_query(q, "slot")
    if epoch is None:
        epoch = slot // SLOTS_PER_EPOCH
    if epoch > chain.current_epoch + 1:
        raise RestError(400, "Epoch out of range")
    n = len(chain.validators)
    order = sorted(range(n), key=lambda v: digest(chain.rng_seed, "shuffle", epoch, v))
    size = max(1, n // (SLOTS_PER_EPOCH * COMMITTEES_PER_SLOT))
    data = []
    for k in range(SLOTS_PER_EPOCH * COMMITTEES_PER_SLOT):
        s = epoch * SLOTS_PER_EPOCH + k // COMMITTEES_PER_SLOT
        ci = k % COMMITTEES_PER_SLOT
        if (index is not None and ci != index) or (at_slot is not None and s != at_slot):
            continue
        members = order[k * size:(k + 1) * size]
        data.append({"index": str(ci), "slot": str(s), "validators": [str(v) for v in members]})
    return {**_meta(chain, slot), "data": data}


def _identity_addresses(chain: SyntheticChain) -> tuple[list[str], list[str]]:
    pid = chain.identity_peer_id
    return [f"/ip4/127.0.0.1/tcp/9000/p2p/{pid}"], [f"/ip4/127.0.0.1/udp/9000/p2p/{pid}"]


def _cl_identity(chain, node, p):
    p2p, disc = _identity_addresses(chain)
    return {"data": {
        "peer_id": chain.identity_peer_id,
        "enr": "enr:-" + digest(chain.rng_seed, "self-enr").hex(),
        "p2p_addresses": p2p, "discovery_addresses": disc,
        "metadata": {"seq_number": "1", "attnets": "0x0000000000000000", "syncnets": "0x00"}}}


def _peer_json(peer) -> dict:
    return {"peer_id": peer.peer_id, "enr": peer.enr, "last_seen_p2p_address": peer.address,
            "state": peer.state, "direction": peer.direction}


_PEER_STATES = ("disconnected", "connecting", "connected", "disconnecting")
_DIRECTIONS = ("inbound", "outbound")


def _multi(query_pairs: list[tuple[str, str]], name: str, allowed: tuple[str, ...]) -> set[str] | None:
    values = [v for k, v in query_pairs if k == name]
    if not values:
        return None
    out = set()
    for v in values:
        for part in v.split(","):
            if part not in allowed:
                raise RestError(400, f"Invalid query parameter: {name}")
            out.add(part)
    return out


def _cl_peers(chain, node, p):
    states = _multi(p["pairs"], "state", _PEER_STATES)
    dirs = _multi(p["pairs"], "direction", _DIRECTIONS)
    peers = [_peer_json(x) for x in chain.peers
             if (states is None or x.state in states) and (dirs is None or x.direction in dirs)]
    return {"data": peers, "meta": {"count": len(peers)}}


def _cl_peer(chain, node, p):
    for x in chain.peers:
        if x.peer_id == p["peer_id"]:
            return {"data": _peer_json(x)}
    raise RestError(404, "Peer not found")


def _cl_syncing(chain, node, p):
    distance = max(0, chain.current_slot - node.height) if node.syncing else 0
    head = node.height if node.syncing else chain.current_slot
    return {"data": {"head_slot": str(head), "sync_distance": str(distance), "is_syncing": node.syncing,
                     "is_optimistic": False, "el_offline": False}}


def _cl_version(chain, node, p):
    return {"data": {"version": MOCK_VERSION}}


def _cl_publish(chain, node, p):
    body = p.get("body")
    try:
        deposits = body["message"]["body"]["deposits"]
        if not isinstance(deposits, list) or not isinstance(body["signature"], str):
            raise TypeError
        proofs = [d["proof"] for d in deposits]
        if not all(isinstance(x, list) for x in proofs):
            raise TypeError
    except (KeyError, TypeError):
        raise RestError(400, "Unable to decode data") from None
    for proof in proofs:
        if len(proof) != DEPOSIT_PROOF_LENGTH:
            raise RestError(400, f"Invalid block: expected {DEPOSIT_PROOF_LENGTH} and {len(proof)} found")
    return None


@dataclass(frozen=True)
class Route:
    operation: str
    verb: str
    pattern: re.Pattern
    query: tuple[str, ...]
    handler: Callable


def _route(operation: str, verb: str, template: str, query: tuple[str, ...], handler: Callable) -> Route:
    regex = "^" + re.sub(r"\\\{(\w+)\\\}", r"(?P<\1>[^/]+)", re.escape(template)) + "$"
    return Route(operation, verb, re.compile(regex), query, handler)


CL_ROUTES = (
    _route("getGenesis", "GET", "/eth/v1/beacon/genesis", (), _cl_genesis),
    _route("getBlockHeader", "GET", "/eth/v1/beacon/headers/{block_id}", (), _cl_header),
    _route("getStateRoot", "GET", "/eth/v1/beacon/states/{state_id}/root", (), _cl_state_root),
    _route("getStateFinalityCheckpoints", "GET", "/eth/v1/beacon/states/{state_id}/finality_checkpoints", (),
           _cl_finality),
    _route("getStateValidator", "GET", "/eth/v1/beacon/states/{state_id}/validators/{validator_id}", (),
           _cl_validator),
    _route("postStateValidatorIdentities", "POST", "/eth/v1/beacon/states/{state_id}/validator_identities", (),
           _cl_identities),
    _route("getEpochCommittees", "GET", "/eth/v1/beacon/states/{state_id}/committees", ("epoch", "index", "slot"),
           _cl_committees),
    _route("getNodeIdentity", "GET", "/eth/v1/node/identity", (), _cl_identity),
    _route("getPeers", "GET", "/eth/v1/node/peers", ("state", "direction"), _cl_peers),
    _route("getPeer", "GET", "/eth/v1/node/peers/{peer_id}", (), _cl_peer),
    _route("getSyncingStatus", "GET", "/eth/v1/node/syncing", (), _cl_syncing),
    _route("getNodeVersion", "GET", "/eth/v1/node/version", (), _cl_version),
    _route("publishBlockV2", "POST", "/eth/v2/beacon/blocks", (), _cl_publish),
)


def match_route(verb: str, path: str) -> tuple[Route, dict[str, str]]:
    """Route and decoded path parameters; raises RestError 404/405."""
    wrong_verb = False
    for r in CL_ROUTES:
        m = r.pattern.match(path)
        if m is None:
            continue
        if r.verb != verb:
            wrong_verb = True
            continue
        return r, {k: unquote(v) for k, v in m.groupdict().items()}
    if wrong_verb:
        raise RestError(405, "Method not allowed")
    raise RestError(404, "Route not found")


def cl_response(verb: str, path: str, query_string: str, body: Any, chain: SyntheticChain,
                node: NodeState) -> tuple[int, Any, str | None]:
    """``(status, body, operation)`` for one REST call."""
    operation = None
    try:
        route, params = match_route(verb, path)
        operation = route.operation
        pairs = parse_qsl(query_string, keep_blank_values=True)
        unknown = sorted({k for k, _ in pairs} - set(route.query))
        if unknown:
            raise RestError(400, f"Unknown query parameter: {unknown[0]}")
        data = route.handler(chain, node, {**params, "query": dict(pairs), "pairs": pairs, "body": body})
    except RestError as exc:
        return exc.status, {"code": exc.status, "message": exc.message}, operation
    return 200, data, operation


def canonical_response(method: str, params: Any, chain: SyntheticChain, node: NodeState | None = None,
                       request_id: int = 1) -> tuple[int, Any]:
    """Answer without transport: JSON-RPC method + positional params, or a
    REST operation id + ``{"path": ..., "body": ...}``."""
    node = node or NodeState.of(chain)
    if method in EL_METHODS or not any(r.operation == method for r in CL_ROUTES):
        return el_response({"jsonrpc": "2.0", "id": request_id, "method": method, "params": params}, chain, node)
    route = next(r for r in CL_ROUTES if r.operation == method)
    path, _, query = params["path"].partition("?")
    status, body, _ = cl_response(route.verb, path, query, params.get("body"), chain, node)
    return status, body
