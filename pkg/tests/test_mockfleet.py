import json
import re

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdiff.errors import ConfigError
from specdiff.generate import TestMix, gen_batch
from specdiff.harness import dispatch, run_round
from specdiff.mockfleet import DivergenceInjection, Scenario, apply_injection, build_chain, canonical_response, \
    spawn_fleet
from specdiff.filtering import diff_records

from .oracles import hex_int

QUANTITY = re.compile(r"^0x(0|[1-9a-f][0-9a-f]*)$")


@pytest.fixture(scope="module")
def chain():
    return build_chain(7)


def test_chain_invariants(chain):
    assert [b.number for b in chain.blocks] == list(range(len(chain.blocks)))
    assert len({b.hash for b in chain.blocks}) == len(chain.blocks)
    assert all(b.parent_hash == p.hash for p, b in zip(chain.blocks, chain.blocks[1:]))
    assert all(v >= 0 for v in chain.accounts.values())
    assert len(chain.accounts) == 128
    assert sum(len(b.transactions) for b in chain.blocks) == 256
    assert chain.current_slot == 64 and chain.finalized_epochs == 5


def test_chain_is_seed_determined():
    assert build_chain(7).blocks == build_chain(7).blocks
    assert build_chain(7).blocks[1].hash != build_chain(8).blocks[1].hash


def test_balance_of_known_and_unknown_accounts(chain):
    address = sorted(chain.accounts)[0]
    status, body = canonical_response("eth_getBalance", [address, "latest"], chain)
    assert status == 200 and QUANTITY.match(body["result"])
    assert hex_int(body["result"]) == chain.accounts[address]
    _, body = canonical_response("eth_getBalance", ["0x" + "00" * 19 + "01", "latest"], chain)
    assert body["result"] == "0x0"


def test_block_number_is_tip(chain):
    _, body = canonical_response("eth_blockNumber", [], chain)
    assert hex_int(body["result"]) == chain.tip.number == 64


def test_unknown_method_and_bad_params(chain):
    _, body = canonical_response("eth_noSuchThing", [], chain)
    assert body["error"]["code"] == -32601
    _, body = canonical_response("eth_getBalance", [True, "latest"], chain)
    assert body["error"]["code"] == -32602
    _, body = canonical_response("eth_getBlockByHash", ["0x" + "ee" * 32, False], chain)
    assert body["error"] == {"code": -32001, "message": "block not found"}


def test_required_rest_operations(chain):
    for op, path in [("getBlockHeader", "/eth/v1/beacon/headers/head"), ("getPeers", "/eth/v1/node/peers"),
                     ("getSyncingStatus", "/eth/v1/node/syncing")]:
        status, body = canonical_response(op, {"path": path}, chain)
        assert status == 200 and "data" in body
    status, body = canonical_response("getBlockHeader", {"path": "/eth/v1/beacon/headers/0x" + "ab" * 32}, chain)
    assert status == 404 and body["message"] == "Block not found"


def test_clean_fleet_serves_identical_bytes(clean_fleet, bundled_spec):
    batch = gen_batch(bundled_spec, TestMix(3, 3, 0), 21)
    log = run_round(bundled_spec, clean_fleet.endpoints, batch)
    for entry in log.entries:
        assert len({r.raw_body for r in entry.records}) == 1
        assert diff_records(entry.records) == []


def test_injection_locality_and_status(bundled_spec):
    injections = [DivergenceInjection(1, "eth_getBlockByNumber", "drop_field", path="/result/miner"),
                  DivergenceInjection(2, "eth_chainId", "wrong_status", status=500)]
    with spawn_fleet(7, 3, injections) as fleet, spawn_fleet(7, 3) as clean:
        batch = [r for r in gen_batch(bundled_spec, TestMix(0, 4, 0), 2)
                 if r.method in ("eth_getBlockByNumber", "eth_chainId")]
        with httpx.Client() as client:
            for req in batch:
                got = dispatch(req, fleet.el, client)
                ref = dispatch(req, clean.el, client)
                if req.method == "eth_chainId":
                    assert [r.http_status for r in got] == [200, 200, 500]
                    assert "/$status" in {d.field_path for d in diff_records(got)}
                else:
                    assert got[0].raw_body == ref[0].raw_body and got[2].raw_body == ref[2].raw_body
                    if isinstance(ref[1].body.get("result"), dict):
                        assert "miner" not in got[1].body["result"]


def test_node_identity_is_shared(clean_fleet):
    bodies = {httpx.get(e.url("/eth/v1/node/identity")).content for e in clean_fleet.cl}
    assert len(bodies) == 1


def test_control_endpoint(clean_fleet):
    doc = httpx.get(clean_fleet.endpoints[0].url("/__control/status")).json()
    assert doc == {"height": 64, "finalized_epochs": 5, "syncing": False}


def test_scenario_validation():
    with pytest.raises(ConfigError):
        Scenario.from_json({"node_count": 2, "injections": [
            {"node_selector": 5, "method": "x", "action": "stall", "ms": 1}]})
    with pytest.raises(ConfigError):
        DivergenceInjection(0, "m", "drop_field")
    with pytest.raises(ConfigError):
        DivergenceInjection(0, "m", "reformat", path="/a", transform="rot13")
    scenario = Scenario.from_json({"injections": [{"node_selector": "node-1", "method": "m", "action": "stall",
                                                   "ms": 5}]})
    assert Scenario.from_json(scenario.to_json()) == scenario


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 64 - 1))
def test_pad_hex_preserves_quantity(n):
    inj = DivergenceInjection(0, "m", "reformat", path="/result", transform="pad_hex")
    _, body = apply_injection(inj, 200, {"result": hex(n)}, True)
    assert body["result"] != hex(n) and hex_int(body["result"]) == n


def test_injection_without_resolvable_path_is_noop():
    inj = DivergenceInjection(0, "m", "drop_field", path="/result/absent/deeper")
    original = {"jsonrpc": "2.0", "id": 1, "result": {"a": 1}}
    assert apply_injection(inj, 200, original, True) == (200, original)


def test_error_message_only_rewrites_matching_text():
    inj = DivergenceInjection(0, "m", "error_message", value="old", text="new")
    status, body = apply_injection(inj, 200, {"jsonrpc": "2.0", "id": 1, "error": {"code": 1, "message": "old"}}, True)
    assert body["error"]["message"] == "new"
    _, body = apply_injection(inj, 200, {"jsonrpc": "2.0", "id": 1, "error": {"code": 1, "message": "other"}}, True)
    assert body["error"]["message"] == "other"


def test_responses_repeat_byte_for_byte(bundled_spec):
    batch = gen_batch(bundled_spec, TestMix(2, 2, 0), 8)
    runs = []
    for _ in range(2):
        with spawn_fleet(7, 2) as fleet:
            runs.append([json.dumps([r.raw_body.decode() for r in e.records])
                         for e in run_round(bundled_spec, fleet.endpoints, batch).entries])
    assert runs[0] == runs[1]
