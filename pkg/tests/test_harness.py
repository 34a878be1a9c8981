import json
import socket

import httpx
import pytest

from specdiff.errors import ConfigError, ReadinessError
from specdiff.generate import TestMix, gen_batch, with_id
from specdiff.harness import Endpoint, ResponseRecord, RoundLog, check_readiness, dispatch, load_fleet, run_round
from specdiff.mockfleet import DivergenceInjection, spawn_fleet


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def small_batch(bundled_spec):
    return [r for r in gen_batch(bundled_spec, TestMix(1, 1, 0), 4)
            if r.method in ("eth_blockNumber", "eth_getBalance", "getPeers", "getBlockHeader")]


def test_clean_fleet_is_ready(clean_fleet):
    report = check_readiness(clean_fleet.endpoints)
    assert report.ready and report.failures == ()
    assert {e.height for e in report.endpoints} == {64}


def test_height_mismatch_blocks_the_round(bundled_spec, small_batch):
    with spawn_fleet(7, 3, node_overrides={"2": {"height": 63}}) as fleet:
        report = check_readiness(fleet.endpoints)
        assert not report.ready
        assert any(f.startswith("height mismatch on EL") for f in report.failures)
        with pytest.raises(ReadinessError):
            run_round(bundled_spec, fleet.endpoints, small_batch)
        log = run_round(bundled_spec, fleet.endpoints, small_batch, skip_readiness=True)
        assert len(log) == len(small_batch)


def test_finality_threshold(bundled_spec):
    with spawn_fleet(7, 1, node_overrides={"0": {"finalized_epochs": 1}}) as fleet:
        assert not check_readiness(fleet.endpoints, threshold_epochs=2).ready
        assert check_readiness(fleet.endpoints, threshold_epochs=1).ready


def test_single_endpoint_with_zero_threshold():
    with spawn_fleet(7, 1) as fleet:
        assert check_readiness(fleet.el, threshold_epochs=0).ready


def test_unreachable_endpoint_is_reported():
    dead = Endpoint(0, "dead", f"http://127.0.0.1:{_free_port()}", "EL", 300)
    report = check_readiness([dead])
    assert report.failures == ("endpoint 0 (dead) unreachable",)


def test_syncing_node_is_flagged():
    with spawn_fleet(7, 2, node_overrides={"1": {"syncing": True}}) as fleet:
        assert check_readiness(fleet.endpoints).syncing_ids() == {1, 3}


def test_dispatch_orders_by_endpoint_id(clean_fleet, small_batch):
    shuffled = list(reversed(clean_fleet.el))
    req = next(r for r in small_batch if r.method == "eth_blockNumber")
    records = dispatch(req, shuffled)
    assert [r.endpoint_id for r in records] == [0, 1, 2]
    assert all(r.http_status == 200 and r.transport_error is None for r in records)
    assert all(r.request_id == req.request_id for r in records)


def test_every_node_receives_the_same_bytes(bundled_spec):
    with spawn_fleet(7, 3) as fleet:
        req = with_id(gen_batch(bundled_spec, TestMix(0, 1, 0), 9)[0], 77)
        dispatch(req, fleet.el if req.transport == "jsonrpc_post" else fleet.cl)
        seen = [node.received[-1] for node in fleet.nodes]
        assert len(set(seen)) == 1
        verb, target, raw = seen[0]
        assert verb == req.http_method
        if req.transport == "jsonrpc_post":
            assert json.loads(raw) == req.body
            assert raw == req.wire_bytes()


def test_stall_times_out_only_the_slow_node(bundled_spec, small_batch):
    inj = [DivergenceInjection(1, "eth_blockNumber", "stall", ms=1500)]
    with spawn_fleet(7, 3, inj, timeout_ms=400) as fleet:
        req = next(r for r in small_batch if r.method == "eth_blockNumber")
        records = dispatch(req, fleet.el)
    assert [r.transport_error for r in records] == [None, "timeout", None]
    assert records[1].http_status is None and records[1].body is None
    assert records[0].body == records[2].body


def test_connect_failure_is_a_record_not_an_exception(clean_fleet, small_batch):
    dead = Endpoint(9, "dead", f"http://127.0.0.1:{_free_port()}", "EL", 300)
    req = next(r for r in small_batch if r.method == "eth_blockNumber")
    records = dispatch(req, clean_fleet.el + [dead])
    assert records[-1].transport_error == "connect_failure"


def test_record_invariants():
    with pytest.raises(ValueError):
        ResponseRecord(0, 1, None, None, b"")
    with pytest.raises(ValueError):
        ResponseRecord(0, 1, 200, {"a": 1}, b"x", "non_json")
    with pytest.raises(ValueError):
        ResponseRecord(0, 1, 200, None, b"", "hiccup")


def test_round_log_round_trip(bundled_spec, clean_fleet, small_batch):
    log = run_round(bundled_spec, clean_fleet.endpoints, small_batch)
    assert [e.request.request_id for e in log.entries] == [r.request_id for r in small_batch]
    again = RoundLog.loads(log.dumps())
    assert again.dumps() == log.dumps()
    assert again.entries[0].records[0].raw_body == log.entries[0].records[0].raw_body


def test_replaying_a_batch_gives_the_same_bodies(bundled_spec, clean_fleet, small_batch):
    first = run_round(bundled_spec, clean_fleet.endpoints, small_batch)
    replayed = [e.request for e in RoundLog.loads(first.dumps()).entries]
    second = run_round(bundled_spec, clean_fleet.endpoints, replayed)
    assert [[r.raw_body for r in e.records] for e in first.entries] == \
           [[r.raw_body for r in e.records] for e in second.entries]


def test_request_without_a_matching_layer(bundled_spec, clean_fleet, small_batch):
    with pytest.raises(ConfigError, match="no EL endpoints"):
        run_round(bundled_spec, clean_fleet.cl, small_batch)


def test_duplicate_endpoint_ids(clean_fleet):
    twice = [clean_fleet.el[0], clean_fleet.el[0]]
    with pytest.raises(ConfigError):
        run_round(None, twice, [])


def test_empty_batch(bundled_spec, clean_fleet):
    log = run_round(bundled_spec, clean_fleet.endpoints, [])
    assert len(log) == 0 and log.readiness.ready


def test_bad_round_log():
    with pytest.raises(ConfigError):
        RoundLog.loads("not json\n")
    with pytest.raises(ConfigError):
        RoundLog.loads('{"kind": "mystery"}\n')


def test_load_fleet_shapes(tmp_path):
    entry = {"endpoint_id": 0, "label": "a", "base_url": "http://x", "layer": "EL"}
    (tmp_path / "a.json").write_text(json.dumps([entry]))
    (tmp_path / "b.json").write_text(json.dumps({"endpoints": [entry]}))
    (tmp_path / "c.json").write_text(json.dumps([{**entry, "layer": "DA"}]))
    assert load_fleet(tmp_path / "a.json") == load_fleet(tmp_path / "b.json")
    assert load_fleet(tmp_path / "a.json", timeout_ms=50)[0].timeout_ms == 50
    with pytest.raises(ConfigError):
        load_fleet(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_fleet(tmp_path / "missing.json")


def test_control_status_absent_falls_back_to_standard_queries(clean_fleet):
    # a proxy that hides the control path, as a real client would
    def handler(request: httpx.Request) -> httpx.Response:
        if request.url.path == "/__control/status":
            return httpx.Response(404)
        target = clean_fleet.el[0] if request.url.port == 1 else clean_fleet.cl[0]
        return httpx.Response(200, content=httpx.request(request.method, target.url(request.url.raw_path.decode()),
                                                         content=request.content,
                                                         headers={"Content-Type": "application/json"}).content)

    fleet = [Endpoint(0, "el", "http://proxy:1", "EL"), Endpoint(1, "cl", "http://proxy:2", "CL")]
    with httpx.Client(transport=httpx.MockTransport(handler)) as client:
        report = check_readiness(fleet, client=client)
    assert report.ready, report.failures
    assert [e.height for e in report.endpoints] == [64, 64]
    assert report.endpoints[1].finalized_epochs == 5
