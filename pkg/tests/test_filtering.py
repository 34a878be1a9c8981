import copy
import json
import random

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdiff.errors import ConfigError, OracleError, UndefinedRateError
from specdiff.filtering import (ABSENT, CONSERVATIVE_REASON, CachingOracle, ConsensusOracle, Divergence,
                                ExternalOracle, LookupOracle, OracleAnswer, OracleConfig, StubFalseOracle,
                                UnavailableOracle, VerdictKind, build_messages, canonical_equivalent,
                                canonical_form, classify, classify_round, compute_fdr, deduplicate, diff_records,
                                make_oracle, normalize_path, parse_answer)
from specdiff.generate import gen_valid_request
from specdiff.harness import ReadinessReport, EndpointReadiness, ResponseRecord, RoundEntry, RoundLog
from specdiff.mockfleet import build_chain, canonical_response
from specdiff.schema import ConsistencyPolicy, parse_schema

from .oracles import brute_force_diff

QTY_DOC = {"type": "string", "pattern": "^0x(0|[1-9a-f][0-9a-f]*)$"}
QTY = parse_schema(QTY_DOC)
HASH = parse_schema({"type": "string", "pattern": "^0x[0-9a-f]{64}$"})


def rec(endpoint_id, body, status=200, request_id=1):
    return ResponseRecord(endpoint_id, request_id, status, body, json.dumps(body).encode())


def failed(endpoint_id, error="timeout"):
    return ResponseRecord(endpoint_id, 1, None, None, b"", error)


def div(path, values, kind="value_mismatch", policy=ConsistencyPolicy.MUST_IDENTICAL, env=False):
    return Divergence(path, kind, values, policy, env)


class AlwaysEquivalent:
    name = "always"

    def judge(self, schema, values):
        return OracleAnswer(True, "same")


# -- diff -------------------------------------------------------------------

def test_identical_bodies_do_not_diverge():
    body = {"jsonrpc": "2.0", "id": 1, "result": {"a": [1, 2]}}
    assert diff_records([rec(0, body), rec(1, copy.deepcopy(body)), rec(2, body)]) == []


def test_dropped_field_is_missing():
    a = {"result": {"miner": "0x1", "number": "0x2"}}
    b = {"result": {"number": "0x2"}}
    (d,) = diff_records([rec(0, a), rec(1, b), rec(2, a)])
    assert (d.field_path, d.kind) == ("/result/miner", "missing_field")
    assert d.per_endpoint_values == {0: "0x1", 1: ABSENT, 2: "0x1"}


def test_minority_key_is_extra():
    a = {"result": {}}
    b = {"result": {"sealFields": []}}
    (d,) = diff_records([rec(0, a), rec(1, b), rec(2, a)])
    assert (d.field_path, d.kind) == ("/result/sealFields", "extra_field")


def test_status_and_type_mismatches():
    divs = diff_records([rec(0, {"v": 1}), rec(1, {"v": "1"}, status=500)])
    assert [(d.field_path, d.kind) for d in divs] == [("/$status", "status_mismatch"), ("/v", "type_mismatch")]


def test_transport_failure_is_one_availability_divergence():
    (d,) = diff_records([rec(0, {"a": 1}), failed(1), rec(2, {"a": 2})])
    assert (d.field_path, d.kind) == ("/", "availability")
    assert d.per_endpoint_values[1] == {"$marker": "timeout"}
    assert diff_records([failed(0), failed(1)]) == []


def test_unordered_arrays_compare_as_multisets():
    schema = parse_schema({"type": "object", "properties": {"xs": {"type": "array", "items": {"type": "integer"},
                                                                  "x-unordered": True}}})
    if not schema.properties["xs"].unordered:
        pytest.skip("unordered marker not supported in this schema dialect")
    assert diff_records([rec(0, {"xs": [1, 2]}), rec(1, {"xs": [2, 1]})], schema) == []
    assert len(diff_records([rec(0, {"xs": [1, 2]}), rec(1, {"xs": [2, 2]})], schema)) == 1


def test_divergence_needs_two_distinct_values():
    with pytest.raises(ValueError):
        div("/a", {0: 1, 1: 1})
    with pytest.raises(ValueError):
        div("/a", {0: 1, 1: 2}, kind="odd")


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-5, 5) | st.sampled_from(["a", "b", "0x1"]),
    lambda inner: st.lists(inner, max_size=3) | st.dictionaries(st.sampled_from("xyz"), inner, max_size=3),
    max_leaves=8)


@settings(max_examples=300, deadline=None)
@given(json_values, json_values)
def test_diff_paths_match_brute_force(a, b):
    got = {(d.field_path, d.kind) for d in diff_records([rec(0, a), rec(1, b)])}
    assert got == brute_force_diff(a, b)


# -- canonical equivalence ----------------------------------------------------

@pytest.mark.parametrize("a,b,schema,same", [
    ("0x1", "0x01", QTY, True),
    ("0x1", "0x001", QTY, True),
    ("0xab", "0xAB", HASH, True),
    ("0x1", "0x01", HASH, False),
    ("10", "010", None, True),
    ("0x1", "0x2", QTY, False),
    ("a", "A", None, False),
    ({"x": "0x0a"}, {"x": "0x0A"}, None, True),
    (1, True, None, False),
])
def test_canonical_examples(a, b, schema, same):
    assert canonical_equivalent(a, b, schema) is same


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2 ** 80), st.integers(0, 4), st.booleans())
def test_quantity_encodings_collapse(n, pad, upper):
    digits = format(n, "x")
    text = "0x" + "0" * pad + (digits.upper() if upper else digits)
    assert canonical_form(text, QTY) == canonical_form(hex(n), QTY)


encoded = st.one_of(
    st.integers(0, 40).map(hex),
    st.integers(0, 40).map(lambda n: "0x0" + format(n, "x")),
    st.integers(0, 40).map(lambda n: "0x" + format(n, "X")),
    st.integers(0, 40).map(str),
    st.sampled_from(["latest", "0xAb", "0xab"]),
)


@settings(max_examples=300, deadline=None)
@given(encoded, encoded, encoded)
def test_canonical_equivalence_is_an_equivalence_relation(a, b, c):
    eq = lambda x, y: canonical_equivalent(x, y, QTY)  # noqa: E731
    assert eq(a, a)
    assert eq(a, b) == eq(b, a)
    if eq(a, b) and eq(b, c):
        assert eq(a, c)


# -- classification -----------------------------------------------------------

def test_must_divergent_field_is_allowed():
    v = classify(div("/data/peer_id", {0: "p1", 1: "p2"}, policy=ConsistencyPolicy.MUST_DIVERGENT), None,
                 StubFalseOracle())
    assert v.kind is VerdictKind.FP_ALLOWED and not v.oracle_used


def test_environmental_field():
    d = div("/data/head_slot", {0: "5", 1: "6"}, policy=ConsistencyPolicy.MAY_DIVERGENT, env=True)
    assert classify(d, None, StubFalseOracle()).kind is VerdictKind.FP_ENVIRONMENTAL
    d = div("/data/x", {0: "5", 1: "6"}, policy=ConsistencyPolicy.MAY_DIVERGENT)
    assert classify(d, None, StubFalseOracle()).genuine


def test_reformatted_quantity_is_equivalent_without_the_oracle():
    schema = parse_schema({"type": "object", "properties": {"result": QTY_DOC}})
    v = classify(div("/result", {0: "0x1", 1: "0x01"}), schema, UnavailableOracle())
    assert v.kind is VerdictKind.FP_SEMANTIC_EQUIVALENT and not v.oracle_used


def test_reworded_message_is_equivalent_through_the_lookup():
    oracle = LookupOracle([["too many arguments, want at most 1", "too many params: at most 1 accepted"]])
    d = div("/error/message", {0: "too many arguments, want at most 1", 1: "too many params: at most 1 accepted"})
    v = classify(d, None, oracle)
    assert v.kind is VerdictKind.FP_SEMANTIC_EQUIVALENT and v.oracle_used


def test_different_quantities_are_genuine():
    v = classify(div("/result", {0: "0x1", 1: "0x2"}), None, StubFalseOracle())
    assert v.genuine and v.reason == "oracle: stub"


def test_missing_value_is_never_canonically_equal():
    v = classify(div("/result/miner", {0: "0x1", 1: ABSENT}, kind="missing_field"), None, StubFalseOracle())
    assert v.genuine


def test_oracle_failure_is_conservative():
    v = classify(div("/result", {0: "a", 1: "b"}), None, UnavailableOracle())
    assert v.genuine and v.reason == CONSERVATIVE_REASON == "oracle unavailable - conservative"


def test_availability_from_syncing_nodes_is_environmental():
    d = div("/", {0: {"$marker": "responded"}, 1: {"$marker": "timeout"}}, kind="availability")
    assert classify(d, None, StubFalseOracle(), frozenset({1})).kind is VerdictKind.FP_ENVIRONMENTAL
    assert classify(d, None, StubFalseOracle(), frozenset({0})).genuine
    assert classify(d, None, StubFalseOracle()).reason == "availability divergence"


def _identity_round(bundled_spec, bodies, syncing=()):
    method = bundled_spec.methods["getNodeIdentity"]
    req = gen_valid_request(method, random.Random(0), request_id=1)
    records = [rec(i, b) for i, b in enumerate(bodies)]
    readiness = ReadinessReport(tuple(EndpointReadiness(i, f"n{i}", "CL", True, 64, 5, i in syncing)
                                      for i in range(len(bodies))), (), 2)
    return RoundLog([RoundEntry(req, records)], [], readiness)


def test_classify_round_on_node_identity(bundled_spec):
    _, body = canonical_response("getNodeIdentity", {"path": "/eth/v1/node/identity"}, build_chain(7))
    other = copy.deepcopy(body)
    other["data"]["peer_id"] = "16Uiu2HAmOther"
    other["data"]["metadata"]["seq_number"] = "999"
    (finding,) = classify_round(_identity_round(bundled_spec, [body, other, body]), bundled_spec)
    verdicts = {d.field_path: v.kind for d, v in zip(finding.divergences, finding.verdicts)}
    assert verdicts["/data/peer_id"] is VerdictKind.FP_ALLOWED
    unfiltered = classify_round(_identity_round(bundled_spec, [body, other, body]), bundled_spec,
                                filter_enabled=False)
    assert all(v.genuine and v.reason == "filter disabled" for v in unfiltered[0].verdicts)


@settings(max_examples=200, deadline=None)
@given(json_values, json_values, st.sampled_from(list(ConsistencyPolicy)), st.booleans())
def test_a_more_permissive_oracle_never_adds_bugs(a, b, policy, env):
    divs = diff_records([rec(0, a), rec(1, b)])
    for d in divs:
        d = Divergence(d.field_path, d.kind, d.per_endpoint_values, policy, env)
        if classify(d, None, AlwaysEquivalent()).genuine:
            assert classify(d, None, StubFalseOracle()).genuine
            assert classify(d, None, UnavailableOracle()).genuine


# -- oracle plumbing ----------------------------------------------------------

def test_prompt_structure():
    messages = build_messages(QTY, {0: "0x1", 1: ABSENT})
    assert [m["role"] for m in messages] == ["system", "user"]
    user = messages[1]["content"]
    for heading in ("Task:", "Instructions:", "Input format:", "Output format:", "Note:",
                    "Target API JSON Schema:", "Client JSON Responses:"):
        assert heading in user
    assert '"$marker": "absent"' in user
    assert user.index("Target API JSON Schema:") < user.index("Client JSON Responses:")


@pytest.mark.parametrize("text", [
    "yes", "[]", '{"semantically_equivalent": "true", "reason": "x"}',
    '{"semantically_equivalent": true}', '{"semantically_equivalent": true, "reason": "x", "extra": 1}',
])
def test_parse_answer_is_strict(text):
    with pytest.raises(OracleError):
        parse_answer(text)


def test_parse_answer_accepts_exact_shape():
    assert parse_answer(' {"semantically_equivalent": false, "reason": "r"}\n') == OracleAnswer(False, "r")


def _chat(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


def test_external_oracle_request_and_retry(monkeypatch):
    monkeypatch.setenv("ORACLE_API_KEY", "k-123")
    seen = []
    replies = iter(["not json", '{"semantically_equivalent": true, "reason": "padding"}'])

    def handler(request):
        seen.append(request)
        return _chat(next(replies))

    oracle = ExternalOracle("http://llm.local/v1", "m", client=httpx.Client(transport=httpx.MockTransport(handler)))
    answer = oracle.judge(QTY, {0: "0x1", 1: "0x01"})
    assert answer == OracleAnswer(True, "padding")
    assert len(seen) == 2
    body = json.loads(seen[0].content)
    assert body["temperature"] == 0 and body["model"] == "m"
    assert seen[0].url == "http://llm.local/v1/chat/completions"
    assert seen[0].headers["Authorization"] == "Bearer k-123"


def test_external_oracle_gives_up_after_one_retry():
    calls = []
    transport = httpx.MockTransport(lambda r: calls.append(r) or _chat("nope"))
    oracle = ExternalOracle("http://llm.local", "m", client=httpx.Client(transport=transport))
    with pytest.raises(OracleError):
        oracle.judge(QTY, {0: "0x1", 1: "0x2"})
    assert len(calls) == 2


def test_external_oracle_http_failure():
    transport = httpx.MockTransport(lambda r: httpx.Response(503))
    oracle = ExternalOracle("http://llm.local", "m", client=httpx.Client(transport=transport))
    v = classify(div("/result", {0: "a", 1: "b"}), None, oracle)
    assert v.reason == CONSERVATIVE_REASON


def test_consensus_needs_agreement():
    agree = ConsensusOracle([AlwaysEquivalent(), AlwaysEquivalent()])
    split = ConsensusOracle([AlwaysEquivalent(), StubFalseOracle()])
    assert agree.judge(QTY, {0: 1, 1: 2}).semantically_equivalent
    assert split.judge(QTY, {0: 1, 1: 2}) == OracleAnswer(False, "stub")


def test_caching_oracle_asks_once():
    class Counting(AlwaysEquivalent):
        calls = 0

        def judge(self, schema, values):
            Counting.calls += 1
            return super().judge(schema, values)

    cached = CachingOracle(Counting())
    for _ in range(3):
        cached.judge(QTY, {0: "a", 1: "b"})
    assert Counting.calls == 1 and cached.calls == 1


def test_make_oracle_modes(tmp_path):
    lookup = tmp_path / "groups.json"
    lookup.write_text(json.dumps({"groups": [["a", "b"]]}))
    assert isinstance(make_oracle(OracleConfig("stub_false")), StubFalseOracle)
    assert isinstance(make_oracle(OracleConfig(f"stub_lookup:{lookup}")), LookupOracle)
    assert isinstance(make_oracle(OracleConfig(f"consensus:stub_false+stub_lookup:{lookup}")), ConsensusOracle)
    with pytest.raises(ConfigError):
        make_oracle(OracleConfig("magic"))
    with pytest.raises(ConfigError):
        make_oracle(OracleConfig("external"))
    with pytest.raises(ConfigError):
        make_oracle(OracleConfig(f"stub_lookup:{tmp_path / 'none.json'}"))


def test_lookup_needs_all_values_in_one_group():
    oracle = LookupOracle([["a", "b"], ["c"]])
    assert oracle.judge(QTY, {0: "a", 1: "b"}).semantically_equivalent
    assert not oracle.judge(QTY, {0: "a", 1: "c"}).semantically_equivalent


# -- metrics ------------------------------------------------------------------

def test_fdr_values():
    assert compute_fdr(5, 0) == 0.0
    assert round(compute_fdr(10, 20), 2) == 66.67
    with pytest.raises(UndefinedRateError):
        compute_fdr(0, 0)
    with pytest.raises(ValueError):
        compute_fdr(-1, 2)


@pytest.mark.parametrize("path,expected", [
    ("/result/transactions/3/hash", "/result/transactions/*/hash"),
    ("/result/12", "/result/*"),
    ("/$status", "/$status"),
    ("/", "/"),
])
def test_normalize_path(path, expected):
    assert normalize_path(path) == expected


def test_dedup_merges_array_positions(bundled_spec):
    method = bundled_spec.methods["eth_getBlockByNumber"]
    findings = []
    for rid in (1, 2):
        req = gen_valid_request(method, random.Random(rid), request_id=rid)
        a = {"result": {"transactions": [{"v": "0x1"}, {"v": "0x1"}]}}
        b = {"result": {"transactions": [{"v": "0x2"}, {"v": "0x3"}]}}
        log = RoundLog([RoundEntry(req, [rec(0, a, request_id=rid), rec(1, b, request_id=rid)])])
        findings += classify_round(log, bundled_spec)
    (entry,) = deduplicate(findings)
    assert entry.key.path == "/result/transactions/*/v"
    assert entry.occurrences == 4 and entry.request_ids == [1, 2]


def test_api_key_never_reaches_the_log(monkeypatch, caplog):
    monkeypatch.setenv("ORACLE_API_KEY", "secret-key-value")
    caplog.set_level("DEBUG")
    transport = httpx.MockTransport(lambda r: _chat("garbled"))
    oracle = ExternalOracle("http://llm.local", "m", client=httpx.Client(transport=transport))
    classify(div("/result", {0: "a", 1: "b"}), None, oracle)
    assert caplog.records and "secret-key-value" not in caplog.text
