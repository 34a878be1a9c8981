"""End-to-end acceptance checks, one test per numbered criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.
"""

import json
import random
import re
import time
from itertools import combinations

import pytest

from specdiff.errors import UndefinedRateError
from specdiff.facts import FactStore, extract_for_fleet, load_rules, mutate_semantic
from specdiff.filtering import CONSERVATIVE_REASON, VerdictKind, compute_fdr, diff_records
from specdiff.filtering.oracle import OracleConfig
from specdiff.generate import (SEMANTIC_VALID, SYNTACTIC_INVALID, SYNTACTIC_VALID, InvalidCategory, TestMix,
                               applicable_categories, gen_batch)
from specdiff.harness import ResponseRecord, run_round
from specdiff.mockfleet.injections import Scenario
from specdiff.pipeline import RunConfig, data_file, run_pipeline, scenario_path
from specdiff.schema import ConsistencyPolicy, split_pointer
from specdiff.spec import load_spec

from .oracles import brute_force_diff, hex_int, inspect_request

CORPUS = ("eth_getBalance.json", "execution_api.json", "beacon_api.json", "beacon_publish_block.json")


def _corpus():
    return [load_spec(data_file("specs", name)) for name in CORPUS]


@pytest.mark.criterion(1, "generation validity over >= 10,000 requests in < 60 s")
def test_generation_validity_10k():
    corpus = _corpus()
    assert any("eth_getBalance" in s.methods and len(s) == 1 for s in corpus)
    start = time.perf_counter()
    total = valid = invalid = 0
    problems = []
    seed = 0
    while total < 10_000:
        for spec in corpus:
            for req in gen_batch(spec, TestMix(10, 10, 0), seed):
                total += 1
                verdict = inspect_request(spec.methods[req.method], req)
                flagged = any(verdict.values())
                if req.validity == SYNTACTIC_VALID:
                    valid += 1
                    if flagged:
                        problems.append((req.method, req.request_id, verdict))
                elif req.validity == SYNTACTIC_INVALID:
                    invalid += 1
                    if not flagged and not req.fault_note.startswith("undefined field"):
                        problems.append((req.method, req.request_id, req.fault_note))
        seed += 1
    elapsed = time.perf_counter() - start
    assert total >= 10_000 and valid and invalid
    assert problems == []
    assert elapsed < 60, f"took {elapsed:.1f} s"


@pytest.mark.criterion(2, "all three invalid categories in every batch with invalid >= 3")
@pytest.mark.parametrize("invalid", [3, 5, 8])
def test_invalid_category_coverage(invalid):
    wanted = {"extra", "missing", "bad"}
    checked = 0
    for seed in range(5):
        for spec in _corpus():
            batch = gen_batch(spec, TestMix(invalid, 0, 0), seed)
            for name, method in spec.methods.items():
                if len(applicable_categories(method)) < len(InvalidCategory):
                    continue
                seen = set()
                notes = set()
                for req in (r for r in batch if r.method == name):
                    verdict = inspect_request(method, req)
                    seen |= {k for k, v in verdict.items() if v}
                    notes.add(req.fault_note.split(":")[0])
                assert seen >= wanted, (name, seed, seen)
                assert notes == {"undefined field", "missing required", "constraint violation"}
                checked += 1
    assert checked > 0


@pytest.mark.criterion(3, "semantic requests hit existing entities; slot mutations stay in [1, 100]")
def test_semantic_soundness(bundled_spec, clean_fleet):
    store = extract_for_fleet(load_rules(), clean_fleet.endpoints, bundled_spec)
    semantic = []
    for seed in (1, 2, 3):
        semantic += [r for r in gen_batch(bundled_spec, TestMix(0, 0, 10), seed, store)
                     if r.validity == SEMANTIC_VALID]
    assert len(semantic) > 100
    log = run_round(bundled_spec, clean_fleet.endpoints, semantic)
    not_found = []
    for entry in log.entries:
        for rec in entry.records:
            body = rec.body
            if rec.transport_error or rec.http_status != 200:
                not_found.append((entry.request.method, rec.http_status, body))
            elif entry.request.transport == "jsonrpc_post" and ("error" in body or body.get("result") is None):
                not_found.append((entry.request.method, body))
    assert not_found == []

    anchored = FactStore(facts={"block_hash": ["0x" + "ab" * 32]}, current_slot=100, current_block=100)
    rng = random.Random(0)
    draws = [mutate_semantic("state_id.slot", anchored, rng) for _ in range(10_000)]
    assert all(isinstance(v, int) and 1 <= v <= 100 for v in draws)
    assert min(draws) == 1 and max(draws) == 100


def _random_json(rng, depth):
    roll = rng.random()
    if depth <= 0 or roll < 0.4:
        return rng.choice([None, True, False, rng.randint(-3, 3), rng.choice([0.5, 1.0, 2.0]),
                           rng.choice(["", "a", "b", "0x1", "~/"])])
    if roll < 0.7:
        return [_random_json(rng, depth - 1) for _ in range(rng.randint(0, 3))]
    return {rng.choice(["a", "b", "c", "", "x/y", "m~n"]): _random_json(rng, depth - 1)
            for _ in range(rng.randint(0, 3))}


def _mutate(value, rng, depth):
    """A near copy of ``value`` so pairs share structure."""
    if rng.random() < 0.15 or depth <= 0:
        return _random_json(rng, depth)
    if isinstance(value, dict):
        out = {k: _mutate(v, rng, depth - 1) for k, v in value.items() if rng.random() > 0.1}
        if rng.random() < 0.2:
            out[rng.choice(["a", "d", "e"])] = _random_json(rng, depth - 1)
        return out
    if isinstance(value, list):
        out = [_mutate(v, rng, depth - 1) for v in value]
        if out and rng.random() < 0.2:
            out.pop()
        if rng.random() < 0.2:
            out.append(_random_json(rng, depth - 1))
        return out
    return value


def _depth(v):
    if isinstance(v, dict):
        return 1 + max((_depth(x) for x in v.values()), default=0)
    if isinstance(v, list):
        return 1 + max((_depth(x) for x in v), default=0)
    return 0


@pytest.mark.criterion(4, "structural diff equals brute-force comparator on 1,000 random pairs")
def test_diff_matches_brute_force():
    rng = random.Random(2024)
    mismatches = []
    nonempty = 0
    for i in range(1000):
        a = _random_json(rng, 5)
        b = _mutate(a, rng, 5) if rng.random() < 0.8 else _random_json(rng, 5)
        assert _depth(a) <= 5 and _depth(b) <= 5
        records = [ResponseRecord(0, i, 200, a, json.dumps(a).encode()),
                   ResponseRecord(1, i, 200, b, json.dumps(b).encode())]
        got = {(d.field_path, d.kind) for d in diff_records(records)}
        want = brute_force_diff(a, b)
        nonempty += bool(want)
        if got != want:
            mismatches.append((a, b, got ^ want))
    assert mismatches == []
    assert nonempty > 500


def _normalized(path):
    return "/" + "/".join("*" if t.isdigit() else t for t in split_pointer(path))


@pytest.mark.criterion(5, "labelled 30-injection scenario: 10 findings, FDR 0% filtered vs 66.67% unfiltered")
def test_injected_bug_scenario(tmp_path):
    start = time.perf_counter()
    scenario = Scenario.load(scenario_path("labeled_30"))
    labels = [i.label for i in scenario.injections]
    assert labels.count("genuine") == 10 and labels.count("benign") == 20
    lookup = OracleConfig(f"stub_lookup:{data_file('scenarios', 'labeled_30_lookup.json')}")
    result = run_pipeline(RunConfig(scenario="labeled_30", seed=1, oracle=lookup, report_dir=str(tmp_path)))

    genuine = {(i.method, _normalized(i.path)) for i in scenario.injections if i.label == "genuine"}
    reported = {(f["method"], f["dedup_path"]) for f in result.report["findings"]}
    assert reported == genuine
    assert len(result.report["findings"]) == 10

    all_keys = {(f.request.method, _normalized(d.field_path), d.kind, d.policy)
                for f in result.findings for d in f.divergences}
    assert len(all_keys) == 30
    tp_unfiltered = sum(1 for k in all_keys if k[:2] in genuine)
    fp_unfiltered = len(all_keys) - tp_unfiltered
    assert (tp_unfiltered, fp_unfiltered) == (10, 20)

    metrics = result.report["metrics"]
    assert metrics["with_filter"] == {"tp": 10, "fp": 0, "fdr_percent": 0.0}
    assert metrics["without_filter"]["tp"] == 10 and metrics["without_filter"]["fp"] == 20
    assert metrics["without_filter"]["fdr_percent"] == round(20 / 30 * 100, 2) == 66.67
    assert compute_fdr(10, 0) == 0.0
    assert time.perf_counter() - start < 120


@pytest.mark.criterion(6, "compute_fdr(18, 7) = 28.00 and compute_fdr(18, 34) = 65.38")
def test_fdr_anchors():
    assert f"{compute_fdr(18, 7):.2f}" == "28.00"
    assert f"{compute_fdr(18, 34):.2f}" == "65.38"
    with pytest.raises(UndefinedRateError):
        compute_fdr(0, 0)


@pytest.mark.criterion(7, "minItems = maxItems = 32 against nodes requiring 33 is flagged as a schema defect")
def test_spec_defect_detected():
    spec_file = data_file("specs", "beacon_publish_block.json")
    doc = json.loads(spec_file.read_text())
    proof = doc["paths"]["/eth/v2/beacon/blocks"]["post"]["requestBody"]["content"]["application/json"]
    text = json.dumps(proof)
    assert '"minItems": 32' in text and '"maxItems": 32' in text

    result = run_pipeline(RunConfig(scenario="spec_defect", seed=3, specs=[str(spec_file)]))
    valid = [e for e in result.round_log.entries if e.request.validity != SYNTACTIC_INVALID]
    assert len(valid) >= 2
    for entry in valid:
        assert [r.http_status for r in entry.records] == [400, 400, 400]
        assert {r.body["message"] for r in entry.records} == {"Invalid block: expected 33 and 32 found"}
    flagged = result.report["suspected_spec_defects"]
    assert [d["method"] for d in flagged] == ["publishBlockV2"]
    assert flagged[0]["endpoints"] == [3, 4, 5]
    assert "expected 33 and 32 found" in flagged[0]["common_messages"][0]


_STAMP = re.compile(rb'\n\s*"generated_at": "[^"]*",?')


@pytest.mark.criterion(8, "identical inputs give byte-identical report JSON apart from timestamps")
def test_report_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        run_pipeline(RunConfig(scenario="labeled_30", seed=11, report_dir=str(out)))
        outputs.append((out / "report.json").read_bytes())
    assert _STAMP.search(outputs[0])
    assert _STAMP.sub(b"", outputs[0]) == _STAMP.sub(b"", outputs[1])
    assert json.loads(outputs[0])["findings"]


def _independently_equivalent(values):
    def norm(v):
        if isinstance(v, str) and re.fullmatch(r"0[xX][0-9a-fA-F]+", v):
            return hex_int(v)
        return v
    present = list(values.values())
    return all(norm(a) == norm(b) for a, b in combinations(present, 2))


@pytest.mark.criterion(9, "always-false stub never filters beyond canonicalisation; unavailable oracle keeps all")
def test_conservative_degradation():
    stub = run_pipeline(RunConfig(scenario="labeled_30", seed=5, oracle=OracleConfig("stub_false")))
    seen_canonical = 0
    for finding in stub.findings:
        for div, verdict in zip(finding.divergences, finding.verdicts):
            if div.policy is not ConsistencyPolicy.MUST_IDENTICAL:
                continue
            if verdict.kind is VerdictKind.FP_SEMANTIC_EQUIVALENT:
                seen_canonical += 1
                assert not verdict.oracle_used
                assert "canonical" in verdict.reason
                assert _independently_equivalent(div.per_endpoint_values), div
            else:
                assert verdict.kind is VerdictKind.GENUINE_BUG, (div, verdict)
    assert seen_canonical > 0

    dead = run_pipeline(RunConfig(scenario="labeled_30", seed=5, oracle=OracleConfig("unavailable")))
    residual = 0
    for finding in dead.findings:
        for div, verdict in zip(finding.divergences, finding.verdicts):
            assert not verdict.oracle_used
            if div.policy is ConsistencyPolicy.MUST_DIVERGENT or div.kind == "availability":
                continue
            if verdict.kind is VerdictKind.FP_SEMANTIC_EQUIVALENT:
                assert _independently_equivalent(div.per_endpoint_values), div
                continue
            residual += 1
            assert verdict.kind is VerdictKind.GENUINE_BUG
            assert verdict.reason == CONSERVATIVE_REASON
    assert residual > 0
    reported = {(f["method"], f["dedup_path"]) for f in dead.report["findings"]}
    genuine = {(i.method, _normalized(i.path)) for i in Scenario.load(scenario_path("labeled_30")).injections
               if i.label == "genuine"}
    assert genuine <= reported
    assert {p for _, p in reported - genuine} == {"/error/message"}
