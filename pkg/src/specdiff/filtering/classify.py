"""Verdicts for divergences: genuine bug or one of three false-positive classes."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any

from ..errors import OracleError
from ..generate import TestRequest
from ..harness import ResponseRecord, RoundLog
from ..schema import ConsistencyPolicy, SchemaNode, schema_at
from ..spec import ApiSpec
from .canonical import canonical_equivalent
from .diff import ABSENT, Divergence, diff_records
from .oracle import EquivalenceOracle, StubFalseOracle

log = logging.getLogger(__name__)

CONSERVATIVE_REASON = "oracle unavailable - conservative"


class VerdictKind(str, enum.Enum):
    GENUINE_BUG = "genuine_bug"
    FP_ENVIRONMENTAL = "fp_environmental"
    FP_ALLOWED = "fp_allowed"
    FP_SEMANTIC_EQUIVALENT = "fp_semantic_equivalent"


FP_KINDS = (VerdictKind.FP_ENVIRONMENTAL, VerdictKind.FP_ALLOWED, VerdictKind.FP_SEMANTIC_EQUIVALENT)


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    reason: str
    oracle_used: bool = False

    @property
    def genuine(self) -> bool:
        return self.kind is VerdictKind.GENUINE_BUG

    def to_json(self) -> dict:
        return {"verdict": self.kind.value, "reason": self.reason, "oracle_used": self.oracle_used}


@dataclass
class Finding:
    """One request's divergences, each paired with its verdict."""

    request: TestRequest
    records: list[ResponseRecord]
    divergences: list[Divergence]
    verdicts: list[Verdict] = field(default_factory=list)

    @property
    def genuine(self) -> bool:
        return any(v.genuine for v in self.verdicts)


def _all_equivalent(values: dict[int, Any], schema: SchemaNode | None) -> bool:
    present = list(values.values())
    if any(v is ABSENT for v in present):
        return False
    return all(canonical_equivalent(a, b, schema) for a, b in combinations(present, 2))


def classify(div: Divergence, response_schema: SchemaNode | None, oracle: EquivalenceOracle,
             syncing: frozenset[int] = frozenset()) -> Verdict:
    """First matching rule wins; anything unexplained stays a genuine bug."""
    if div.kind == "availability":
        failing = sorted(e for e, v in div.per_endpoint_values.items() if v.get("$marker") != "responded")
        stale = [e for e in failing if e in syncing]
        if stale and len(stale) == len(failing):
            return Verdict(VerdictKind.FP_ENVIRONMENTAL, f"endpoint(s) {stale} were syncing at round start")
        return Verdict(VerdictKind.GENUINE_BUG, "availability divergence")
    if div.policy is ConsistencyPolicy.MUST_DIVERGENT:
        return Verdict(VerdictKind.FP_ALLOWED, "field is unique per node")
    if div.policy is ConsistencyPolicy.MAY_DIVERGENT and div.environmental:
        return Verdict(VerdictKind.FP_ENVIRONMENTAL, "field depends on node state")
    node = schema_at(response_schema, div.field_path) if response_schema is not None else None
    if _all_equivalent(div.per_endpoint_values, node):
        return Verdict(VerdictKind.FP_SEMANTIC_EQUIVALENT, "canonical equivalence: values differ only in encoding")
    try:
        answer = oracle.judge(node or SchemaNode(), div.per_endpoint_values)
    except OracleError as exc:
        log.warning("oracle failed on %s: %s", div.field_path, exc)
        return Verdict(VerdictKind.GENUINE_BUG, CONSERVATIVE_REASON)
    if answer.semantically_equivalent:
        return Verdict(VerdictKind.FP_SEMANTIC_EQUIVALENT, f"oracle: {answer.reason}", True)
    return Verdict(VerdictKind.GENUINE_BUG, f"oracle: {answer.reason}", True)


def classify_round(log_: RoundLog, spec: ApiSpec, oracle: EquivalenceOracle | None = None, *,
                   filter_enabled: bool = True, max_parallel: int = 4) -> list[Finding]:
    """Diff and classify every logged request that diverged.

    Classification fans out over ``max_parallel`` threads; the result order
    follows the round log.
    """
    oracle = oracle or StubFalseOracle()
    syncing = log_.readiness.syncing_ids() if log_.readiness else frozenset()
    findings: list[Finding] = []
    jobs: list[tuple[Finding, Divergence, SchemaNode | None]] = []
    schemas: dict[str, SchemaNode | None] = {}
    for entry in log_.entries:
        name = entry.request.method
        if name not in schemas:
            method = spec.methods.get(name)
            schemas[name] = method.response_schema() if method else None
        schema = schemas[name]
        divs = diff_records(entry.records, schema)
        if not divs:
            continue
        finding = Finding(entry.request, entry.records, divs)
        findings.append(finding)
        jobs.extend((finding, d, schema) for d in divs)

    def run(job) -> Verdict:
        _, div, schema = job
        if not filter_enabled:
            return Verdict(VerdictKind.GENUINE_BUG, "filter disabled")
        return classify(div, schema, oracle, syncing)

    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        verdicts = list(pool.map(run, jobs))
    for (finding, _, _), verdict in zip(jobs, verdicts):
        finding.verdicts.append(verdict)
    return findings
