"""Deduplication, false-discovery rate and spec-defect detection."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

from ..errors import UndefinedRateError
from ..generate import SEMANTIC_VALID, SYNTACTIC_VALID
from ..harness import RoundLog
from ..mockfleet.injections import DivergenceInjection
from ..schema import split_pointer
from ..spec import ApiSpec
from .classify import FP_KINDS, Finding, Verdict, VerdictKind
from .diff import Divergence

# JSON-RPC codes that mean "your request is malformed"
REJECTION_CODES = frozenset({-32700, -32600, -32602})
MIN_DEFECT_REQUESTS = 2


def compute_fdr(tp: int, fp: int) -> float:
    """FP / (TP + FP) as a percentage, unrounded."""
    if tp < 0 or fp < 0:
        raise ValueError("counts must be non-negative")
    if tp + fp == 0:
        raise UndefinedRateError("false discovery rate is undefined with no reports")
    return fp / (tp + fp) * 100


def normalize_path(pointer: str) -> str:
    """Array indices collapse to ``*`` so the same field in different elements dedups."""
    if pointer in ("/", "/$status"):
        return pointer
    tokens = ["*" if t.isdigit() else t for t in split_pointer(pointer)]
    return "/" + "/".join(t.replace("~", "~0").replace("/", "~1") for t in tokens) if tokens else ""


class DedupKey(NamedTuple):
    method: str
    path: str
    kind: str
    policy: str

    def __str__(self) -> str:
        return f"{self.method} {self.kind} {self.path} ({self.policy})"


def dedup_key(method: str, div: Divergence) -> DedupKey:
    return DedupKey(method, normalize_path(div.field_path), div.kind, div.policy.value)


@dataclass
class DedupEntry:
    key: DedupKey
    finding: Finding
    divergence: Divergence
    verdict: Verdict
    occurrences: int = 1
    request_ids: list[int] = field(default_factory=list)


def deduplicate(findings: Sequence[Finding], *, genuine_only: bool = True) -> list[DedupEntry]:
    """One entry per dedup key, keeping the first occurrence as the example.

    A key counts as genuine if any of its occurrences was judged genuine.
    """
    out: dict[DedupKey, DedupEntry] = {}
    for f in findings:
        for div, verdict in zip(f.divergences, f.verdicts):
            if genuine_only and not verdict.genuine:
                continue
            key = dedup_key(f.request.method, div)
            entry = out.get(key)
            if entry is None:
                out[key] = DedupEntry(key, f, div, verdict, 1, [f.request.request_id])
            else:
                entry.occurrences += 1
                if f.request.request_id not in entry.request_ids:
                    entry.request_ids.append(f.request.request_id)
    return list(out.values())


def verdict_counts(findings: Iterable[Finding]) -> dict[str, int]:
    counts = Counter(v.kind.value for f in findings for v in f.verdicts)
    return {k.value: counts.get(k.value, 0) for k in VerdictKind}


def filtered_counts(findings: Iterable[Finding]) -> dict[str, int]:
    counts = verdict_counts(findings)
    return {k.value: counts[k.value] for k in FP_KINDS}


# -- labelled scenarios -------------------------------------------------------

def injection_path(inj: DivergenceInjection, jsonrpc: bool) -> str | None:
    """Normalised field path an injection shows up at; None matches any path."""
    if inj.action == "wrong_status":
        return "/$status"
    if inj.action == "error_message":
        return "/error/message" if jsonrpc else "/message"
    if inj.action in ("crash_message", "stall"):
        return None
    return normalize_path(inj.path)


def _covers(prefix: str | None, path: str) -> bool:
    return prefix is None or path == prefix or path.startswith(prefix.rstrip("/") + "/")


def attribute(key: DedupKey, injections: Sequence[DivergenceInjection], spec: ApiSpec) -> DivergenceInjection | None:
    """The injection that explains a reported key, if any."""
    for inj in injections:
        if inj.method != key.method:
            continue
        method = spec.methods.get(inj.method)
        jsonrpc = method is not None and method.transport == "jsonrpc_post"
        if _covers(injection_path(inj, jsonrpc), key.path):
            return inj
    return None


@dataclass(frozen=True)
class FdrCounts:
    tp: int
    fp: int

    @property
    def fdr(self) -> float | None:
        try:
            return compute_fdr(self.tp, self.fp)
        except UndefinedRateError:
            return None

    def to_json(self) -> dict:
        fdr = self.fdr
        return {"tp": self.tp, "fp": self.fp, "fdr_percent": None if fdr is None else round(fdr, 2)}


def _count(keys: Iterable[DedupKey], injections, spec) -> FdrCounts:
    tp = fp = 0
    for key in keys:
        inj = attribute(key, injections, spec)
        if inj is not None and inj.label == "genuine":
            tp += 1
        else:
            fp += 1
    return FdrCounts(tp, fp)


def fdr_metrics(findings: Sequence[Finding], injections: Sequence[DivergenceInjection], spec: ApiSpec) -> dict:
    """TP/FP over deduplicated keys, with and without the false-positive filter.

    A reported key is a true positive when it traces back to an injection
    labelled ``genuine``; every other reported key is a false positive.
    """
    all_keys = {dedup_key(f.request.method, d) for f in findings for d in f.divergences}
    reported = {e.key for e in deduplicate(findings, genuine_only=True)}
    with_filter = _count(sorted(reported), injections, spec)
    without = _count(sorted(all_keys), injections, spec)
    genuine = [i for i in injections if i.label == "genuine"]
    missed = [i.to_json() for i in genuine
              if not any(attribute(k, [i], spec) is i for k in reported)]
    return {
        "with_filter": with_filter.to_json(),
        "without_filter": without.to_json(),
        "genuine_injections": len(genuine),
        "benign_injections": sum(1 for i in injections if i.label == "benign"),
        "missed_genuine": missed,
    }


# -- spec defects ----------------------------------------------------------------

def _rejection(status: int | None, body: Any, jsonrpc: bool) -> str | None:
    """Error message when the record rejects the request as malformed."""
    if jsonrpc:
        if isinstance(body, dict) and isinstance(body.get("error"), dict):
            err = body["error"]
            if err.get("code") in REJECTION_CODES:
                return str(err.get("message", ""))
        return None
    if status is not None and 400 <= status < 500 and status != 404:
        if isinstance(body, dict) and "message" in body:
            return str(body["message"])
        return f"HTTP {status}"
    return None


def detect_spec_defects(log_: RoundLog, spec: ApiSpec) -> list[dict]:
    """Methods whose every spec-valid request is rejected by every endpoint.

    Such uniform rejection points at the schema, not at any one client.
    """
    per_method: dict[str, list] = defaultdict(list)
    for entry in log_.entries:
        if entry.request.validity in (SYNTACTIC_VALID, SEMANTIC_VALID):
            per_method[entry.request.method].append(entry)
    out = []
    for name in sorted(per_method):
        entries = per_method[name]
        method = spec.methods.get(name)
        if method is None or len(entries) < MIN_DEFECT_REQUESTS:
            continue
        jsonrpc = method.transport == "jsonrpc_post"
        messages: Counter = Counter()
        uniform = True
        for entry in entries:
            for rec in entry.records:
                msg = None if rec.failed else _rejection(rec.http_status, rec.body, jsonrpc)
                if msg is None:
                    uniform = False
                    break
                messages[msg] += 1
            if not uniform:
                break
        if uniform:
            out.append({
                "method": name,
                "requests": len(entries),
                "endpoints": sorted({r.endpoint_id for e in entries for r in e.records}),
                "common_messages": [m for m, _ in sorted(messages.items(), key=lambda kv: (-kv[1], kv[0]))[:3]],
            })
    return out
