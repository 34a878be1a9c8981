"""Run reports: JSON for machines, Markdown issue drafts for humans, CSV for spreadsheets."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .filtering.classify import Finding
from .filtering.diff import marker_json
from .filtering.metrics import DedupEntry, deduplicate, filtered_counts, verdict_counts
from .generate import TestRequest
from .harness import ReadinessReport, ResponseRecord

CSV_COLUMNS = ("method", "field_path", "kind", "policy", "verdict", "reason", "occurrences", "request_ids",
               "example_request_id")


def _record_json(rec: ResponseRecord, labels: dict[int, str]) -> dict:
    # latency and raw bytes stay in the round log so the report is reproducible
    return {
        "endpoint_id": rec.endpoint_id,
        "label": labels.get(rec.endpoint_id, str(rec.endpoint_id)),
        "http_status": rec.http_status,
        "transport_error": rec.transport_error,
        "body": rec.body,
    }


def _finding_json(entry: DedupEntry, labels: dict[int, str]) -> dict:
    div = entry.divergence
    return {
        "method": entry.key.method,
        "field_path": div.field_path,
        "dedup_path": entry.key.path,
        "kind": div.kind,
        "policy": div.policy.value,
        "verdict": entry.verdict.kind.value,
        "reason": entry.verdict.reason,
        "oracle_used": entry.verdict.oracle_used,
        "occurrences": entry.occurrences,
        "request_ids": entry.request_ids,
        "divergent_values": {str(k): marker_json(v) for k, v in sorted(div.per_endpoint_values.items())},
        "request": entry.finding.request.to_json(),
        "responses": [_record_json(r, labels) for r in entry.finding.records],
    }


def request_summary(batch: Sequence[TestRequest]) -> dict:
    per_method: dict[str, Counter] = {}
    for req in batch:
        per_method.setdefault(req.method, Counter())[req.validity] += 1
    return {"total": len(batch), "per_method": {m: dict(sorted(c.items())) for m, c in sorted(per_method.items())}}


def build_report(*, meta: dict, batch: Sequence[TestRequest], findings: Sequence[Finding],
                 readiness: ReadinessReport | None, labels: dict[int, str], metrics: dict | None = None,
                 spec_defects: list | None = None, extra: dict | None = None) -> dict:
    """Assemble the report document; key order is fixed by construction."""
    genuine = deduplicate(findings, genuine_only=True)
    counts = verdict_counts(findings)
    report: dict[str, Any] = {
        "meta": {"tool": "specdiff", "version": __version__, **meta,
                 "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")},
        "readiness": None if readiness is None else {"ready": readiness.ready, "failures": list(readiness.failures)},
        "requests": request_summary(batch),
        "divergences": {"requests_with_divergence": len(findings), "total": sum(counts.values()),
                        "by_verdict": counts},
        "findings": [_finding_json(e, labels) for e in genuine],
        "filtered": filtered_counts(findings),
        "suspected_spec_defects": list(spec_defects or []),
        "metrics": metrics,
    }
    if extra:
        report.update(extra)
    return report


def without_timestamps(report: dict) -> dict:
    out = json.loads(json.dumps(report))
    out.get("meta", {}).pop("generated_at", None)
    return out


def dumps_json(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False) + "\n"


def render_markdown(report: dict) -> str:
    """Issue-tracker style: one section per genuine finding."""
    meta = report["meta"]
    lines = [f"# Differential run: {len(report['findings'])} genuine finding(s)", ""]
    lines.append(f"- seed: `{meta.get('seed')}`, mix: `{meta.get('mix')}`, oracle: `{meta.get('oracle_mode')}`")
    lines.append(f"- requests: {report['requests']['total']}, "
                 f"divergent requests: {report['divergences']['requests_with_divergence']}")
    lines.append("- filtered: " + ", ".join(f"{k} {v}" for k, v in report["filtered"].items()))
    if report.get("metrics"):
        m = report["metrics"]
        lines.append(f"- FDR with filter: {m['with_filter']['fdr_percent']}%, "
                     f"without: {m['without_filter']['fdr_percent']}%")
    lines.append("")
    for i, f in enumerate(report["findings"], 1):
        lines += [
            f"## {i}. `{f['method']}`: {f['kind'].replace('_', ' ')} at `{f['field_path']}`",
            "",
            f"**Verdict:** {f['verdict']} ({f['reason']})  ",
            f"**Policy:** {f['policy']}  ",
            f"**Seen in:** {f['occurrences']} divergence(s), requests {f['request_ids']}",
            "",
            "### Reproduce",
            "",
            "```json",
            json.dumps(f["request"], indent=2, ensure_ascii=False),
            "```",
            "",
            "### Divergent values",
            "",
            "| endpoint | value |",
            "|---|---|",
        ]
        labels = {str(r["endpoint_id"]): r["label"] for r in f["responses"]}
        for eid, value in f["divergent_values"].items():
            text = json.dumps(value, ensure_ascii=False).replace("|", "\\|")
            lines.append(f"| {labels.get(eid, eid)} | `{text}` |")
        lines += ["", "<details><summary>Full responses</summary>", ""]
        for r in f["responses"]:
            lines += [f"**{r['label']}** (HTTP {r['http_status']}"
                      + (f", {r['transport_error']}" if r["transport_error"] else "") + ")", "",
                      "```json", json.dumps(r["body"], indent=2, ensure_ascii=False), "```", ""]
        lines += ["</details>", ""]
    if report["suspected_spec_defects"]:
        lines += ["## Suspected schema defects", ""]
        for d in report["suspected_spec_defects"]:
            lines.append(f"- `{d['method']}`: all {d['requests']} valid requests rejected; "
                         f"messages: {', '.join(repr(m) for m in d['common_messages'])}")
        lines.append("")
    return "\n".join(lines)


def render_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for f in report["findings"]:
        writer.writerow({
            "method": f["method"], "field_path": f["field_path"], "kind": f["kind"], "policy": f["policy"],
            "verdict": f["verdict"], "reason": f["reason"], "occurrences": f["occurrences"],
            "request_ids": " ".join(map(str, f["request_ids"])), "example_request_id": f["request"]["request_id"],
        })
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary sibling so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_report(report: dict, out_dir: str | Path, roundlog_text: str | None = None) -> dict[str, Path]:
    """Write every report artefact into ``out_dir``; returns name → path."""
    from .plots import plot_fdr, plot_verdicts

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "markdown": out / "report.md",
        "csv": out / "findings.csv",
        "verdicts_plot": out / "verdicts.png",
        "fdr_plot": out / "fdr.png",
    }
    write_atomic(paths["json"], dumps_json(report))
    write_atomic(paths["markdown"], render_markdown(report))
    write_atomic(paths["csv"], render_csv(report))
    plot_verdicts(report, paths["verdicts_plot"])
    plot_fdr(report, paths["fdr_plot"])
    if roundlog_text is not None:
        paths["roundlog"] = out / "roundlog.jsonl"
        write_atomic(paths["roundlog"], roundlog_text)
    return paths
