"""End-to-end runs: readiness, facts, generation, dispatch, filtering, reporting."""

from __future__ import annotations

import contextlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import httpx

from .errors import ConfigError, EmptyFactStoreError, ReadinessError
from .facts import FactStore, extract_for_fleet, load_rules
from .filtering.classify import Finding, classify_round
from .filtering.metrics import detect_spec_defects, fdr_metrics
from .filtering.oracle import CachingOracle, OracleConfig, make_oracle
from .generate import TestMix, TestRequest, gen_batch, read_batch
from .harness import DEFAULT_THRESHOLD_EPOCHS, DEFAULT_TIMEOUT_MS, Endpoint, RoundLog, check_readiness, dispatch, \
    RoundEntry, layer_of, load_fleet, run_round
from .mockfleet.injections import Scenario
from .mockfleet.server import spawn_scenario
from .policy import RuleClassifier, annotate_policies
from .report import build_report, write_report
from .spec import ApiSpec, apply_semantic_types, load_sidecar, load_spec, merge_specs

log = logging.getLogger(__name__)

BUNDLED_SPECS = ("execution_api.json", "beacon_api.json")
BUNDLED = "bundled"


def data_file(*parts: str) -> Path:
    return Path(str(resources.files("specdiff.data").joinpath("/".join(parts))))


def scenario_path(ref: str) -> Path:
    """A scenario file path, or the name of a bundled scenario."""
    p = Path(ref)
    if p.exists():
        return p
    bundled = data_file("scenarios", ref if ref.endswith(".json") else ref + ".json")
    if bundled.exists():
        return bundled
    raise ConfigError(f"no scenario file or bundled scenario named {ref!r}")


def load_run_spec(spec_paths: Sequence[str] = (), sidecar: str | None = BUNDLED, annotate: bool = True) -> ApiSpec:
    """Merged spec with semantic types bound and unlabelled fields labelled by rule.

    With no paths the bundled execution and beacon specs are used.
    """
    paths = [Path(p) for p in spec_paths] or [data_file("specs", name) for name in BUNDLED_SPECS]
    spec = merge_specs(load_spec(p) for p in paths)
    if sidecar:
        table = load_sidecar(data_file("semantic_types.json") if sidecar == BUNDLED else sidecar)
        spec = apply_semantic_types(spec, table)
    if annotate:
        spec, _ = annotate_policies(spec, RuleClassifier())
    return spec


@dataclass
class RunConfig:
    specs: list[str] = field(default_factory=list)
    sidecar: str | None = BUNDLED
    rules: str | None = None
    fleet_file: str | None = None
    scenario: str | None = None
    mix: TestMix = field(default_factory=TestMix)
    seed: int = 0
    oracle: OracleConfig = field(default_factory=OracleConfig)
    report_dir: str | None = None
    threshold_epochs: int = DEFAULT_THRESHOLD_EPOCHS
    skip_readiness: bool = False
    timeout_ms: int | None = None
    filter_enabled: bool = True
    batch_file: str | None = None


@dataclass
class RunResult:
    report: dict
    round_log: RoundLog
    findings: list[Finding]
    batch: list[TestRequest]
    store: FactStore | None = None
    paths: dict = field(default_factory=dict)

    @property
    def has_genuine(self) -> bool:
        return bool(self.report["findings"])


@contextlib.contextmanager
def open_fleet(config: RunConfig) -> Iterator[tuple[list[Endpoint], Scenario | None]]:
    """Endpoints from a fleet file, or a mock fleet spun up for a scenario."""
    if bool(config.fleet_file) == bool(config.scenario):
        raise ConfigError("give exactly one of a fleet file or a scenario")
    if config.fleet_file:
        yield load_fleet(config.fleet_file, config.timeout_ms), None
        return
    scenario = Scenario.load(scenario_path(config.scenario))
    with spawn_scenario(scenario, timeout_ms=config.timeout_ms or DEFAULT_TIMEOUT_MS) as fleet:
        yield fleet.endpoints, scenario


def _meta(config: RunConfig, spec: ApiSpec, endpoints: list[Endpoint], scenario: Scenario | None) -> dict:
    return {
        "seed": config.seed,
        "mix": str(config.mix),
        "oracle_mode": config.oracle.mode,
        "filter": config.filter_enabled,
        "spec_sources": config.specs or [f"{BUNDLED}:{n}" for n in BUNDLED_SPECS],
        "methods": len(spec),
        "fleet": [{"endpoint_id": e.endpoint_id, "label": e.label, "layer": e.layer} for e in endpoints],
        "scenario": None if scenario is None else {"chain_seed": scenario.chain_seed,
                                                   "node_count": scenario.node_count,
                                                   "description": scenario.description},
    }


def analyse(spec: ApiSpec, round_log: RoundLog, batch: list[TestRequest], config: RunConfig, meta: dict,
            scenario: Scenario | None, extra: dict | None = None) -> tuple[dict, list[Finding]]:
    oracle = CachingOracle(make_oracle(config.oracle))
    findings = classify_round(round_log, spec, oracle, filter_enabled=config.filter_enabled,
                              max_parallel=config.oracle.max_parallel)
    labelled = [i for i in (scenario.injections if scenario else []) if i.label]
    metrics = fdr_metrics(findings, labelled, spec) if labelled else None
    labels = {e.endpoint_id: e.label for e in round_log.fleet}
    report = build_report(meta=meta, batch=batch, findings=findings, readiness=round_log.readiness, labels=labels,
                          metrics=metrics, spec_defects=detect_spec_defects(round_log, spec), extra=extra)
    return report, findings


def run_pipeline(config: RunConfig) -> RunResult:
    """One full differential round; writes the report when ``report_dir`` is set."""
    spec = load_run_spec(config.specs, config.sidecar)
    with open_fleet(config) as (endpoints, scenario), httpx.Client() as client:
        readiness = check_readiness(endpoints, config.threshold_epochs, client)
        if not readiness.ready:
            if not config.skip_readiness:
                raise ReadinessError(readiness)
            log.warning("fleet not ready, continuing: %s", "; ".join(readiness.failures))
        store = None
        if config.batch_file:
            batch = read_batch(config.batch_file)
        else:
            if config.mix.semantic:
                try:
                    store = extract_for_fleet(load_rules(config.rules), endpoints, spec, client)
                except EmptyFactStoreError as exc:
                    log.warning("no facts extracted (%s); semantic slots degrade", exc)
            batch = gen_batch(spec, config.mix, config.seed, store)
        round_log = run_round(spec, endpoints, batch, threshold_epochs=config.threshold_epochs,
                              skip_readiness=config.skip_readiness, client=client, readiness=readiness)
        meta = _meta(config, spec, endpoints, scenario)
    report, findings = analyse(spec, round_log, batch, config, meta, scenario)
    result = RunResult(report, round_log, findings, batch, store)
    if config.report_dir:
        result.paths = write_report(report, config.report_dir, round_log.dumps())
    return result


def _outcome(records) -> list:
    return [(r.endpoint_id, r.http_status, r.transport_error, json.dumps(r.body, sort_keys=True)) for r in records]


def replay_pipeline(config: RunConfig, roundlog_path: str | Path) -> RunResult:
    """Re-send a logged round to a fleet with the same shape and re-filter it.

    The report gains a ``replay`` section listing requests whose responses
    changed since the log was taken.
    """
    logged = RoundLog.read(roundlog_path)
    spec = load_run_spec(config.specs, config.sidecar)
    batch = [e.request for e in logged.entries]
    with open_fleet(config) as (endpoints, scenario), httpx.Client() as client:
        shape = sorted((e.endpoint_id, e.layer) for e in endpoints)
        if logged.fleet and shape != sorted((e.endpoint_id, e.layer) for e in logged.fleet):
            raise ConfigError("fleet does not match the endpoints recorded in the round log")
        readiness = check_readiness(endpoints, config.threshold_epochs, client)
        if not readiness.ready and not config.skip_readiness:
            raise ReadinessError(readiness)
        by_layer = {layer: [e for e in endpoints if e.layer == layer] for layer in ("EL", "CL")}
        entries = [RoundEntry(req, dispatch(req, by_layer[layer_of(req)], client)) for req in batch]
        round_log = RoundLog(entries, sorted(endpoints, key=lambda e: e.endpoint_id), readiness)
        meta = _meta(config, spec, endpoints, scenario)
    changed = [new.request.request_id for old, new in zip(logged.entries, entries)
               if _outcome(old.records) != _outcome(new.records)]
    extra = {"replay": {"source": str(roundlog_path), "requests": len(entries), "changed_request_ids": changed}}
    report, findings = analyse(spec, round_log, batch, config, meta, scenario, extra)
    result = RunResult(report, round_log, findings, batch)
    if config.report_dir:
        result.paths = write_report(report, config.report_dir, round_log.dumps())
    return result
