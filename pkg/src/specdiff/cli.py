"""Command-line entry point.

Exit codes: 0 when no genuine finding is reported, 2 when at least one is,
1 on configuration, spec or readiness errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError, ReadinessError, SpecDiffError
from .facts import FactStore, extract_for_fleet, load_rules
from .filtering.oracle import API_KEY_ENV, ExternalOracle, OracleConfig
from .generate import TestMix, gen_batch, write_batch
from .harness import DEFAULT_THRESHOLD_EPOCHS, DEFAULT_TIMEOUT_MS
from .mockfleet.injections import Scenario
from .mockfleet.server import spawn_scenario
from .pipeline import BUNDLED, RunConfig, load_run_spec, open_fleet, replay_pipeline, run_pipeline, scenario_path
from .policy import OracleClassifier, RuleClassifier, annotate_policies
from .report import write_atomic
from .spec import dump_spec, load_spec

log = logging.getLogger("specdiff")

EXIT_OK, EXIT_ERROR, EXIT_FINDINGS = 0, 1, 2
ENV_PREFIX = "SPECDIFF_"


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _list(value: Any) -> list[str]:
    if isinstance(value, list):
        return [str(v) for v in value]
    return [v for v in str(value).split(",") if v]


class Settings:
    """Resolves each option as flag, then ``SPECDIFF_<NAME>``, then config file, then default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict = {}
        if getattr(args, "config", None):
            try:
                self.file = json.loads(Path(args.config).read_text())
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
            if not isinstance(self.file, dict):
                raise ConfigError("config file must hold a JSON object")

    def get(self, name: str, default: Any = None, convert: Callable[[Any], Any] = lambda v: v) -> Any:
        flag = getattr(self.args, name, None)
        env = os.environ.get(ENV_PREFIX + name.upper())
        if flag not in (None, []):
            source, raw = f"--{name.replace('_', '-')}", flag
        elif env is not None:
            source, raw = ENV_PREFIX + name.upper(), env
        elif name in self.file:
            source, raw = f"config key {name!r}", self.file[name]
        else:
            return default
        try:
            return convert(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {source}: {exc}") from exc


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", dest="spec", action="append", help="spec file (repeatable); default: bundled specs")
    p.add_argument("--sidecar", help=f"semantic-type sidecar, '{BUNDLED}' or 'none'")


def _add_fleet_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fleet", help="fleet file listing endpoints")
    p.add_argument("--scenario", help="mock scenario file or bundled scenario name")
    p.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    p.add_argument("--threshold-epochs", dest="threshold_epochs", type=int)
    p.add_argument("--skip-readiness", dest="skip_readiness", action="store_const", const=True)


def _add_oracle_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--oracle-mode", dest="oracle_mode",
                   help="stub_false | stub_lookup:<file> | external | unavailable | consensus:<a>+<b>")
    p.add_argument("--oracle-url", dest="oracle_url", help="base URL of an OpenAI-compatible API")
    p.add_argument("--oracle-model", dest="oracle_model")
    p.add_argument("--oracle-parallel", dest="oracle_parallel", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specdiff", description="Spec-driven differential testing of API clients.")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="label every result field with a consistency policy")
    p.add_argument("--spec", dest="spec", action="append", required=True)
    p.add_argument("--classifier", choices=("rule", "oracle"))
    _add_oracle_args(p)

    p = sub.add_parser("facts", help="extract a fact store from a fleet")
    _add_spec_args(p)
    _add_fleet_args(p)
    p.add_argument("--rules", help="fact rule file; default: bundled rules")
    p.add_argument("--out", required=True)

    p = sub.add_parser("generate", help="write a request batch as JSON lines")
    _add_spec_args(p)
    p.add_argument("--mix", help="invalid,valid,semantic counts per method (default 5,5,10)")
    p.add_argument("--seed", type=int)
    p.add_argument("--facts", help="fact store written by 'facts'")
    p.add_argument("--out", required=True)

    for name, text in (("run", "generate, dispatch, diff, filter and report"),
                       ("replay", "re-send a logged round and re-filter it")):
        p = sub.add_parser(name, help=text)
        _add_spec_args(p)
        _add_fleet_args(p)
        _add_oracle_args(p)
        p.add_argument("--report-dir", dest="report_dir")
        p.add_argument("--no-filter", dest="no_filter", action="store_const", const=True)
        if name == "run":
            p.add_argument("--mix")
            p.add_argument("--seed", type=int)
            p.add_argument("--rules")
            p.add_argument("--batch", help="pre-generated batch instead of generating one")
        else:
            p.add_argument("--roundlog", required=True)

    p = sub.add_parser("mockfleet", help="serve a mock fleet until interrupted")
    p.add_argument("--scenario")
    p.add_argument("--chain-seed", dest="chain_seed", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--fleet-out", dest="fleet_out", help="also write the fleet file here")
    p.add_argument("--duration", type=float, help="stop after this many seconds")
    return parser


def _oracle_config(s: Settings) -> OracleConfig:
    return OracleConfig(
        mode=s.get("oracle_mode", "stub_false"),
        base_url=s.get("oracle_url"),
        model=s.get("oracle_model"),
        max_parallel=s.get("oracle_parallel", 4, int),
    )


def _sidecar(s: Settings) -> str | None:
    value = s.get("sidecar", BUNDLED)
    return None if value in ("none", "") else value


def _run_config(s: Settings) -> RunConfig:
    return RunConfig(
        specs=s.get("spec", [], _list),
        sidecar=_sidecar(s),
        rules=s.get("rules"),
        fleet_file=s.get("fleet"),
        scenario=s.get("scenario"),
        mix=s.get("mix", TestMix(), lambda v: TestMix.parse(v) if isinstance(v, str) else TestMix(*v)),
        seed=s.get("seed", 0, int),
        oracle=_oracle_config(s),
        report_dir=s.get("report_dir"),
        threshold_epochs=s.get("threshold_epochs", DEFAULT_THRESHOLD_EPOCHS, int),
        skip_readiness=s.get("skip_readiness", False, _bool),
        timeout_ms=s.get("timeout_ms", None, int),
        filter_enabled=not s.get("no_filter", False, _bool),
        batch_file=s.get("batch"),
    )


def _summary(result, out=None) -> None:
    out = out or sys.stdout
    r = result.report
    print(f"requests: {r['requests']['total']}  divergent: {r['divergences']['requests_with_divergence']}  "
          f"genuine findings: {len(r['findings'])}", file=out)
    for k, v in r["filtered"].items():
        print(f"filtered {k}: {v}", file=out)
    for f in r["findings"]:
        print(f"GENUINE {f['method']} {f['kind']} {f['field_path']} x{f['occurrences']}: {f['reason']}", file=out)
    for d in r["suspected_spec_defects"]:
        print(f"SPEC-DEFECT? {d['method']}: {d['requests']} valid requests uniformly rejected "
              f"({'; '.join(d['common_messages'])})", file=out)
    if r.get("metrics"):
        m = r["metrics"]
        print(f"FDR with filter: {m['with_filter']['fdr_percent']}%  without: "
              f"{m['without_filter']['fdr_percent']}%", file=out)
    if r.get("replay"):
        print(f"replayed {r['replay']['requests']} requests; changed: {r['replay']['changed_request_ids']}", file=out)
    for name, path in result.paths.items():
        print(f"wrote {name}: {path}", file=out)


def cmd_annotate(s: Settings) -> int:
    if s.get("classifier", "rule") == "oracle":
        cfg = _oracle_config(s)
        classifier = OracleClassifier(ExternalOracle(cfg.base_url or "", cfg.model or ""))
    else:
        classifier = RuleClassifier()
    for path in s.get("spec", [], _list):
        spec, audit = annotate_policies(load_spec(path), classifier)
        src = Path(path)
        out = src.with_name(src.name[:-5] + ".annotated.json" if src.name.endswith(".json")
                            else src.name + ".annotated.json")
        write_atomic(out, dump_spec(spec))
        counts: dict[str, int] = {}
        for fields in audit.values():
            for policy in fields.values():
                counts[policy] = counts.get(policy, 0) + 1
        print(f"{out}: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def cmd_facts(s: Settings) -> int:
    cfg = _run_config(s)
    spec = load_run_spec(cfg.specs, cfg.sidecar)
    with open_fleet(cfg) as (endpoints, _):
        store = extract_for_fleet(load_rules(cfg.rules), endpoints, spec)
    write_atomic(Path(s.get("out")), json.dumps(store.to_json(), indent=2) + "\n")
    print(", ".join(f"{k} {len(v)}" for k, v in sorted(store.facts.items())))
    return EXIT_OK


def cmd_generate(s: Settings) -> int:
    cfg = _run_config(s)
    spec = load_run_spec(cfg.specs, cfg.sidecar)
    store = None
    facts = s.get("facts")
    if facts:
        try:
            store = FactStore.from_json(json.loads(Path(facts).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read fact store {facts}: {exc}") from exc
    batch = gen_batch(spec, cfg.mix, cfg.seed, store)
    write_batch(batch, s.get("out"))
    print(f"wrote {len(batch)} requests for {len(spec)} methods to {s.get('out')}")
    return EXIT_OK


def cmd_run(s: Settings) -> int:
    result = run_pipeline(_run_config(s))
    _summary(result)
    return EXIT_FINDINGS if result.has_genuine else EXIT_OK


def cmd_replay(s: Settings) -> int:
    result = replay_pipeline(_run_config(s), s.get("roundlog"))
    _summary(result)
    return EXIT_FINDINGS if result.has_genuine else EXIT_OK


def cmd_mockfleet(s: Settings) -> int:
    ref = s.get("scenario")
    if ref:
        scenario = Scenario.load(scenario_path(ref))
    else:
        scenario = Scenario(chain_seed=s.get("chain_seed", 7, int), node_count=s.get("nodes", 3, int))
    stop = threading.Event()
    with spawn_scenario(scenario, timeout_ms=s.get("timeout_ms", DEFAULT_TIMEOUT_MS, int)) as fleet:
        doc = json.dumps({"endpoints": [e.to_json() for e in fleet.endpoints]}, indent=2)
        if s.get("fleet_out"):
            write_atomic(Path(s.get("fleet_out")), doc + "\n")
        print(doc, flush=True)
        if threading.current_thread() is threading.main_thread():
            signal.signal(signal.SIGTERM, lambda *_: stop.set())
        try:
            stop.wait(s.get("duration", None, float))
        except KeyboardInterrupt:
            pass
    return EXIT_OK


COMMANDS = {"annotate": cmd_annotate, "facts": cmd_facts, "generate": cmd_generate, "run": cmd_run,
            "replay": cmd_replay, "mockfleet": cmd_mockfleet}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings(args)
        level = str(settings.get("log_level", "WARNING")).upper()
        logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if os.environ.get(API_KEY_ENV):
            log.debug("oracle API key present in %s", API_KEY_ENV)
        return COMMANDS[args.command](settings)
    except ReadinessError as exc:
        print("error: fleet not ready", file=sys.stderr)
        for failure in exc.report.failures:
            print(f"  {failure}", file=sys.stderr)
        return EXIT_ERROR
    except SpecDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
