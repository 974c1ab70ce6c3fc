"""Command-line entry point: ``egraph-mcts gen | run | bench | heatmap``.

Settings come from, in increasing priority: built-in defaults, a JSON config
file (``--config``), ``EGMCTS_<KEY>`` environment variables, then flags. Keys
are the same everywhere, e.g. ``node_limit`` / ``EGMCTS_NODE_LIMIT`` /
``--node-limit``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import bench
from .env import DEFAULT_NODE_LIMIT
from .extract import UNIT_COST, CostFunction, load_cost_function
from .lang import LanguageDef, builtin_language, load_language, parse_term, term_depth
from .planner import PlannerConfig
from .rewrite import RuleSet, builtin_rules, load_rules

ENV_PREFIX = "EGMCTS_"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("egraph_mcts")


class UsageError(Exception):
    pass


# key -> parser; planner keys are forwarded to PlannerConfig
_PLANNER_KEYS = {
    "budget": int,
    "sim_workers": int,
    "exp_workers": int,
    "gamma": float,
    "c_explore": float,
    "max_sim_step": int,
    "straggler_timeout": float,
    "backend": str,
}
_KEYS = {
    "domain": str,
    "language": str,
    "rules": str,
    "cost": str,
    "engine": str,
    "engines": str,
    "node_limit": int,
    "planner": str,
    "out": str,
    "seed": int,
    "verbosity": int,
    **_PLANNER_KEYS,
}


@dataclass
class CliConfig:
    domain: str = "math"
    language: str | None = None
    rules: str | None = None
    cost: str | None = None
    engine: str = "mcts"
    engines: str = "baseline,mcts"
    node_limit: int = DEFAULT_NODE_LIMIT
    planner: str | None = None
    out: str = "out"
    seed: int = 0
    verbosity: int = 1
    planner_overrides: dict = field(default_factory=dict)

    @classmethod
    def from_sources(cls, file_data: dict, env: dict, flags: dict) -> CliConfig:
        merged: dict = {}
        for source in (file_data, env, flags):
            for k, v in source.items():
                if v is None:
                    continue
                if k not in _KEYS:
                    raise UsageError(f"unknown config key {k!r}")
                try:
                    merged[k] = _KEYS[k](v)
                except (TypeError, ValueError):
                    raise UsageError(f"bad value for {k}: {v!r}") from None
        overrides = {k: merged.pop(k) for k in list(merged) if k in _PLANNER_KEYS}
        return cls(**merged, planner_overrides=overrides)

    # -- resolution; everything is loaded before any run starts ----------------

    def load_language(self, domain: str | None = None) -> LanguageDef:
        if self.language:
            return load_language(_existing(self.language))
        return builtin_language(domain or self.domain)

    def load_rules(self, domain: str | None = None) -> RuleSet:
        if self.rules:
            return load_rules(_existing(self.rules), self.load_language(domain))
        if self.language:
            raise UsageError("a custom language needs a rules file")
        return builtin_rules(domain or self.domain)

    def load_cost(self) -> CostFunction:
        return load_cost_function(_existing(self.cost)) if self.cost else UNIT_COST

    def planner_config(self) -> PlannerConfig:
        base = {}
        if self.planner:
            base = json.loads(_existing(self.planner).read_text())
        base.update(self.planner_overrides)
        base["seed"] = self.seed
        try:
            return PlannerConfig.from_json(base)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad planner config: {exc}") from None

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for key in _KEYS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = environ[name]
    return out


# -- commands --------------------------------------------------------------------

def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_gen(cfg: CliConfig, count: int, depth: int, adversarial: bool = False,
            manifest: str | None = None) -> Path:
    if adversarial:
        cases = bench.adversarial_suite(cfg.domain, count)
    else:
        if count < 1 or depth < 0:
            raise UsageError("--count must be >= 1 and --depth >= 0")
        cases = bench.generate_suite(cfg.domain, count, depth, cfg.seed)
    path = Path(manifest) if manifest else cfg.out_dir / "manifest.json"
    _write(path, bench.dump_manifest(cases))
    for c in cases:
        print(c.name)
    return path


def _run_case(cfg: CliConfig, case: bench.BenchCase, engine: str, rules: RuleSet,
              cost: CostFunction, planner: PlannerConfig | None) -> tuple[bench.RunRecord, list]:
    if engine == "baseline":
        return bench.run_baseline(case, rules, cfg.node_limit, cost), []
    if engine == "mcts":
        trace: list[dict] = []
        record = bench.run_mcts(case, rules, cfg.node_limit, planner, cost, trace=trace)
        return record, trace
    raise UsageError(f"unknown engine {engine!r}")


def cmd_run(cfg: CliConfig, expr: str | None, case_name: str | None,
            manifest: str | None) -> bench.RunRecord:
    if (expr is None) == (case_name is None):
        raise UsageError("give exactly one of --expr or --case")
    if case_name is not None:
        if not manifest:
            raise UsageError("--case needs --manifest")
        cases = {c.name: c for c in bench.load_manifest(_existing(manifest).read_text())}
        if case_name not in cases:
            raise UsageError(f"no case {case_name!r} in {manifest}")
        case = cases[case_name]
        domain = case.domain
    else:
        case, domain = None, cfg.domain
    rules = cfg.load_rules(domain)
    cost = cfg.load_cost()
    planner = cfg.planner_config() if cfg.engine == "mcts" else None
    if case is None:
        term = parse_term(expr, rules.language or cfg.load_language(domain))
        case = bench.BenchCase("expr", domain, term, cfg.seed, term_depth(term))
    record, trace = _run_case(cfg, case, cfg.engine, rules, cost, planner)
    print(record.final_term)
    print(f"init cost {record.init_cost:g}  final cost {record.final_cost:g}  "
          f"time {record.wall_time_s:.3f}s  stop {record.stop_reason}")
    _write(cfg.out_dir / "record.json", json.dumps(record.to_json(), indent=2, sort_keys=True) + "\n")
    if trace:
        _write(cfg.out_dir / "trace.json", json.dumps(trace, indent=2) + "\n")
    return record


def cmd_bench(cfg: CliConfig, manifest: str) -> int:
    engines = [e.strip() for e in cfg.engines.split(",") if e.strip()]
    for e in engines:
        if e not in ("baseline", "mcts"):
            raise UsageError(f"unknown engine {e!r}")
    cases = bench.load_manifest(_existing(manifest).read_text())
    rule_sets = {c.domain: cfg.load_rules(c.domain) for c in cases}
    cost = cfg.load_cost()
    planner = cfg.planner_config() if "mcts" in engines else None
    records: list[bench.RunRecord] = []
    failures: list[str] = []
    for case in cases:
        for engine in engines:
            try:
                record, _ = _run_case(cfg, case, engine, rule_sets[case.domain], cost, planner)
            except UsageError:
                raise
            except Exception as exc:  # noqa: BLE001 - reported per case
                log.error("%s/%s failed: %s", case.name, engine, exc)
                failures.append(f"{case.name}/{engine}: {exc}")
                continue
            log.info("%s/%s: %g -> %g", case.name, engine, record.init_cost, record.final_cost)
            records.append(record)
    out = cfg.out_dir
    _write(out / "results.jsonl", bench.dump_records(records))
    by_domain: dict[str, list] = {}
    domain_of = {c.name: c.domain for c in cases}
    for r in records:
        by_domain.setdefault(domain_of[r.case], []).append(r)
    for domain, recs in sorted(by_domain.items()):
        csv_text, totals = bench.emit_heatmap(recs)
        _write(out / f"heatmap-{domain}.csv", csv_text)
        _write(out / f"heatmap-{domain}.json", json.dumps(totals, indent=2) + "\n")
    timing_text, timing = bench.timing_report(records)
    _write(out / "timing.txt", timing_text)
    _write(out / "timing.json", json.dumps(timing, indent=2, sort_keys=True) + "\n")
    table = bench.comparison_table(records)
    _write(out / "comparison.txt", table)
    print(table, end="")
    if failures:
        print(f"{len(failures)} case(s) failed:", file=sys.stderr)
        for f in failures:
            print(f"  {f}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_heatmap(cfg: CliConfig, paths: list[str]) -> str:
    records = []
    for p in paths:
        records += bench.load_records(_existing(p).read_text())
    csv_text, totals = bench.emit_heatmap(records)
    _write(cfg.out_dir / "heatmap.csv", csv_text)
    _write(cfg.out_dir / "heatmap.json", json.dumps(totals, indent=2) + "\n")
    print(csv_text, end="")
    return csv_text


# -- argument parsing --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    verb = common.add_mutually_exclusive_group()
    verb.add_argument("--quiet", "-q", action="store_const", dest="verbosity", const=0)
    verb.add_argument("--verbose", "-v", action="store_const", dest="verbosity", const=2)
    for key, typ in _KEYS.items():
        if key in ("seed", "out", "verbosity"):
            continue
        common.add_argument(_flag(key), dest=key, type=typ)

    parser = _Parser(prog="egraph-mcts", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="write a benchmark manifest")
    p.add_argument("--count", type=int, default=7)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--adversarial", action="store_true", help="crafted cases instead of random ones")
    p.add_argument("--manifest", help="manifest path (default OUT/manifest.json)")

    p = sub.add_parser("run", parents=[common], help="optimise one expression")
    p.add_argument("--expr")
    p.add_argument("--case")
    p.add_argument("--manifest")

    p = sub.add_parser("bench", parents=[common], help="run engines over a manifest")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("heatmap", parents=[common], help="rule-count CSV from result files")
    p.add_argument("results", nargs="+")
    return parser


def _config_from_args(args, environ=None) -> CliConfig:
    file_data = {}
    if args.config:
        try:
            file_data = json.loads(_existing(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"bad config file: {exc}") from None
        if not isinstance(file_data, dict):
            raise UsageError("config file must hold a JSON object")
    flags = {k: getattr(args, k, None) for k in _KEYS}
    cfg = CliConfig.from_sources(file_data, env_overrides(environ), flags)
    if cfg.node_limit < 1:
        raise UsageError("node_limit must be positive")
    if cfg.engine not in ("baseline", "mcts"):
        raise UsageError(f"unknown engine {cfg.engine!r}")
    return cfg


def main(argv: list[str] | None = None, environ=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args, environ)
        level = {0: logging.WARNING, 1: logging.INFO}.get(cfg.verbosity, logging.DEBUG)
        logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
        log.setLevel(level)
        t0 = time.perf_counter()
        if args.command == "gen":
            cmd_gen(cfg, args.count, args.depth, args.adversarial, args.manifest)
            status = EXIT_OK
        elif args.command == "run":
            cmd_run(cfg, args.expr, args.case, args.manifest)
            status = EXIT_OK
        elif args.command == "bench":
            status = cmd_bench(cfg, args.manifest)
        else:
            cmd_heatmap(cfg, args.results)
            status = EXIT_OK
        log.debug("%s took %.3fs", args.command, time.perf_counter() - t0)
        return status
    except UsageError as exc:
        print(f"egraph-mcts: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - mapped to the runtime exit code
        print(f"egraph-mcts: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
