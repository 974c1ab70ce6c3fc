"""Benchmark harness: rule-sweep baseline, MCTS runs, suites and reports."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field

from .egraph import EGraph, apply_rule
from .env import DEFAULT_NODE_LIMIT, EnvConfig
from .extract import UNIT_COST, CostFunction, extract_greedy
from .lang import Term, builtin_language, parse_term, print_term, random_term, term_depth
from .planner import PlannerConfig, run_episode
from .rewrite import RuleSet
from .rng import derive_seed

WALL_TIME_KEYS = ("wall_time_s", "per_stage_times")


@dataclass(frozen=True)
class BenchCase:
    name: str
    domain: str
    term: Term
    seed: int
    max_depth: int

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "domain": self.domain,
            "term": print_term(self.term),
            "seed": self.seed,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_json(cls, data: dict) -> BenchCase:
        lang = builtin_language(data["domain"])
        return cls(data["name"], data["domain"], parse_term(data["term"], lang),
                   int(data["seed"]), int(data["max_depth"]))


@dataclass
class RunRecord:
    case: str
    engine: str
    final_cost: float
    init_cost: float
    rule_counts: dict[str, int]
    stop_reason: str
    final_term: str
    enode_count: int
    sim_workers: int = 0
    final_sequence: list[int] = field(default_factory=list)
    wall_time_s: float = 0.0
    per_stage_times: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> RunRecord:
        return cls(**data)

    def masked(self) -> dict:
        """JSON form with wall-clock fields removed, for reproducibility checks."""
        d = self.to_json()
        for k in WALL_TIME_KEYS:
            d.pop(k, None)
        return d


def dump_records(records: Iterable[RunRecord]) -> str:
    return "".join(json.dumps(r.to_json()) + "\n" for r in records)


def load_records(text: str) -> list[RunRecord]:
    return [RunRecord.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


# -- engines -------------------------------------------------------------------

def run_baseline(
    case: BenchCase,
    rules: RuleSet,
    node_limit: int = DEFAULT_NODE_LIMIT,
    cost_fn: CostFunction = UNIT_COST,
    max_sweeps: int = 1000,
) -> RunRecord:
    """Sweep every rule in index order until the node limit, saturation or the sweep cap.

    ``rule_counts`` counts sweeps in which a rule changed the e-graph.
    """
    t0 = time.perf_counter()
    g = EGraph(rules.language)
    root = g.add_term(case.term)
    counts = dict.fromkeys(rules.names, 0)
    stop = "episode_cap"
    if g.num_enodes() >= node_limit:
        stop = "node_limit"
    else:
        for _ in range(max_sweeps):
            changed = False
            for rule in rules:
                report = apply_rule(g, rule)
                if not report.saturated:
                    counts[rule.name] += 1
                    changed = True
                if g.num_enodes() >= node_limit:
                    stop = "node_limit"
                    break
            if stop == "node_limit":
                break
            if not changed:
                stop = "saturated"
                break
    best = extract_greedy(g, root, cost_fn)
    return RunRecord(
        case=case.name,
        engine="baseline",
        final_cost=best.cost,
        init_cost=cost_fn.term_cost(case.term),
        rule_counts=counts,
        stop_reason=stop,
        final_term=print_term(best.term),
        enode_count=g.num_enodes(),
        wall_time_s=time.perf_counter() - t0,
    )


def run_mcts(
    case: BenchCase,
    rules: RuleSet,
    node_limit: int = DEFAULT_NODE_LIMIT,
    planner_cfg: PlannerConfig | None = None,
    cost_fn: CostFunction = UNIT_COST,
    max_episode_len: int = 500,
    trace: list | None = None,
) -> RunRecord:
    """One planned episode; per-stage root statistics are appended to ``trace``."""
    cfg = planner_cfg or PlannerConfig()
    env = EnvConfig(case.term, rules, node_limit, cost_fn, max_episode_len)
    report = run_episode(env, cfg)
    if trace is not None:
        trace.extend(report.stages)
    counts = dict.fromkeys(rules.names, 0)
    for action, n in report.rule_counts.items():
        counts[rules[action].name] += n
    return RunRecord(
        case=case.name,
        engine="mcts",
        final_cost=report.extraction.cost,
        init_cost=report.init_cost,
        rule_counts=counts,
        stop_reason=report.stop_reason,
        final_term=print_term(report.extraction.term),
        enode_count=report.enode_count,
        sim_workers=cfg.sim_workers,
        final_sequence=report.final_sequence,
        wall_time_s=report.wall_time,
        per_stage_times=report.per_stage_times,
    )


# -- suites ----------------------------------------------------------------------

def generate_suite(domain: str, count: int, max_depth: int, base_seed: int) -> list[BenchCase]:
    if count < 1:
        raise ValueError("count must be >= 1")
    lang = builtin_language(domain)
    cases = []
    for i in range(count):
        seed = derive_seed(base_seed, i)
        term = random_term(lang, max_depth, seed)
        cases.append(BenchCase(f"{domain.upper()}-{max_depth}-{i}", domain.lower(), term, seed, max_depth))
    return cases


def _chain(op: str, leaves: Sequence[str]) -> str:
    text = leaves[0]
    for leaf in leaves[1:]:
        text = f"({op} {text} {leaf})"
    return text


# Each pair is (long associative chain, small sub-term). The chain only grows
# under the commutativity/associativity rules at the front of the rule file;
# the sub-term collapses only through rules that appear later in the file,
# and in an order that needs several sweeps.
_MATH_ADVERSARIAL = [
    (("a", "b", "c", "x", "y", "z", "a", "c", "y", "b"), "(/ (* x (+ 1 1)) 2)"),
    (("x", "y", "z", "a", "b", "c", "x", "z", "b", "a"), "(ln (pow 1 2))"),
    (("c", "a", "z", "y", "x", "b", "c", "y", "a", "x"), "(- (+ a (pow b 1)) b)"),
    (("y", "b", "x", "c", "a", "z", "b", "y", "c", "z"), "(* (sqrt 1) (pow y 1))"),
    (("z", "x", "a", "b", "y", "c", "a", "x", "z", "c"), "(- (<< (sqrt 1) 0) 1)"),
]

_PROP_ADVERSARIAL = [
    (("(& p q)", "(& r s)", "(& p r)", "(& q s)", "(& p s)", "(& q r)"), "(~ (-> p p))", "&"),
    (("(& p q)", "(& q r)", "(& r s)", "(& s p)", "(& p r)", "(& q s)"), "(~ (~ (& q (~ q))))", "|"),
    (("(& q p)", "(& s r)", "(& r p)", "(& s q)", "(& r q)", "(& s p)"), "(-> (~ (~ r)) r)", "&"),
    (("(& r s)", "(& p q)", "(& s q)", "(& p r)", "(& q r)", "(& p s)"), "(& (~ (~ s)) (~ s))", "|"),
    (("(& s p)", "(& r q)", "(& q p)", "(& s r)", "(& p r)", "(& s q)"), "(-> (~ false) (~ (~ true)))", "&"),
]


def make_adversarial_case(domain: str, variant: int = 0) -> BenchCase:
    """A case where sweeping rules in file order burns the node budget early.

    The chain part explodes under the first rules of every sweep, while the
    cheap simplification needs a handful of late rules in reverse file order.
    A planner that applies those few rules first reaches a much smaller term.
    """
    domain = domain.lower()
    lang = builtin_language(domain)
    if domain == "math":
        leaves, core = _MATH_ADVERSARIAL[variant % len(_MATH_ADVERSARIAL)]
        text = f"(+ {_chain('+', leaves)} {core})"
    elif domain == "prop":
        leaves, core, top = _PROP_ADVERSARIAL[variant % len(_PROP_ADVERSARIAL)]
        text = f"({top} {_chain('|', leaves)} {core})"
    else:
        raise ValueError(f"unknown domain {domain!r}")
    term = parse_term(text, lang)
    return BenchCase(f"ADV-{domain.upper()}-{variant}", domain, term, variant, term_depth(term))


def adversarial_suite(domain: str, count: int = 5) -> list[BenchCase]:
    return [make_adversarial_case(domain, i) for i in range(count)]


def dump_manifest(cases: Iterable[BenchCase]) -> str:
    return json.dumps([c.to_json() for c in cases], indent=2) + "\n"


def load_manifest(text: str) -> list[BenchCase]:
    return [BenchCase.from_json(d) for d in json.loads(text)]


# -- reports ---------------------------------------------------------------------

def rule_entropy(counts: dict[str, int]) -> float:
    """Shannon entropy (nats) of the rule-application distribution."""
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return -sum(n / total * math.log(n / total) for n in counts.values() if n > 0)


def emit_heatmap(records: Sequence[RunRecord]) -> tuple[str, dict]:
    """Rule-application matrix as CSV (rows: cases, columns: rules) plus totals."""
    if not records:
        return "case\n", {"rules": [], "rows": 0, "totals": {}}
    rules = list(records[0].rule_counts)
    for r in records[1:]:
        if list(r.rule_counts) != rules:
            raise ValueError(f"record {r.case}/{r.engine} uses a different rule set")
    multi_engine = len({r.engine for r in records}) > 1
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case"] + rules)
    for r in records:
        label = f"{r.case}/{r.engine}" if multi_engine else r.case
        writer.writerow([label] + [r.rule_counts[name] for name in rules])
    totals = {name: sum(r.rule_counts[name] for r in records) for name in rules}
    return buf.getvalue(), {"rules": rules, "rows": len(records), "totals": totals}


def _engine_label(r: RunRecord) -> str:
    if r.engine == "mcts":
        return f"mcts[{r.sim_workers}w]"
    return r.engine


def timing_report(records: Sequence[RunRecord]) -> tuple[str, dict]:
    """Wall time per engine configuration, with a serial/parallel MCTS ratio."""
    if not records:
        return "no records\n", {"empty": True}
    groups: dict[str, list[float]] = {}
    for r in records:
        groups.setdefault(_engine_label(r), []).append(r.wall_time_s)
    summary = {
        label: {"runs": len(ts), "total_s": sum(ts), "mean_s": sum(ts) / len(ts)}
        for label, ts in sorted(groups.items())
    }
    data: dict = {"empty": False, "engines": summary}
    serial = [r.wall_time_s for r in records if r.engine == "mcts" and r.sim_workers == 1]
    parallel = [r.wall_time_s for r in records if r.engine == "mcts" and r.sim_workers > 1]
    if serial and parallel:
        s, p = sum(serial) / len(serial), sum(parallel) / len(parallel)
        data["speedup"] = s / p if p > 0 else math.inf
    lines = [f"{'engine':<16}{'runs':>6}{'total_s':>12}{'mean_s':>12}"]
    for label, row in summary.items():
        lines.append(f"{label:<16}{row['runs']:>6}{row['total_s']:>12.3f}{row['mean_s']:>12.3f}")
    if "speedup" in data:
        lines.append(f"serial/parallel speedup: {data['speedup']:.2f}x")
    return "\n".join(lines) + "\n", data


def comparison_table(records: Sequence[RunRecord]) -> str:
    lines = [f"{'case':<16}{'engine':<14}{'init':>8}{'final':>8}{'stop':>12}"]
    for r in records:
        lines.append(
            f"{r.case:<16}{_engine_label(r):<14}{r.init_cost:>8g}{r.final_cost:>8g}{r.stop_reason:>12}"
        )
    return "\n".join(lines) + "\n"
