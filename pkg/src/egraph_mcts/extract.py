"""Tree-cost extraction: greedy fixpoint extractor and an exhaustive oracle."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .egraph import EGraph, ENode
from .lang import Term, print_term


class ExtractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CostFunction:
    """Per-symbol costs; symbols not listed cost ``default``."""

    per_symbol: dict[str, float] = field(default_factory=dict)
    default: float = 1

    def __post_init__(self):
        for sym, c in self.per_symbol.items():
            if c < 0:
                raise ValueError(f"negative cost for {sym!r}")

    def __call__(self, op: str) -> float:
        return self.per_symbol.get(op, self.default)

    def term_cost(self, t: Term) -> float:
        return self(t.op) + sum(self.term_cost(c) for c in t.children)

    @classmethod
    def from_json(cls, data: dict | str) -> CostFunction:
        if isinstance(data, str):
            data = json.loads(data)
        return cls({str(k): float(v) for k, v in data.items()})

    def to_json(self) -> dict:
        return dict(self.per_symbol)


UNIT_COST = CostFunction()


def load_cost_function(path: str | Path) -> CostFunction:
    return CostFunction.from_json(Path(path).read_text())


@dataclass(frozen=True)
class ExtractionResult:
    term: Term
    cost: float

    def __str__(self):
        return print_term(self.term)


def class_costs(g: EGraph, cf: CostFunction = UNIT_COST) -> dict[int, float]:
    """Least tree cost of every class, by iterating until no class improves."""
    if g.pending:
        g.rebuild()
    inf = math.inf
    costs = dict.fromkeys(g.classes, inf)
    find = g.find
    changed = True
    while changed:
        changed = False
        for cid, cls in g.classes.items():
            best = costs[cid]
            for op, children in cls.nodes:
                c = cf(op)
                for ch in children:
                    c += costs[find(ch)]
                if c < best:
                    best = c
            if best < costs[cid]:
                costs[cid] = best
                changed = True
    return costs


def _node_cost(g, cf, costs, node: ENode) -> float:
    op, children = node
    return cf(op) + sum(costs[g.find(ch)] for ch in children)


def _choose(g, cf, costs) -> dict[int, ENode]:
    choice = {}
    for cid, cls in g.classes.items():
        if costs[cid] == math.inf:
            continue
        eligible = [n for n in cls.nodes if _node_cost(g, cf, costs, n) == costs[cid]]
        choice[cid] = min(eligible)
    return choice


def _choose_well_founded(g, cf, costs) -> dict[int, ENode]:
    # zero-cost symbols can make the plain choice cyclic; pick in rounds so that
    # every chosen node only points at classes chosen in earlier rounds
    choice: dict[int, ENode] = {}
    while True:
        ready = {}
        for cid, cls in g.classes.items():
            if cid in choice or costs[cid] == math.inf:
                continue
            eligible = [
                n for n in cls.nodes
                if _node_cost(g, cf, costs, n) == costs[cid]
                and all(g.find(ch) in choice for ch in n[1])
            ]
            if eligible:
                ready[cid] = min(eligible)
        if not ready:
            return choice
        choice.update(ready)


def _build(g, choice, root) -> Term | None:
    memo: dict[int, Term] = {}
    visiting = set()

    def go(cid):
        cid = g.find(cid)
        if cid in memo:
            return memo[cid]
        if cid in visiting:
            raise _Cycle
        visiting.add(cid)
        op, children = choice[cid]
        t = Term(op, tuple(go(ch) for ch in children))
        visiting.discard(cid)
        memo[cid] = t
        return t

    try:
        return go(root)
    except _Cycle:
        return None


class _Cycle(Exception):
    pass


def extract_greedy(g: EGraph, root: int, cf: CostFunction = UNIT_COST) -> ExtractionResult:
    """Cheapest term of ``root``'s class under additive tree cost.

    Ties between equally cheap e-nodes go to the smallest operator name, then
    the smallest child ids.
    """
    costs = class_costs(g, cf)
    root = g.find(root)
    if costs[root] == math.inf:
        raise ExtractionError(f"class {root} has no finite term")
    term = _build(g, _choose(g, cf, costs), root)
    if term is None:
        term = _build(g, _choose_well_founded(g, cf, costs), root)
    return ExtractionResult(term, cf.term_cost(term))


def extract_exact(
    g: EGraph,
    root: int,
    cf: CostFunction = UNIT_COST,
    depth_cap: int = 8,
    max_terms: int = 200_000,
) -> ExtractionResult:
    """Enumerate every term of ``root`` up to ``depth_cap`` and keep the cheapest.

    Exponential; intended as a reference for small graphs. Raises
    ``ExtractionError`` when more than ``max_terms`` terms would be built.
    """
    if g.pending:
        g.rebuild()
    memo: dict[tuple[int, int], list[Term]] = {}
    built = 0

    def terms(cid: int, depth: int) -> list[Term]:
        nonlocal built
        cid = g.find(cid)
        key = (cid, depth)
        if key in memo:
            return memo[key]
        out: list[Term] = []
        if depth > 0:
            for op, children in g.classes[cid].nodes:
                if not children:
                    out.append(Term(op))
                    continue
                options = [terms(ch, depth - 1) for ch in children]
                for combo in itertools.product(*options):
                    out.append(Term(op, combo))
                    built += 1
                    if built > max_terms:
                        raise ExtractionError("enumeration budget exceeded")
        memo[key] = out
        return out

    candidates = terms(root, depth_cap)
    if not candidates:
        raise ExtractionError(f"no term within depth {depth_cap}")
    best = min(candidates, key=lambda t: (cf.term_cost(t), print_term(t)))
    return ExtractionResult(best, cf.term_cost(best))
