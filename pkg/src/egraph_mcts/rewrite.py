"""Patterns, rewrite rules and e-matching.

A rule's position in its ``RuleSet`` is its action ID. Rule text looks like::

    shift: (* ?x 2) => (<< ?x 1)
    div-self: (/ ?a ?a) => 1 if ?a != 0

Tokens starting with ``?`` are pattern variables.
"""

from __future__ import annotations

import re
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING

from .lang import LanguageDef, ParseError, TermError, builtin_language, read_sexpr, split_node

if TYPE_CHECKING:
    from .egraph import EGraph

Substitution = dict[str, int]


class RuleError(ValueError):
    pass


@dataclass(frozen=True)
class PVar:
    name: str

    def __str__(self):
        return "?" + self.name


@dataclass(frozen=True)
class PNode:
    op: str
    children: tuple[Pattern, ...] = ()

    def __str__(self):
        if not self.children:
            return self.op
        return "(" + " ".join([self.op] + [str(c) for c in self.children]) + ")"


Pattern = PVar | PNode


def pattern_vars(p: Pattern) -> list[str]:
    """Variables in order of first occurrence."""
    out: list[str] = []

    def walk(q):
        if isinstance(q, PVar):
            if q.name not in out:
                out.append(q.name)
        else:
            for c in q.children:
                walk(c)

    walk(p)
    return out


def parse_pattern(text: str, lang: LanguageDef) -> Pattern:
    def build(node):
        if isinstance(node, tuple):
            name, pos = node
            args = []
        else:
            name, pos, args = split_node(node)
        if name.startswith("?"):
            if args:
                raise ParseError("pattern variable cannot take arguments", pos)
            if len(name) == 1:
                raise ParseError("empty pattern variable name", pos)
            return PVar(name[1:])
        if name not in lang:
            raise TermError(f"unknown symbol {name!r} at position {pos}")
        if lang.arity(name) != len(args):
            raise TermError(f"{name!r} expects {lang.arity(name)} children, got {len(args)}")
        return PNode(name, tuple(build(a) for a in args))

    return build(read_sexpr(text))


# conditions -----------------------------------------------------------------

def class_constant(g: EGraph, cid: int) -> int | None:
    """Integer literal held by the class, if any. Only literal leaves fold."""
    for op, children in g.classes[g.find(cid)].nodes:
        if not children and re.fullmatch(r"-?\d+", op):
            return int(op)
    return None


@dataclass(frozen=True)
class NonZero:
    """Guard ``?var != 0``; holds only when the bound class is a known nonzero constant."""

    var: str

    def __call__(self, g: EGraph, subst: Substitution) -> bool:
        value = class_constant(g, subst[self.var])
        return value is not None and value != 0

    def __str__(self):
        return f"?{self.var} != 0"


_CONDITION_RE = re.compile(r"^\?(\S+)\s*!=\s*0$")


def parse_condition(text: str) -> NonZero:
    m = _CONDITION_RE.match(text.strip())
    if not m:
        raise RuleError(f"unsupported condition {text!r} (only '?x != 0')")
    return NonZero(m.group(1))


@dataclass(frozen=True)
class RewriteRule:
    name: str
    lhs: Pattern
    rhs: Pattern
    condition: Callable[[EGraph, Substitution], bool] | None = field(default=None, compare=False)

    def __post_init__(self):
        free = set(pattern_vars(self.rhs)) - set(pattern_vars(self.lhs))
        if free:
            raise RuleError(f"rule {self.name!r}: unbound variables on the right: {sorted(free)}")
        if isinstance(self.lhs, PVar):
            raise RuleError(f"rule {self.name!r}: left-hand side cannot be a bare variable")
        if isinstance(self.condition, NonZero) and self.condition.var not in pattern_vars(self.lhs):
            raise RuleError(f"rule {self.name!r}: condition uses unbound ?{self.condition.var}")

    def __str__(self):
        s = f"{self.name}: {self.lhs} => {self.rhs}"
        if self.condition is not None:
            s += f" if {self.condition}"
        return s


_RULE_RE = re.compile(r"^\s*([^\s:]+)\s*:(.*)$")


def parse_rule(text: str, lang: LanguageDef) -> RewriteRule:
    m = _RULE_RE.match(text)
    if not m:
        raise RuleError(f"expected 'name: lhs => rhs', got {text!r}")
    name, body = m.group(1), m.group(2)
    if body.count("=>") != 1:
        raise RuleError(f"rule {name!r}: expected exactly one '=>'")
    lhs_text, rhs_text = body.split("=>")
    condition = None
    if " if " in rhs_text:
        rhs_text, cond_text = rhs_text.split(" if ", 1)
        condition = parse_condition(cond_text)
    lhs = parse_pattern(lhs_text, lang)
    rhs = parse_pattern(rhs_text, lang)
    return RewriteRule(name, lhs, rhs, condition)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[RewriteRule, ...]
    language: LanguageDef | None = field(default=None, compare=False)

    def __post_init__(self):
        names = [r.name for r in self.rules]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise RuleError(f"duplicate rule names: {sorted(dup)}")

    def __len__(self):
        return len(self.rules)

    def __getitem__(self, action: int) -> RewriteRule:
        return self.rules[action]

    def __iter__(self):
        return iter(self.rules)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rules]

    def index(self, name: str) -> int:
        return self.names.index(name)


def parse_rules(text: str, lang: LanguageDef) -> RuleSet:
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rules.append(parse_rule(line, lang))
        except (ParseError, TermError, RuleError) as e:
            raise RuleError(f"line {lineno}: {e}") from e
    return RuleSet(tuple(rules), lang)


def load_rules(path: str | Path, lang: LanguageDef) -> RuleSet:
    return parse_rules(Path(path).read_text(encoding="utf-8"), lang)


def builtin_rules(name: str) -> RuleSet:
    lang = builtin_language(name)
    text = resources.files("egraph_mcts.data").joinpath(f"{name.lower()}.rules").read_text()
    return parse_rules(text, lang)


# e-matching -----------------------------------------------------------------

def _ematch(g: EGraph, p: Pattern, cid: int, subst: Substitution) -> Iterator[Substitution]:
    if isinstance(p, PVar):
        bound = subst.get(p.name)
        if bound is None:
            yield {**subst, p.name: cid}
        elif bound == cid:
            yield subst
        return
    arity = len(p.children)
    for op, children in g.classes[cid].nodes:
        if op != p.op or len(children) != arity:
            continue
        if arity == 0:
            yield subst
            continue
        yield from _ematch_children(g, p.children, children, 0, subst)


def _ematch_children(g, pats, ids, i, subst):
    if i == len(pats):
        yield subst
        return
    for s in _ematch(g, pats[i], ids[i], subst):
        yield from _ematch_children(g, pats, ids, i + 1, s)


def match_pattern(g: EGraph, p: Pattern) -> list[tuple[int, Substitution]]:
    """All ``(class, substitution)`` matches of ``p`` in a rebuilt e-graph.

    Ordered by class id, then by bound class ids in variable order.
    """
    if g.pending:
        raise RuntimeError("match_pattern needs a rebuilt e-graph")
    if isinstance(p, PVar):
        return [(cid, {p.name: cid}) for cid in sorted(g.classes)]
    order = pattern_vars(p)
    out = {}
    for cid in g.classes_with_op(p.op):
        for s in _ematch(g, p, cid, {}):
            key = (cid, tuple(s[v] for v in order))
            out.setdefault(key, s)
    return [(key[0], out[key]) for key in sorted(out)]


def instantiate(g: EGraph, p: Pattern, subst: Substitution) -> int:
    """Add ``p`` under ``subst`` to the e-graph and return its canonical class."""
    if isinstance(p, PVar):
        try:
            return g.find(subst[p.name])
        except KeyError:
            raise RuleError(f"unbound pattern variable ?{p.name}") from None
    return g.add(p.op, [instantiate(g, c, subst) for c in p.children])

