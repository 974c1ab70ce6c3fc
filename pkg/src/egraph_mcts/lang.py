"""Operator languages, terms, s-expression I/O and random term generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .rng import make_rng


class ParseError(ValueError):
    """Malformed s-expression text; ``pos`` is the offending character offset."""

    def __init__(self, msg: str, pos: int):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


class TermError(ValueError):
    """Unknown symbol or wrong number of children."""


@dataclass(frozen=True)
class Symbol:
    name: str
    arity: int

    def __post_init__(self):
        if not self.name or any(ch.isspace() or ch in "()" for ch in self.name):
            raise TermError(f"bad symbol name {self.name!r}")
        if self.arity < 0:
            raise TermError(f"negative arity for {self.name!r}")


@dataclass(frozen=True)
class LanguageDef:
    name: str
    symbols: tuple[Symbol, ...]
    leaf_pool: tuple[str, ...]
    _by_name: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        by_name = {}
        for s in self.symbols:
            if s.name in by_name:
                raise TermError(f"duplicate symbol {s.name!r}")
            by_name[s.name] = s
        for leaf in self.leaf_pool:
            if leaf not in by_name or by_name[leaf].arity != 0:
                raise TermError(f"leaf {leaf!r} is not a zero-arity symbol")
        if not self.leaf_pool:
            raise TermError("leaf pool is empty")
        if not any(s.arity > 0 for s in self.symbols):
            raise TermError("language needs at least one operator of arity >= 1")
        object.__setattr__(self, "_by_name", by_name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def arity(self, name: str) -> int:
        try:
            return self._by_name[name].arity
        except KeyError:
            raise TermError(f"unknown symbol {name!r} in language {self.name}") from None

    @classmethod
    def from_json(cls, data: dict | str, name: str = "custom") -> LanguageDef:
        if isinstance(data, str):
            data = json.loads(data)
        symbols = tuple(Symbol(s["name"], int(s["arity"])) for s in data["symbols"])
        return cls(data.get("name", name), symbols, tuple(data["leaves"]))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "symbols": [{"name": s.name, "arity": s.arity} for s in self.symbols],
            "leaves": list(self.leaf_pool),
        }


def load_language(path: str | Path) -> LanguageDef:
    path = Path(path)
    return LanguageDef.from_json(path.read_text(), name=path.stem)


def builtin_language(name: str) -> LanguageDef:
    """``"math"`` or ``"prop"``."""
    text = resources.files("egraph_mcts.data").joinpath(f"{name.lower()}.json").read_text()
    return LanguageDef.from_json(text, name=name.lower())


@dataclass(frozen=True)
class Term:
    op: str
    children: tuple[Term, ...] = ()

    def __str__(self):
        return print_term(self)


# s-expressions -------------------------------------------------------------

def _tokenize(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            yield ch, i
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in "()":
                j += 1
            yield text[i:j], i
            i = j


def read_sexpr(text: str):
    """Parse one s-expression into nested lists of ``(atom, pos)`` pairs.

    Returns ``(head, pos)`` for an atom or ``[pos, item, ...]`` for a list.
    """
    tokens = list(_tokenize(text))
    if not tokens:
        raise ParseError("empty input", 0)

    def parse(k):
        tok, pos = tokens[k]
        if tok == ")":
            raise ParseError("unexpected ')'", pos)
        if tok != "(":
            return (tok, pos), k + 1
        items = [pos]
        k += 1
        while True:
            if k >= len(tokens):
                raise ParseError("unclosed '('", pos)
            if tokens[k][0] == ")":
                return items, k + 1
            item, k = parse(k)
            items.append(item)

    tree, k = parse(0)
    if k != len(tokens):
        raise ParseError("trailing input", tokens[k][1])
    return tree


def split_node(node):
    """Split a ``read_sexpr`` list node into ``(head, head_pos, args)``."""
    pos, *items = node
    if not items:
        raise ParseError("empty list", pos)
    head = items[0]
    if isinstance(head, list):
        raise ParseError("list head must be a symbol", head[0])
    return head[0], head[1], items[1:]


def parse_term(text: str, lang: LanguageDef) -> Term:
    def build(node):
        if isinstance(node, tuple):
            name, pos = node
            args = []
        else:
            name, pos, args = split_node(node)
        if name not in lang:
            raise TermError(f"unknown symbol {name!r} at position {pos}")
        if lang.arity(name) != len(args):
            raise TermError(
                f"{name!r} expects {lang.arity(name)} children, got {len(args)} "
                f"(position {pos})"
            )
        return Term(name, tuple(build(a) for a in args))

    return build(read_sexpr(text))


def print_term(t: Term) -> str:
    if not t.children:
        return t.op
    return "(" + " ".join([t.op] + [print_term(c) for c in t.children]) + ")"


def validate_term(t: Term, lang: LanguageDef) -> None:
    """Raise ``TermError`` unless every node's child count matches its arity."""
    stack = [t]
    while stack:
        node = stack.pop()
        if lang.arity(node.op) != len(node.children):
            raise TermError(
                f"{node.op!r} expects {lang.arity(node.op)} children, got {len(node.children)}"
            )
        stack.extend(node.children)


def term_size(t: Term) -> int:
    return 1 + sum(term_size(c) for c in t.children)


def term_depth(t: Term) -> int:
    return 1 + max((term_depth(c) for c in t.children), default=0)


def random_term(lang: LanguageDef, max_depth: int, seed: int) -> Term:
    """Depth-first random expression.

    Above the depth bound every symbol of the language is equally likely; at
    the bound only leaf-pool symbols are drawn.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    rng = make_rng(seed)
    symbols = lang.symbols
    leaves = lang.leaf_pool

    def gen(depth):
        if depth == max_depth:
            return Term(rng.choice(leaves))
        sym = rng.choice(symbols)
        return Term(sym.name, tuple(gen(depth + 1) for _ in range(sym.arity)))

    return gen(1)
