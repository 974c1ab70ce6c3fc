"""Hashconsed e-graph with deferred (worklist) congruence repair."""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, field

from .lang import LanguageDef, Term
from .rewrite import RewriteRule, instantiate, match_pattern

ENode = tuple[str, tuple[int, ...]]


class EGraphError(ValueError):
    pass


@dataclass
class EClass:
    id: int
    nodes: list[ENode] = field(default_factory=list)
    parents: list[tuple[ENode, int]] = field(default_factory=list)


@dataclass(frozen=True)
class ApplyReport:
    matches: int
    nodes_added: int
    unions: int

    @property
    def saturated(self) -> bool:
        # nothing new: no e-node added and no two classes merged
        return self.nodes_added == 0 and self.unions == 0


class EGraph:
    """E-classes over a union-find of dense integer ids.

    ``enode_count`` counts every e-node ever hashconsed into the graph. It only
    grows, which makes it usable as a construction budget; merges caused by
    congruence do not give nodes back. ``num_canonical_enodes`` gives the
    deduplicated count.
    """

    def __init__(self, language: LanguageDef | None = None):
        self.language = language
        self.uf: list[int] = []
        self.hashcons: dict[ENode, int] = {}
        self.classes: dict[int, EClass] = {}
        self.enode_count = 0
        self.pending: list[tuple[ENode, int]] = []
        self.union_log: list[tuple[int, int]] = []
        self._merged = False
        self._op_index: dict[str, list[int]] | None = None

    # -- union-find --------------------------------------------------------

    def find(self, cid: int) -> int:
        uf = self.uf
        try:
            root = uf[cid]
        except (IndexError, TypeError):
            raise EGraphError(f"unknown e-class id {cid!r}") from None
        if cid < 0:
            raise EGraphError(f"unknown e-class id {cid!r}")
        while uf[root] != root:
            root = uf[root]
        while uf[cid] != root:
            uf[cid], cid = root, uf[cid]
        return root

    def union(self, a: int, b: int) -> tuple[int, bool]:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra, False
        ca, cb = self.classes[ra], self.classes[rb]
        # keep the class with more parents as root; ties go to the older id
        if (len(cb.parents), -rb) > (len(ca.parents), -ra):
            ra, rb, ca, cb = rb, ra, cb, ca
        self.uf[rb] = ra
        self.pending.extend(cb.parents)
        ca.nodes.extend(cb.nodes)
        ca.parents.extend(cb.parents)
        del self.classes[rb]
        self.union_log.append((ra, rb))
        self._merged = True
        self._op_index = None
        return ra, True

    # -- construction ------------------------------------------------------

    def canonicalize(self, node: ENode) -> ENode:
        op, children = node
        find = self.find
        return op, tuple(find(c) for c in children)

    def add(self, op: str, children: Iterable[int] = ()) -> int:
        """Hashcons the e-node ``op(children)``; returns its canonical class."""
        node = (op, tuple(self.find(c) for c in children))
        cid = self.hashcons.get(node)
        if cid is not None:
            return self.find(cid)
        if self.language is not None and self.language.arity(op) != len(node[1]):
            raise EGraphError(f"{op!r} expects {self.language.arity(op)} children")
        cid = len(self.uf)
        self.uf.append(cid)
        self.classes[cid] = EClass(cid, [node])
        self.hashcons[node] = cid
        self.enode_count += 1
        for child in dict.fromkeys(node[1]):
            self.classes[child].parents.append((node, cid))
        self._op_index = None
        return cid

    def add_term(self, t: Term) -> int:
        if self.language is not None and t.op not in self.language:
            raise EGraphError(f"symbol {t.op!r} not in language {self.language.name}")
        return self.add(t.op, [self.add_term(c) for c in t.children])

    def lookup_term(self, t: Term) -> int | None:
        """Class representing ``t`` without adding anything, or None."""
        ids = []
        for c in t.children:
            cid = self.lookup_term(c)
            if cid is None:
                return None
            ids.append(cid)
        cid = self.hashcons.get((t.op, tuple(self.find(i) for i in ids)))
        return None if cid is None else self.find(cid)

    # -- congruence --------------------------------------------------------

    def rebuild(self) -> int:
        """Restore congruence closure; returns the number of repair rounds."""
        rounds = 0
        hashcons = self.hashcons
        while self.pending:
            rounds += 1
            todo, self.pending = self.pending, []
            for node, cid in todo:
                cnode = self.canonicalize(node)
                if cnode != node:
                    hashcons.pop(node, None)
                other = hashcons.get(cnode)
                if other is None:
                    hashcons[cnode] = cid
                elif self.find(other) != self.find(cid):
                    self.union(other, cid)
        if self._merged:
            self._recanonicalize()
        return rounds

    def _recanonicalize(self):
        find = self.find
        hashcons = {}
        for cid, cls in self.classes.items():
            nodes = sorted({(op, tuple(find(c) for c in ch)) for op, ch in cls.nodes})
            cls.nodes = nodes
            cls.parents = []
            for n in nodes:
                hashcons[n] = cid
        classes = self.classes
        for cid, cls in classes.items():
            for n in cls.nodes:
                for ch in dict.fromkeys(n[1]):
                    classes[ch].parents.append((n, cid))
        self.hashcons = hashcons
        self._merged = False
        self._op_index = None

    # -- queries -----------------------------------------------------------

    def num_enodes(self) -> int:
        return self.enode_count

    def num_canonical_enodes(self) -> int:
        if self.pending:
            raise EGraphError("e-graph needs rebuild")
        return sum(len(c.nodes) for c in self.classes.values())

    def num_classes(self) -> int:
        return len(self.classes)

    def classes_with_op(self, op: str) -> list[int]:
        if self._op_index is None:
            index: dict[str, list[int]] = {}
            for cid, cls in self.classes.items():
                for o in dict.fromkeys(n[0] for n in cls.nodes):
                    index.setdefault(o, []).append(cid)
            for ids in index.values():
                ids.sort()
            self._op_index = index
        return self._op_index.get(op, [])

    def equiv(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)

    def copy(self) -> EGraph:
        g = EGraph.__new__(EGraph)
        g.language = self.language
        g.uf = self.uf.copy()
        g.hashcons = self.hashcons.copy()
        g.classes = {
            cid: EClass(cid, cls.nodes.copy(), cls.parents.copy())
            for cid, cls in self.classes.items()
        }
        g.enode_count = self.enode_count
        g.pending = self.pending.copy()
        g.union_log = self.union_log.copy()
        g._merged = self._merged
        g._op_index = None
        return g

    def dump(self) -> dict:
        """JSON-ready structure of the canonical graph (rebuild first)."""
        return {
            "classes": [
                {
                    "id": cid,
                    "nodes": [{"op": op, "children": list(ch)} for op, ch in cls.nodes],
                }
                for cid, cls in sorted(self.classes.items())
            ],
            "unions": [list(u) for u in self.union_log],
            "enode_count": self.enode_count,
        }

    def dumps(self) -> str:
        return json.dumps(self.dump(), sort_keys=True)


def apply_rule(g: EGraph, rule: RewriteRule) -> ApplyReport:
    """Apply every match of ``rule`` at once, then rebuild.

    All matches are collected before the graph is touched, so the result does
    not depend on the order matches are applied in.
    """
    if g.pending:
        g.rebuild()
    matches = match_pattern(g, rule.lhs)
    if rule.condition is not None:
        matches = [(c, s) for c, s in matches if rule.condition(g, s)]
    before = g.enode_count
    unions = 0
    for cid, subst in matches:
        new = instantiate(g, rule.rhs, subst)
        unions += g.union(cid, new)[1]
    g.rebuild()
    return ApplyReport(len(matches), g.enode_count - before, unions)
