"""Episodic e-graph construction environment.

A state is identified by the action sequence that built it: replaying the same
actions on the same configuration rebuilds an identical e-graph.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

from .egraph import EGraph, apply_rule
from .extract import UNIT_COST, CostFunction, ExtractionResult, extract_greedy
from .lang import Term, validate_term
from .rewrite import RuleSet

DEFAULT_NODE_LIMIT = 10_000


class EnvError(RuntimeError):
    pass


def clamped_improvement(init_cost: float, current_cost: float) -> float:
    return max(init_cost - current_cost, 0.0)


@dataclass(frozen=True)
class EnvConfig:
    initial_term: Term
    rules: RuleSet
    node_limit: int = DEFAULT_NODE_LIMIT
    cost_fn: CostFunction = UNIT_COST
    max_episode_len: int = 500
    stop_at_optimum: bool = True
    reward_fn: Callable[[float, float], float] = field(default=clamped_improvement, compare=False)

    def __post_init__(self):
        if self.node_limit < 1:
            raise ValueError("node_limit must be positive")
        if self.max_episode_len < 1:
            raise ValueError("max_episode_len must be positive")
        if len(self.rules) == 0:
            raise ValueError("empty rule set")
        if self.rules.language is not None:
            validate_term(self.initial_term, self.rules.language)

    @property
    def num_actions(self) -> int:
        return len(self.rules)


@dataclass(frozen=True)
class StepResult:
    reward: float
    done: bool
    nodes_added: int
    saturated: bool
    enode_count: int

    @property
    def info(self) -> dict:
        return {
            "nodes_added": self.nodes_added,
            "saturated": self.saturated,
            "enode_count": self.enode_count,
        }

    def record(self, action: int) -> dict:
        """One episode-log line."""
        return {"action": action, **self.info, "reward": self.reward, "done": self.done}


def _cost_floor(config: EnvConfig) -> float | None:
    # no term is cheaper than the cheapest leaf, so reaching one ends the episode
    lang = config.rules.language
    if not config.stop_at_optimum or lang is None:
        return None
    return min(config.cost_fn(s.name) for s in lang.symbols if s.arity == 0)


class EnvState:
    def __init__(self, config: EnvConfig):
        self.config = config
        self.egraph = EGraph(config.rules.language)
        self.root = self.egraph.add_term(config.initial_term)
        self.init_cost = config.cost_fn.term_cost(config.initial_term)
        self.history: list[int] = []
        # actions that changed nothing since the graph last changed
        self.saturated_actions: set[int] = set()
        self.stop_reason: str | None = None
        self._extraction: ExtractionResult | None = None
        self._cost_floor = _cost_floor(config)
        self._update_done()

    @property
    def done(self) -> bool:
        return self.stop_reason is not None

    def num_enodes(self) -> int:
        return self.egraph.num_enodes()

    def _update_done(self):
        cfg = self.config
        if self.egraph.num_enodes() >= cfg.node_limit:
            self.stop_reason = "node_limit"
        elif len(self.saturated_actions) == cfg.num_actions:
            self.stop_reason = "saturated"
        elif self._cost_floor is not None and self._root_at_floor():
            self.stop_reason = "optimal"
        elif len(self.history) >= cfg.max_episode_len:
            self.stop_reason = "episode_cap"

    def _root_at_floor(self) -> bool:
        cf, floor = self.config.cost_fn, self._cost_floor
        for op, children in self.egraph.classes[self.egraph.find(self.root)].nodes:
            if not children and cf(op) <= floor:
                return True
        return False

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EnvError("episode is over")
        if not isinstance(action, int) or not 0 <= action < self.config.num_actions:
            raise EnvError(f"invalid action {action!r}")
        report = apply_rule(self.egraph, self.config.rules[action])
        self.history.append(action)
        if report.saturated:
            self.saturated_actions.add(action)
        else:
            self.saturated_actions.clear()
            self._extraction = None
        self._update_done()
        reward = self.terminal_reward() if self.done else 0.0
        return StepResult(
            reward, self.done, report.nodes_added, report.saturated, self.egraph.num_enodes()
        )

    def extract(self) -> ExtractionResult:
        if self._extraction is None:
            self._extraction = extract_greedy(self.egraph, self.root, self.config.cost_fn)
        return self._extraction

    def terminal_reward(self) -> float:
        return self.config.reward_fn(self.init_cost, self.extract().cost)

    def available_actions(self) -> list[int]:
        return [a for a in range(self.config.num_actions) if a not in self.saturated_actions]

    def clone(self) -> EnvState:
        s = EnvState.__new__(EnvState)
        s.config = self.config
        s.egraph = self.egraph.copy()
        s.root = self.root
        s.init_cost = self.init_cost
        s.history = self.history.copy()
        s.saturated_actions = self.saturated_actions.copy()
        s.stop_reason = self.stop_reason
        s._cost_floor = self._cost_floor
        s._extraction = self._extraction
        return s


def reset(config: EnvConfig) -> EnvState:
    return EnvState(config)


def step(state: EnvState, action: int) -> StepResult:
    return state.step(action)


def terminal_reward(state: EnvState) -> float:
    return state.terminal_reward()


def replay(config: EnvConfig, seq: Sequence[int], start: EnvState | None = None) -> EnvState:
    """Rebuild the state reached by ``seq``; stops early once the episode ends.

    ``start``, if given, must be a state whose history is a prefix of ``seq``;
    it is cloned, not modified.
    """
    if start is None:
        state = reset(config)
    else:
        n = len(start.history)
        if list(seq[:n]) != start.history:
            raise EnvError("start state is not a prefix of the sequence")
        state = start.clone()
        seq = seq[n:]
    for a in seq:
        if state.done:
            break
        state.step(int(a))
    return state
