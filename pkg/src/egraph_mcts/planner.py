"""Parallel MCTS over rewrite-rule action sequences.

One maintainer owns the search tree and only does selection and backup.
Expansion and simulation run as tasks on worker pools; a task names its start
state by action sequence and the worker replays it. Selection uses WU-UCT
statistics: every node counts the simulations currently in flight through it
(``O``) alongside completed visits (``N``), so concurrent selections spread out
instead of piling onto the same leaf.

Results are consumed in dispatch order, which keeps the tree, and therefore
the chosen actions, a pure function of the configuration and seed no matter
how many workers run or how fast they are.
"""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
import time
from collections import Counter, deque
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from multiprocessing.connection import wait as wait_connections

from .env import EnvConfig, EnvState, replay, reset
from .extract import ExtractionResult
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)


class AllActionsPruned(RuntimeError):
    """Every root action left the e-graph unchanged: the episode is saturated."""


@dataclass(frozen=True)
class PlannerConfig:
    budget: int = 512
    sim_workers: int = 22
    exp_workers: int = 1
    gamma: float = 0.99
    c_explore: float = math.sqrt(2)
    max_sim_step: int = 20
    straggler_timeout: float = 5.0
    seed: int = 0
    # "process": worker processes; "inline": tasks run in the maintainer
    # process, with the same in-flight limits and result ordering
    backend: str = "process"

    def __post_init__(self):
        if self.budget < 1 or self.sim_workers < 1 or self.exp_workers < 1:
            raise ValueError("budget and worker counts must be >= 1")
        if self.max_sim_step < 1:
            raise ValueError("max_sim_step must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.backend not in ("process", "inline"):
            raise ValueError(f"unknown backend {self.backend!r}")

    @classmethod
    def from_json(cls, data: dict | str) -> PlannerConfig:
        if isinstance(data, str):
            data = json.loads(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown planner config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class SearchNode:
    key: tuple[int, ...]
    untried: set[int]
    N: int = 0
    O: int = 0
    W: float = 0.0
    children: dict[int, SearchNode] = field(default_factory=dict)
    pruned: set[int] = field(default_factory=set)
    terminal: bool = False
    terminal_value: float = 0.0

    @property
    def Q(self) -> float | None:
        return self.W / self.N if self.N > 0 else None

    def iter_nodes(self):
        stack = [self]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(n.children.values())


@dataclass(frozen=True)
class TaskDescriptor:
    kind: str  # "expand" | "simulate"
    sequence: tuple[int, ...]  # relative to the episode prefix
    is_root_child: bool
    task_id: int
    prefix: tuple[int, ...] = ()
    seed: int = 0
    gamma: float = 0.99
    max_sim_step: int = 20


@dataclass(frozen=True)
class TaskResult:
    task_id: int
    kind: str
    discounted_return: float = 0.0
    steps_taken: int = 0
    saturated: bool = False
    terminal_reached: bool = False
    nodes_added: int = 0


# -- workers -----------------------------------------------------------------

class Worker:
    """Executes tasks by replaying action sequences on a private e-graph.

    The state at the current episode prefix is cached; consecutive planning
    stages extend the prefix by one action, so the cache is advanced instead
    of rebuilt.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self._base: EnvState | None = None

    def _base_state(self, prefix: tuple[int, ...]) -> EnvState:
        base = self._base
        if base is None or tuple(base.history) != prefix:
            if base is not None and prefix[: len(base.history)] == tuple(base.history):
                base = replay(self.config, prefix, start=base)
            else:
                base = replay(self.config, prefix)
            self._base = base
        return base

    def run(self, task: TaskDescriptor) -> TaskResult:
        base = self._base_state(task.prefix)
        if task.kind == "expand":
            *parent, action = task.sequence
            state = replay(self.config, task.prefix + tuple(parent), start=base)
            if state.done:
                raise RuntimeError(f"expansion from a terminal state {task.sequence}")
            res = state.step(action)
            return TaskResult(
                task.task_id, "expand",
                discounted_return=res.reward,
                steps_taken=1,
                saturated=res.saturated,
                terminal_reached=res.done,
                nodes_added=res.nodes_added,
            )
        if task.kind == "simulate":
            state = replay(self.config, task.prefix + task.sequence, start=base)
            ret, steps = rollout(state, task.seed, task.gamma, task.max_sim_step)
            return TaskResult(
                task.task_id, "simulate",
                discounted_return=ret,
                steps_taken=steps,
                terminal_reached=state.done,
            )
        raise ValueError(f"unknown task kind {task.kind!r}")


def rollout(state: EnvState, seed: int, gamma: float, max_steps: int) -> tuple[float, int]:
    """Random rollout from ``state`` (mutated in place).

    Actions are drawn uniformly from those not known to be saturated at the
    current state. A rollout cut off at ``max_steps`` is scored by extracting
    from the e-graph at the cut-off point.
    """
    rng = make_rng(seed)
    steps = 0
    while not state.done and steps < max_steps:
        state.step(rng.choice(state.available_actions()))
        steps += 1
    return gamma**steps * state.terminal_reward(), steps


class InlinePool:
    """Runs each task at submission; results queue up in submission order."""

    def __init__(self, config: EnvConfig, cfg: PlannerConfig):
        self.worker = Worker(config)
        self.results: deque[TaskResult] = deque()

    def submit(self, task: TaskDescriptor):
        self.results.append(self.worker.run(task))

    def get(self, timeout: float | None) -> TaskResult | None:
        return self.results.popleft() if self.results else None

    def cancel(self, task_ids) -> list[int]:
        ids = set(task_ids)
        self.results = deque(r for r in self.results if r.task_id not in ids)
        return sorted(ids)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _worker_main(config: EnvConfig, conn):
    worker = Worker(config)
    while True:
        task = conn.recv()
        if task is None:
            break
        try:
            result = worker.run(task)
        except Exception as e:  # surfaced to the maintainer as a fault
            result = ("error", task.task_id, repr(e))
        conn.send(result)


class _Slot:
    def __init__(self, ctx, config, kind, index):
        self.ctx, self.config, self.kind, self.index = ctx, config, kind, index
        self.task: TaskDescriptor | None = None
        self.restarts = 0
        self._start()

    def _start(self):
        self.conn, child = self.ctx.Pipe()
        self.proc = self.ctx.Process(
            target=_worker_main, args=(self.config, child), daemon=True,
            name=f"{self.kind}-worker-{self.index}",
        )
        self.proc.start()
        child.close()

    def respawn(self):
        self.proc.terminate()
        self.proc.join()
        self.conn.close()
        self.task = None
        self.restarts += 1
        self._start()

    def close(self):
        try:
            self.conn.send(None)
        except (BrokenPipeError, OSError):
            pass
        self.proc.join(timeout=1)
        if self.proc.is_alive():
            self.proc.terminate()
            self.proc.join()
        self.conn.close()


class WorkerFault(RuntimeError):
    pass


class ProcessPool:
    """Expansion and simulation worker processes fed from two backlogs."""

    def __init__(self, config: EnvConfig, cfg: PlannerConfig):
        ctx = mp.get_context("fork")
        self.slots = {
            "expand": [_Slot(ctx, config, "expand", i) for i in range(cfg.exp_workers)],
            "simulate": [_Slot(ctx, config, "simulate", i) for i in range(cfg.sim_workers)],
        }
        self.backlog: dict[str, deque[TaskDescriptor]] = {"expand": deque(), "simulate": deque()}

    def _assign(self):
        for kind, slots in self.slots.items():
            backlog = self.backlog[kind]
            for slot in slots:
                if not backlog:
                    break
                if slot.task is None:
                    slot.task = backlog.popleft()
                    slot.conn.send(slot.task)

    def submit(self, task: TaskDescriptor):
        self.backlog[task.kind].append(task)
        self._assign()

    def _busy(self):
        return {s.conn: s for slots in self.slots.values() for s in slots if s.task is not None}

    def get(self, timeout: float | None) -> TaskResult | None:
        busy = self._busy()
        if not busy:
            return None
        ready = wait_connections(list(busy), timeout)
        if not ready:
            return None
        slot = busy[ready[0]]
        try:
            result = slot.conn.recv()
        except EOFError:
            task = slot.task
            slot.respawn()
            raise WorkerFault(f"worker died running task {task.task_id}") from None
        slot.task = None
        self._assign()
        if isinstance(result, tuple):
            raise WorkerFault(f"task {result[1]} failed: {result[2]}")
        return result

    def cancel(self, task_ids) -> list[int]:
        ids = set(task_ids)
        cancelled = []
        for kind, backlog in self.backlog.items():
            keep = deque()
            for t in backlog:
                (cancelled.append(t.task_id) if t.task_id in ids else keep.append(t))
            self.backlog[kind] = keep
        for slots in self.slots.values():
            for slot in slots:
                if slot.task is not None and slot.task.task_id in ids:
                    cancelled.append(slot.task.task_id)
                    log.info("respawning straggler %s (task %d)", slot.proc.name, slot.task.task_id)
                    slot.respawn()
        self._assign()
        return sorted(cancelled)

    @property
    def restarts(self) -> int:
        return sum(s.restarts for slots in self.slots.values() for s in slots)

    def close(self):
        for slots in self.slots.values():
            for slot in slots:
                slot.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_pool(config: EnvConfig, cfg: PlannerConfig):
    if cfg.backend == "inline":
        return InlinePool(config, cfg)
    return ProcessPool(config, cfg)


# -- tree operations ---------------------------------------------------------

def _q_hat(node: SearchNode, parent_q: float) -> float:
    return node.W / node.N if node.N > 0 else parent_q


def select(root: SearchNode, cfg: PlannerConfig) -> list[SearchNode] | None:
    """Descend by O-augmented UCT to a node with untried actions or a terminal node.

    Increments ``O`` along the returned path. Returns None, touching nothing,
    when the descent reaches a node whose every action is still being expanded.
    """
    path = [root]
    node = root
    q = _q_hat(root, 0.0)
    while not node.terminal and not node.untried:
        if not node.children:
            return None
        total = node.N + node.O
        log_total = math.log(total) if total > 0 else 0.0
        best, best_score = None, -math.inf
        for action in sorted(node.children):
            child = node.children[action]
            visits = child.N + child.O
            if visits == 0:
                score = math.inf
            else:
                score = _q_hat(child, q) + cfg.c_explore * math.sqrt(log_total / visits)
            if score > best_score:
                best, best_score = child, score
        q = _q_hat(best, q)
        node = best
        path.append(node)
    for n in path:
        n.O += 1
    return path


def backup(path: Sequence[SearchNode], value: float, cfg: PlannerConfig):
    """Fold a completed simulation into every node on ``path``.

    ``value`` is the return seen from the last node; each ancestor gets it
    discounted by its distance from that node.
    """
    last = len(path) - 1
    for i, node in enumerate(path):
        node.O -= 1
        node.N += 1
        node.W += cfg.gamma ** (last - i) * value


def rollback(path: Sequence[SearchNode]):
    for node in path:
        node.O -= 1


def best_root_action(root: SearchNode) -> int:
    """Highest mean value among visited root children; ties go to the lowest ID."""
    visited = [(a, c) for a, c in sorted(root.children.items()) if c.N > 0]
    if not visited:
        if not root.children:
            raise AllActionsPruned("no root action changes the e-graph")
        return min(root.children)
    best_a, best_q = visited[0][0], visited[0][1].Q
    for a, c in visited[1:]:
        if c.Q > best_q:
            best_a, best_q = a, c.Q
    return best_a


@dataclass
class _Flight:
    task: TaskDescriptor
    path: list[SearchNode]
    action: int | None = None


@dataclass
class StageResult:
    stage: int
    action: int
    root: SearchNode
    completed: int
    pruned_expansions: int
    cancelled: list[int]
    wall_time: float

    def trace(self) -> dict:
        return {
            "stage": self.stage,
            "chosen_action": self.action,
            "root_stats": [
                {"action": a, "N": c.N, "Q": c.Q}
                for a, c in sorted(self.root.children.items())
            ],
            "pruned": sorted(self.root.pruned),
            "stage_wall_time": self.wall_time,
        }


class Maintainer:
    """Owns the search tree for one planning stage at a time."""

    def __init__(self, env: EnvConfig, cfg: PlannerConfig, pool=None, check_invariants=False):
        self.env = env
        self.cfg = cfg
        self.pool = pool if pool is not None else make_pool(env, cfg)
        self._owns_pool = pool is None
        self.check_invariants = check_invariants
        self.task_counter = 0

    def close(self):
        if self._owns_pool:
            self.pool.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _dispatch(self, kind, seq, is_root_child, prefix, seed, path, action, flights, order):
        task = TaskDescriptor(
            kind, tuple(seq), is_root_child, self.task_counter, tuple(prefix), seed,
            self.cfg.gamma, self.cfg.max_sim_step,
        )
        self.task_counter += 1
        flights[task.task_id] = _Flight(task, path, action)
        order.append(task.task_id)
        self.pool.submit(task)

    def _check(self, root, flights, completed):
        in_flight = len(flights)
        assert root.O == in_flight, (root.O, in_flight)
        through = Counter()
        for f in flights.values():
            for n in f.path:
                through[id(n)] += 1
        for n in root.iter_nodes():
            assert n.O == through[id(n)], "O must count in-flight paths through the node"
            assert not (set(n.children) & n.pruned)
        assert sum(c.N for c in root.children.values()) == completed == root.N

    def respawn_stragglers(self, flights: dict[int, _Flight], order: deque) -> list[int]:
        """Cancel every outstanding task and roll back its in-flight counts."""
        ids = list(flights)
        if not ids:
            return []
        self.pool.cancel(ids)
        for tid in ids:
            rollback(flights.pop(tid).path)
        order.clear()
        return sorted(ids)

    def plan(self, prefix: Sequence[int] = ()) -> StageResult:
        cfg = self.cfg
        prefix = tuple(prefix)
        stage = len(prefix)
        t0 = time.perf_counter()
        rng = make_rng(cfg.seed, stage)
        num_actions = self.env.num_actions
        root = SearchNode((), set(range(num_actions)))
        flights: dict[int, _Flight] = {}
        order: deque[int] = deque()
        arrived: dict[int, TaskResult] = {}
        completed = pruned = sim_index = 0
        cancelled: list[int] = []
        deadline = None

        while True:
            # selection and dispatch, up to one in-flight simulation per worker
            while completed + len(flights) < cfg.budget and len(flights) < cfg.sim_workers:
                path = select(root, cfg)
                if path is None:
                    break
                leaf = path[-1]
                if leaf.terminal:
                    backup(path, leaf.terminal_value, cfg)
                    completed += 1
                    continue
                action = rng.choice(sorted(leaf.untried))
                leaf.untried.discard(action)
                self._dispatch(
                    "expand", leaf.key + (action,), leaf is root, prefix, 0, path, action,
                    flights, order,
                )
            if self.check_invariants:
                self._check(root, flights, completed)
            if not flights:
                break
            if deadline is None and completed + len(flights) >= cfg.budget:
                deadline = time.monotonic() + cfg.straggler_timeout

            head = order[0]
            while head not in arrived:
                timeout = None if deadline is None else max(deadline - time.monotonic(), 0.0)
                res = self.pool.get(timeout)
                if res is None:
                    break
                if res.task_id in flights:
                    arrived[res.task_id] = res
            if head not in arrived:
                cancelled += self.respawn_stragglers(flights, order)
                arrived.clear()
                break

            order.popleft()
            res = arrived.pop(head)
            flight = flights.pop(head)
            if res.kind == "expand":
                leaf = flight.path[-1]
                if flight.task.is_root_child and res.saturated:
                    root.pruned.add(flight.action)
                    rollback(flight.path)
                    pruned += 1
                    continue
                child = SearchNode(
                    flight.task.sequence, set(range(num_actions)),
                    terminal=res.terminal_reached,
                    terminal_value=res.discounted_return if res.terminal_reached else 0.0,
                )
                if child.terminal:
                    child.untried = set()
                leaf.children[flight.action] = child
                child.O += 1
                path = flight.path + [child]
                if child.terminal:
                    backup(path, child.terminal_value, cfg)
                    completed += 1
                else:
                    seed = derive_seed(cfg.seed, stage, sim_index)
                    sim_index += 1
                    self._dispatch(
                        "simulate", child.key, False, prefix, seed, path, None, flights, order,
                    )
            else:
                backup(flight.path, res.discounted_return, cfg)
                completed += 1

        if self.check_invariants:
            self._check(root, flights, completed)
        action = best_root_action(root)
        return StageResult(
            stage, action, root, completed, pruned, cancelled, time.perf_counter() - t0
        )


def plan(
    episode_prefix: Sequence[int], env: EnvConfig, cfg: PlannerConfig, pool=None
) -> int:
    """Best next action after ``episode_prefix``; raises AllActionsPruned at saturation."""
    with Maintainer(env, cfg, pool) as m:
        return m.plan(episode_prefix).action


@dataclass
class EpisodeReport:
    final_sequence: list[int]
    extraction: ExtractionResult
    rule_counts: dict[int, int]
    stop_reason: str
    enode_count: int
    init_cost: float
    wall_time: float
    per_stage_times: list[float]
    stages: list[dict] = field(default_factory=list)


def run_episode(
    env: EnvConfig, cfg: PlannerConfig, pool=None, check_invariants=False
) -> EpisodeReport:
    """Plan, act, discard the tree, repeat until the episode ends."""
    t0 = time.perf_counter()
    state = reset(env)
    counts: Counter[int] = Counter()
    times: list[float] = []
    stages: list[dict] = []
    with Maintainer(env, cfg, pool, check_invariants) as m:
        while not state.done:
            try:
                result = m.plan(state.history)
            except AllActionsPruned:
                state.stop_reason = "saturated"
                break
            times.append(result.wall_time)
            stages.append(result.trace())
            log.debug("stage %d: action %d", result.stage, result.action)
            state.step(result.action)
            counts[result.action] += 1
    return EpisodeReport(
        final_sequence=list(state.history),
        extraction=state.extract(),
        rule_counts=dict(sorted(counts.items())),
        stop_reason=state.stop_reason,
        enode_count=state.num_enodes(),
        init_cost=state.init_cost,
        wall_time=time.perf_counter() - t0,
        per_stage_times=times,
        stages=stages,
    )
