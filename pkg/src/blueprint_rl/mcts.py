"""Monte Carlo tree search over atomic reasoning steps.

Each tree node is one step: add an object to the blueprint, write the
analysis, or give the answer. Valid paths have the shape
``AddObject* Analyze Answer``. Leaves are scored by answer correctness and
the score is backed up along the path. After the search, correct root-to-leaf
paths are linearized into traces, and failed leaves later repaired in a
sibling subtree yield backtracking traces.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

from .rewards import reward_accuracy
from .trace import Blueprint, BlueprintObject, ReasoningTrace, render_trace

logger = logging.getLogger(__name__)

BACKTRACK_CONNECTIVE = "Wait — re-examining the blueprint:"


@dataclass(frozen=True)
class AddObject:
    obj: BlueprintObject


@dataclass(frozen=True)
class Analyze:
    text: str


@dataclass(frozen=True)
class Answer:
    text: str


AtomicStep = Union[AddObject, Analyze, Answer]


@dataclass(frozen=True)
class Candidate:
    step: AtomicStep
    prior: Optional[float] = None


@dataclass(frozen=True)
class Task:
    id: str
    question: str
    gold_answer: str
    choices: Optional[tuple[str, ...]] = None
    image_ref: str = ""


@dataclass(frozen=True)
class ProposalContext:
    task: Task
    steps: tuple[AtomicStep, ...]
    # "analyze" or "answer" when the engine only accepts that step kind next
    forced: Optional[str] = None
    n_candidates: int = 1

    @property
    def objects(self) -> list[BlueprintObject]:
        return [s.obj for s in self.steps if isinstance(s, AddObject)]


class StepProposer(Protocol):
    def __call__(self, context: ProposalContext) -> Sequence[Union[AtomicStep, Candidate]]:
        ...


class ProposerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    rollout_budget: int = 24
    max_objects: int = 8
    branching: int = 4
    uct_c: float = math.sqrt(2)
    seed: int = 0
    # "greedy" simulates with the first candidate; "sample" draws by prior with a seeded RNG
    rollout_policy: str = "greedy"

    def __post_init__(self) -> None:
        if self.rollout_budget < 0:
            raise ValueError("rollout_budget must be >= 0")
        if self.branching < 1:
            raise ValueError("branching must be >= 1")
        if self.max_objects < 0:
            raise ValueError("max_objects must be >= 0")
        if self.rollout_policy not in ("greedy", "sample"):
            raise ValueError(f"unknown rollout_policy {self.rollout_policy!r}")


@dataclass(eq=False)
class SearchNode:
    step: Optional[AtomicStep] = None
    parent: Optional["SearchNode"] = None
    children: list["SearchNode"] = field(default_factory=list)
    visits: int = 0
    value_sum: float = 0.0
    # iterations that ended at this node (non-zero only for leaves)
    own_visits: int = 0
    # memoized, not yet expanded proposals; None until the proposer is queried
    pending: Optional[list[Candidate]] = None
    leaf_value: Optional[float] = None
    completed_at: Optional[int] = None

    @property
    def is_terminal(self) -> bool:
        return isinstance(self.step, Answer)

    def path(self) -> list[AtomicStep]:
        steps = []
        node: Optional[SearchNode] = self
        while node is not None and node.step is not None:
            steps.append(node.step)
            node = node.parent
        return steps[::-1]

    def n_objects(self) -> int:
        return sum(isinstance(s, AddObject) for s in self.path())

    def add_child(self, candidate: Candidate) -> "SearchNode":
        child = SearchNode(step=candidate.step, parent=self)
        self.children.append(child)
        return child

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))


@dataclass(frozen=True)
class SynthesizedTrace:
    trace: ReasoningTrace
    correct: bool
    backtracking: bool
    rollout_index: int

    @property
    def text(self) -> str:
        return render_trace(self.trace)


def uct_select(node: SearchNode, c: float) -> SearchNode:
    """Pick the next node to descend into.

    A pending (unexpanded) candidate always wins and is materialized as a new
    child. Otherwise the child maximizing ``W/N + c*sqrt(ln(N_parent)/N)`` is
    returned, ties going to the lowest index; unvisited children score +inf.
    """
    if node.pending:
        return node.add_child(node.pending.pop(0))
    if not node.children:
        raise ValueError("node has neither children nor pending candidates")
    best, best_score = node.children[0], -math.inf
    log_parent = math.log(node.visits) if node.visits > 0 else 0.0
    for child in node.children:
        if child.visits == 0:
            score = math.inf
        else:
            score = child.value_sum / child.visits + c * math.sqrt(log_parent / child.visits)
        if score > best_score:
            best, best_score = child, score
    return best


def _allowed(steps: Sequence[AtomicStep], max_objects: int) -> tuple[type, ...]:
    last = steps[-1] if steps else None
    if isinstance(last, Analyze):
        return (Answer,)
    if isinstance(last, Answer):
        return ()
    if sum(isinstance(s, AddObject) for s in steps) >= max_objects:
        return (Analyze,)
    return (AddObject, Analyze)


class TraceSearch:
    """One search tree for one task; not shared across threads."""

    def __init__(self, task: Task, proposer: StepProposer, cfg: SearchConfig = SearchConfig()):
        self.task = task
        self.proposer = proposer
        self.cfg = cfg
        self.root = SearchNode()
        self.iterations_run = 0
        self._rng = random.Random(cfg.seed)

    def _candidates(self, node: SearchNode) -> None:
        if node.pending is not None:
            return
        steps = tuple(node.path())
        allowed = _allowed(steps, self.cfg.max_objects)
        forced = None
        if allowed == (Answer,):
            forced = "answer"
        elif allowed == (Analyze,):
            forced = "analyze"
        ctx = ProposalContext(self.task, steps, forced, self.cfg.branching)
        try:
            raw = list(self.proposer(ctx))
        except Exception as exc:
            raise ProposerError(f"proposer failed at depth {len(steps)}: {exc}") from exc
        seen = []
        for item in raw:
            cand = item if isinstance(item, Candidate) else Candidate(item)
            if isinstance(cand.step, allowed) and all(cand.step != s.step for s in seen):
                seen.append(cand)
        if any(c.prior is not None for c in seen):
            seen.sort(key=lambda c: -(c.prior if c.prior is not None else 0.0))
        seen = seen[: self.cfg.branching]
        if not seen:
            # forced fallback guarantees every path terminates
            fallback: AtomicStep = Answer("") if Answer in allowed and Analyze not in allowed else Analyze("")
            logger.warning("no valid proposal at depth %d; inserting %s", len(steps), type(fallback).__name__)
            seen = [Candidate(fallback)]
        node.pending = seen

    def _simulate_choice(self, node: SearchNode) -> SearchNode:
        if self.cfg.rollout_policy == "sample" and node.pending and len(node.pending) > 1:
            weights = [c.prior if c.prior is not None else 1.0 for c in node.pending]
            if sum(weights) <= 0:
                weights = [1.0] * len(weights)
            idx = self._rng.choices(range(len(node.pending)), weights=weights)[0]
            return node.add_child(node.pending.pop(idx))
        return uct_select(node, self.cfg.uct_c)

    def _score(self, leaf: SearchNode) -> float:
        assert isinstance(leaf.step, Answer)
        return reward_accuracy(leaf.step.text, self.task.gold_answer, self.task.choices)

    def iterate(self) -> Optional[SearchNode]:
        """One select/expand/simulate/backpropagate pass; returns the leaf or None."""
        index = self.iterations_run
        self.iterations_run += 1
        node = self.root
        expanded = False
        try:
            while not node.is_terminal:
                self._candidates(node)
                if expanded:
                    node = self._simulate_choice(node)
                else:
                    had_pending = bool(node.pending)
                    node = uct_select(node, self.cfg.uct_c)
                    expanded = had_pending
        except ProposerError as exc:
            logger.warning("iteration %d skipped: %s", index, exc)
            return None
        if node.leaf_value is None:
            node.leaf_value = self._score(node)
            node.completed_at = index
        value = node.leaf_value
        node.own_visits += 1
        walk: Optional[SearchNode] = node
        while walk is not None:
            walk.visits += 1
            walk.value_sum += value
            walk = walk.parent
        return node

    def run(self) -> "TraceSearch":
        for _ in range(self.cfg.rollout_budget):
            self.iterate()
        return self

    def leaves(self) -> list[SearchNode]:
        done = [n for n in self.root.iter_nodes() if n.completed_at is not None]
        return sorted(done, key=lambda n: n.completed_at)


def linearize(path: Sequence[AtomicStep]) -> ReasoningTrace:
    objects = [s.obj for s in path if isinstance(s, AddObject)]
    analyses = [s.text for s in path if isinstance(s, Analyze)]
    answers = [s.text for s in path if isinstance(s, Answer)]
    if not answers:
        raise ValueError("path does not end in an Answer step")
    if not analyses:
        logger.warning("path has no Analyze step; analysis left empty")
    trace = ReasoningTrace(Blueprint(tuple(objects)), analyses[-1] if analyses else "", answers[-1])
    return ReasoningTrace(trace.blueprint, trace.analysis, trace.answer, raw=render_trace(trace))


def _backtracking_trace(failed: SearchNode, fixed: SearchNode) -> ReasoningTrace:
    failed_path, fixed_path = failed.path(), fixed.path()
    objects = [s.obj for s in failed_path if isinstance(s, AddObject)]
    delta = [s.obj for s in fixed_path if isinstance(s, AddObject) and s.obj not in objects]
    failed_analysis = next((s.text for s in failed_path if isinstance(s, Analyze)), "")
    fixed_analysis = next((s.text for s in fixed_path if isinstance(s, Analyze)), "")
    parts = [failed_analysis.strip(), BACKTRACK_CONNECTIVE]
    if delta:
        parts.append("Adding " + ", ".join(o.name for o in delta) + " to the blueprint.")
    parts.append(fixed_analysis.strip())
    analysis = " ".join(p for p in parts[1:] if p)
    if parts[0]:
        analysis = parts[0] + "\n" + analysis
    answer = fixed_path[-1].text  # type: ignore[union-attr]
    trace = ReasoningTrace(Blueprint(tuple(objects + delta)), analysis, answer)
    return ReasoningTrace(trace.blueprint, trace.analysis, trace.answer, raw=render_trace(trace))


def _correct_leaves(node: SearchNode) -> list[SearchNode]:
    return [n for n in node.iter_nodes() if n.completed_at is not None and n.leaf_value]


def harvest(search: TraceSearch) -> list[SynthesizedTrace]:
    """Correct traces plus backtracking traces, deduplicated by rendered text."""
    out: list[SynthesizedTrace] = []
    for leaf in search.leaves():
        if not leaf.leaf_value:
            continue
        try:
            out.append(SynthesizedTrace(linearize(leaf.path()), True, False, leaf.completed_at))
        except ValueError as exc:
            logger.warning("dropping unrenderable trace: %s", exc)

    for leaf in search.leaves():
        if leaf.leaf_value:
            continue
        child, ancestor = leaf, leaf.parent
        repair = None
        while ancestor is not None and repair is None:
            later = [
                n
                for sibling in ancestor.children
                if sibling is not child
                for n in _correct_leaves(sibling)
                if n.completed_at > leaf.completed_at
            ]
            if later:
                repair = min(later, key=lambda n: n.completed_at)
            child, ancestor = ancestor, ancestor.parent
        if repair is None:
            continue
        try:
            out.append(SynthesizedTrace(_backtracking_trace(leaf, repair), True, True, repair.completed_at))
        except ValueError as exc:
            logger.warning("dropping unrenderable backtracking trace: %s", exc)

    out.sort(key=lambda t: (t.rollout_index, t.backtracking))
    unique: dict[str, SynthesizedTrace] = {}
    for item in out:
        unique.setdefault(item.trace.raw, item)
    return list(unique.values())


def synthesize(task: Task, proposer: StepProposer, cfg: SearchConfig = SearchConfig()) -> list[SynthesizedTrace]:
    if cfg.rollout_budget == 0:
        return []
    return harvest(TraceSearch(task, proposer, cfg).run())
