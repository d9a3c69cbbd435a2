"""Tree search over reasoning states (Tree-of-Thoughts style BFS / DFS).

The proposer maps a state to its children and the evaluator maps a state to
a value; both are usually thin wrappers around a backend. Breadth ``b`` caps
how many of a node's children survive, chosen by value (ties keep proposal
order), so with ``b`` at least the branching factor nothing is pruned and the
search is exhaustive up to ``depth``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Literal, Protocol, Sequence

from coala.errors import BudgetExhausted, NoSolution

Strategy = Literal["BFS", "DFS"]


class SearchProblem(Protocol):
    root: Any

    def is_terminal(self, state: Any) -> bool: ...

    def is_success(self, state: Any) -> bool: ...


@dataclass
class SearchResult:
    path: list
    value: float | None
    expanded: int
    frontiers: list[list] = field(default_factory=list)


class _Counter:
    def __init__(self, budget: int):
        self.budget = budget
        self.used = 0

    def spend(self) -> None:
        if self.used >= self.budget:
            raise BudgetExhausted(f"expansion budget of {self.budget} used up")
        self.used += 1


def _ranked(children: Sequence, evaluator: Callable[[Any], float], breadth: int) -> list[tuple[Any, float]]:
    valued = [(c, float(evaluator(c))) for c in children]
    order = sorted(range(len(valued)), key=lambda i: (-valued[i][1], i))
    return [valued[i] for i in order[:breadth]]


def tree_search(
    problem: SearchProblem,
    proposer: Callable[[Any], Sequence],
    evaluator: Callable[[Any], float],
    strategy: Strategy = "BFS",
    breadth: int = 1,
    depth: int = 1,
    budget: int = 10_000,
) -> SearchResult:
    """Return the first successful terminal path from the root.

    Raises NoSolution when the (pruned) tree is exhausted and BudgetExhausted
    when the expansion budget runs out first.
    """
    if breadth < 1 or depth < 1:
        raise ValueError("breadth and depth must be >= 1")
    root = problem.root
    if problem.is_terminal(root):
        if problem.is_success(root):
            return SearchResult([root], None, 0, [])
        raise NoSolution("root is a failed terminal state")
    counter = _Counter(budget)
    if strategy == "BFS":
        return _bfs(problem, proposer, evaluator, breadth, depth, counter)
    if strategy == "DFS":
        return _dfs(problem, proposer, evaluator, breadth, depth, counter)
    raise ValueError(f"unknown strategy {strategy!r}")


def _bfs(problem, proposer, evaluator, breadth, depth, counter) -> SearchResult:
    level: list[tuple[Any, list]] = [(problem.root, [problem.root])]
    frontiers: list[list] = []
    for _ in range(depth):
        nxt: list[tuple[Any, list, float]] = []
        for state, path in level:
            counter.spend()
            for child, value in _ranked(proposer(state), evaluator, breadth):
                nxt.append((child, path + [child], value))
        frontiers.append([c for c, _, _ in nxt])
        for child, path, value in sorted(nxt, key=lambda t: -t[2]):
            if problem.is_terminal(child) and problem.is_success(child):
                return SearchResult(path, value, counter.used, frontiers)
        level = [(c, p) for c, p, _ in nxt if not problem.is_terminal(c)]
        if not level:
            break
    raise NoSolution(f"no successful terminal state within depth {depth}")


def _dfs(problem, proposer, evaluator, breadth, depth, counter) -> SearchResult:
    frontiers: list[list] = []

    def visit(state, path, d, value):
        if problem.is_terminal(state):
            return (path, value) if problem.is_success(state) else None
        if d == depth:
            return None
        counter.spend()
        ranked = _ranked(proposer(state), evaluator, breadth)
        frontiers.append([c for c, _ in ranked])
        for child, v in ranked:
            found = visit(child, path + [child], d + 1, v)
            if found is not None:
                return found
        return None

    found = visit(problem.root, [problem.root], 0, None)
    if found is None:
        raise NoSolution(f"no successful terminal state within depth {depth}")
    return SearchResult(found[0], found[1], counter.used, frontiers)


@dataclass
class ScriptedTree:
    """Explicit tree for tests and demos: children, values and outcomes by node."""

    root: Hashable
    children: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    terminal: set = field(default_factory=set)
    success: set = field(default_factory=set)

    def is_terminal(self, state) -> bool:
        return state in self.terminal

    def is_success(self, state) -> bool:
        return state in self.success

    def propose(self, state) -> list:
        return list(self.children.get(state, []))

    def evaluate(self, state) -> float:
        return float(self.values.get(state, 0.0))
