"""Exhaustive Pareto front construction for deterministic multi-objective envs."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

from ..envs.base import Environment

SEARCH_BUDGET = 10**6


class SearchBudgetExceeded(RuntimeError):
    pass


def dominates(a: Sequence, b: Sequence) -> bool:
    """Strict Pareto dominance: >= everywhere, > somewhere."""
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))


@dataclass(frozen=True)
class ParetoEntry:
    returns: tuple
    actions: tuple  # witness action sequence

    def to_json(self) -> dict:
        return {"returns": list(self.returns), "actions": list(self.actions)}


@dataclass(frozen=True)
class ParetoFront:
    entries: tuple
    objective_dims: int

    def __post_init__(self):
        if self.objective_dims < 2:
            raise ValueError("a Pareto front needs at least 2 objectives")
        for e in self.entries:
            if len(e.returns) != self.objective_dims:
                raise ValueError("entry dimensionality mismatch")
        for i, a in enumerate(self.entries):
            for j, b in enumerate(self.entries):
                if i != j and dominates(a.returns, b.returns):
                    raise ValueError(f"entry {j} is dominated by entry {i}")

    @classmethod
    def from_candidates(cls, candidates: Sequence, objective_dims: int) -> "ParetoFront":
        """Filter (returns, actions) candidates to the non-dominated set,
        keeping one witness per distinct return vector, sorted lexicographically."""
        best: dict = {}
        for returns, actions in candidates:
            if returns not in best:
                best[returns] = actions
        survivors = []
        for returns, actions in best.items():
            if not any(dominates(other, returns) for other in best if other != returns):
                survivors.append(ParetoEntry(returns=returns, actions=tuple(actions)))
        survivors.sort(key=lambda e: e.returns)
        return cls(entries=tuple(survivors), objective_dims=objective_dims)


def enumerate_pareto_front(env: Environment, horizon: int, seed: int = 0,
                           budget: int = SEARCH_BUDGET) -> ParetoFront:
    """Depth-first enumeration of action sequences until termination or horizon.

    Branches are pruned when the same (state, depth) was already reached with a
    weakly-dominating accumulated return, which is sound for deterministic
    Markov environments. Raises SearchBudgetExceeded past `budget` expansions.
    """
    caps = env.capabilities
    if caps.reward_dims < 2:
        raise ValueError("environment is not multi-objective")
    if caps.num_controllers != 1:
        raise ValueError("front enumeration supports single-controller envs")
    arity = caps.action_spaces[0].n

    base = copy.deepcopy(env)
    base.reset(seed)
    dims = caps.reward_dims
    candidates: list = []
    seen: dict = {}  # (state json, depth) -> list of accumulated return tuples
    expanded = 0

    def weakly_dominated(acc: tuple, pool: list) -> bool:
        return any(all(p >= a for p, a in zip(prev, acc)) for prev in pool)

    def visit(state_env: Environment, depth: int, acc: tuple, prefix: list) -> None:
        nonlocal expanded
        if depth >= horizon:
            candidates.append((acc, tuple(prefix)))
            return
        key = (repr(sorted(state_env.state_dict().items())), depth)
        pool = seen.setdefault(key, [])
        if weakly_dominated(acc, pool):
            return
        pool[:] = [p for p in pool if not all(a >= q for a, q in zip(acc, p))]
        pool.append(acc)
        expanded += 1
        if expanded > budget:
            raise SearchBudgetExceeded(f"more than {budget} nodes expanded")
        for a in range(arity):
            child = copy.deepcopy(state_env)
            outcome = child.step((a,))
            next_acc = tuple(x + r for x, r in zip(acc, outcome.rewards[0]))
            prefix.append(a)
            if outcome.terminated or outcome.truncated:
                candidates.append((next_acc, tuple(prefix)))
            else:
                visit(child, depth + 1, next_acc, prefix)
            prefix.pop()

    visit(base, 0, tuple(0.0 for _ in range(dims)), [])
    return ParetoFront.from_candidates(candidates, objective_dims=dims)


def scalarize(weights: Sequence, return_vec: Sequence) -> float:
    """Non-negative weighted sum of a return vector."""
    if len(weights) != len(return_vec):
        raise ValueError("weights and return vector must have equal length")
    if any(w < 0 for w in weights):
        raise ValueError("weights must be non-negative")
    return float(sum(w * r for w, r in zip(weights, return_vec)))


def select_by_utility(front: ParetoFront, weights: Sequence) -> ParetoEntry:
    """Entry maximizing the scalarized utility; lowest-index tie-break."""
    if not front.entries:
        raise ValueError("empty front")
    best, best_u = front.entries[0], scalarize(weights, front.entries[0].returns)
    for entry in front.entries[1:]:
        u = scalarize(weights, entry.returns)
        if u > best_u:
            best, best_u = entry, u
    return best


def replay_witness(env: Environment, entry: ParetoEntry, seed: int = 0) -> tuple:
    """Re-run a witness action sequence and return the achieved return vector."""
    fresh = copy.deepcopy(env)
    fresh.reset(seed)
    dims = env.capabilities.reward_dims
    total = [0.0] * dims
    for a in entry.actions:
        outcome = fresh.step((a,))
        for d in range(dims):
            total[d] += outcome.rewards[0][d]
        if outcome.terminated or outcome.truncated:
            break
    return tuple(total)
