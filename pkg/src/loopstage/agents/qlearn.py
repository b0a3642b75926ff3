"""Tabular Q-learning: the built-in learner for discrete-action environments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional

from ..envs.base import Environment, VectorObs
from ..rng import SplitMix64


@dataclass
class QTable:
    alpha: float
    gamma: float
    epsilon: float
    values: dict = field(default_factory=dict)  # (state key, action index) -> float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must be in (0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError("gamma must be in [0, 1]")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ValueError("epsilon must be in [0, 1]")

    def get(self, s: Hashable, a: int) -> float:
        return self.values.get((s, a), 0.0)

    def max_value(self, s: Hashable, arity: int) -> float:
        return max(self.get(s, a) for a in range(arity))

    def state_dict(self) -> dict:
        # Keys flattened to strings so the table serializes canonically.
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "values": {f"{s!r}|{a}": v for (s, a), v in sorted(self.values.items(),
                                                               key=lambda kv: repr(kv[0]))},
        }


def q_update(q: QTable, s: Hashable, a: int, reward: float,
             s_next: Hashable, terminal: bool, arity: int) -> QTable:
    """One temporal-difference backup; touches exactly the (s, a) entry."""
    bootstrap = 0.0 if terminal else q.max_value(s_next, arity)
    current = q.get(s, a)
    q.values[(s, a)] = current + q.alpha * (reward + q.gamma * bootstrap - current)
    return q


def greedy_action(q: QTable, s: Hashable, arity: int) -> int:
    """Argmax with lowest-index tie-breaking."""
    best_a, best_v = 0, q.get(s, 0)
    for a in range(1, arity):
        v = q.get(s, a)
        if v > best_v:
            best_a, best_v = a, v
    return best_a


def epsilon_greedy(q: QTable, s: Hashable, arity: int,
                   rng_draw: float, tiebreak_draw: float) -> int:
    """Explore uniformly with probability epsilon, else greedy."""
    if rng_draw < q.epsilon:
        return min(int(tiebreak_draw * arity), arity - 1)
    return greedy_action(q, s, arity)


def q_value_margin(q: QTable, s: Hashable, arity: int) -> float:
    """Gap between the best and second-best action values at s."""
    vals = sorted((q.get(s, a) for a in range(arity)), reverse=True)
    if len(vals) < 2:
        return math.inf
    return vals[0] - vals[1]


def should_request_help(q: QTable, s: Hashable, arity: int, margin: float) -> bool:
    """Illustrative delegation trigger: ask for takeover when the policy is unsure."""
    return q_value_margin(q, s, arity) < margin


def state_key(obs, n_bins: int = 0, obs_space: Optional[VectorObs] = None):
    """Hashable key for an observation; float vectors are binned."""
    if n_bins <= 0:
        return tuple(obs)
    assert obs_space is not None and obs_space.low is not None and obs_space.high is not None
    key = []
    for v, lo, hi in zip(obs, obs_space.low, obs_space.high):
        frac = (v - lo) / (hi - lo) if hi > lo else 0.0
        key.append(min(int(frac * n_bins), n_bins - 1))
    return tuple(key)


AnnotatorFn = Callable[[Hashable, int], int]  # (state key, action) -> -1 | +1


@dataclass
class EpisodeResult:
    steps: int
    undiscounted_return: float
    terminated: bool


def run_episodes(env: Environment, q: QTable, episodes: int, stream: SplitMix64,
                 annotator: Optional[AnnotatorFn] = None, beta: float = 0.0,
                 n_bins: int = 0) -> list:
    """Online Q-learning driver for single-controller environments.

    When an annotator is supplied, its +/-1 judgement of each (state, action) is
    blended into the learner's reward immediately (a zero-latency stand-in for
    the live annotation pipeline).
    """
    from .shaping import shape_reward

    arity = env.capabilities.action_spaces[0].n
    obs_space = env.capabilities.observation_spaces[0]
    results = []
    for ep in range(episodes):
        (obs,) = env.reset(stream.next_u64())
        s = state_key(obs, n_bins, obs_space)
        total, steps, terminated = 0.0, 0, False
        while True:
            a = epsilon_greedy(q, s, arity, stream.next_float(), stream.next_float())
            outcome = env.step((a,))
            (obs_next,) = outcome.observations
            reward = outcome.rewards[0][0]
            total += reward
            steps += 1
            learn_reward = reward
            if annotator is not None:
                learn_reward = shape_reward(reward, [(annotator(s, a), 0)], beta, 0)
            s_next = state_key(obs_next, n_bins, obs_space)
            q_update(q, s, a, learn_reward, s_next, outcome.terminated, arity)
            s = s_next
            if outcome.terminated or outcome.truncated:
                terminated = outcome.terminated
                break
        results.append(EpisodeResult(steps=steps, undiscounted_return=total,
                                     terminated=terminated))
    return results


def greedy_rollout(env: Environment, q: QTable, seed: int, n_bins: int = 0,
                   max_steps: Optional[int] = None) -> EpisodeResult:
    """Run the greedy policy once and report the undiscounted return."""
    arity = env.capabilities.action_spaces[0].n
    obs_space = env.capabilities.observation_spaces[0]
    (obs,) = env.reset(seed)
    s = state_key(obs, n_bins, obs_space)
    total, steps = 0.0, 0
    limit = max_steps if max_steps is not None else 10_000
    while steps < limit:
        a = greedy_action(q, s, arity)
        outcome = env.step((a,))
        total += outcome.rewards[0][0]
        steps += 1
        s = state_key(outcome.observations[0], n_bins, obs_space)
        if outcome.terminated or outcome.truncated:
            return EpisodeResult(steps=steps, undiscounted_return=total,
                                 terminated=outcome.terminated)
    return EpisodeResult(steps=steps, undiscounted_return=total, terminated=False)
