"""Built-in session agents: polled synchronously by the orchestrator each tick."""

from __future__ import annotations

from typing import Optional

from ..envs.base import Environment, VectorObs
from ..rng import SplitMix64
from .qlearn import QTable, epsilon_greedy, q_update, should_request_help, state_key


class SessionAgent:
    """One agent instance bound to a role for the lifetime of a session."""

    def act(self, obs, stream: SplitMix64) -> int:
        raise NotImplementedError

    def learn(self, obs, action: int, reward: float, obs_next, terminal: bool) -> None:
        pass

    def wants_delegation(self, obs) -> bool:
        return False

    def state_dict(self) -> dict:
        raise NotImplementedError


class QLearningAgent(SessionAgent):
    def __init__(self, env: Environment, seat: int, alpha: float = 0.5,
                 gamma: float = 0.99, epsilon: float = 0.1, n_bins: int = 0,
                 help_margin: Optional[float] = None,
                 scalarization_weights: Optional[tuple] = None):
        self.q = QTable(alpha=alpha, gamma=gamma, epsilon=epsilon)
        self.arity = env.capabilities.action_spaces[seat].n
        self.obs_space: VectorObs = env.capabilities.observation_spaces[seat]
        self.n_bins = n_bins
        self.help_margin = help_margin
        reward_dims = env.capabilities.reward_dims
        if scalarization_weights is None:
            scalarization_weights = tuple([1.0] + [0.0] * (reward_dims - 1))
        self.scalarization_weights = scalarization_weights

    def _key(self, obs):
        return state_key(obs, self.n_bins, self.obs_space)

    def act(self, obs, stream: SplitMix64) -> int:
        return epsilon_greedy(self.q, self._key(obs), self.arity,
                              stream.next_float(), stream.next_float())

    def scalarize_reward(self, reward_vec: tuple) -> float:
        return float(sum(w * r for w, r in zip(self.scalarization_weights, reward_vec)))

    def learn(self, obs, action: int, reward: float, obs_next, terminal: bool) -> None:
        q_update(self.q, self._key(obs), action, reward, self._key(obs_next),
                 terminal, self.arity)

    def wants_delegation(self, obs) -> bool:
        if self.help_margin is None:
            return False
        return should_request_help(self.q, self._key(obs), self.arity, self.help_margin)

    def state_dict(self) -> dict:
        return {"algorithm": "q_learning", "q": self.q.state_dict()}


class CoverageGreedyAgent(SessionAgent):
    """Heads for its declared intention (nearest uncovered landmark)."""

    def __init__(self, env: Environment, seat: int, n: int):
        self.seat = seat
        self.n = n

    def act(self, obs, stream: SplitMix64) -> int:
        from ..envs.coverage import MOVE_E, MOVE_N, MOVE_S, MOVE_W, STAY
        own_x, own_y = obs[0], obs[1]
        target = None
        for i in range(self.n):
            lx, ly, covered = obs[2 + 3 * i], obs[3 + 3 * i], obs[4 + 3 * i]
            if covered:
                continue
            d = abs(own_x - lx) + abs(own_y - ly)
            if target is None or d < target[0]:
                target = (d, lx, ly)
        if target is None:
            return STAY
        _, lx, ly = target
        if own_x < lx:
            return MOVE_E
        if own_x > lx:
            return MOVE_W
        if own_y < ly:
            return MOVE_S
        if own_y > ly:
            return MOVE_N
        return STAY

    def state_dict(self) -> dict:
        return {"algorithm": "coverage_greedy"}


class SequenceAgent(SessionAgent):
    """Replays a fixed action sequence; used to follow a selected Pareto policy."""

    def __init__(self, fallback: int = 0):
        self.sequence: tuple = ()
        self.cursor = 0
        self.fallback = fallback

    def set_sequence(self, actions: tuple) -> None:
        self.sequence = tuple(actions)
        self.cursor = 0

    def reset_cursor(self) -> None:
        self.cursor = 0

    def act(self, obs, stream: SplitMix64) -> int:
        if self.cursor < len(self.sequence):
            a = self.sequence[self.cursor]
            self.cursor += 1
            return a
        return self.fallback

    def state_dict(self) -> dict:
        return {"algorithm": "sequence", "sequence": list(self.sequence),
                "cursor": self.cursor, "fallback": self.fallback}


ALGORITHMS = ("q_learning", "coverage_greedy", "pareto_follower")


def make_agent(algorithm: str, env: Environment, seat: int, hyperparams: dict) -> SessionAgent:
    if algorithm == "q_learning":
        return QLearningAgent(
            env, seat,
            alpha=float(hyperparams.get("alpha", 0.5)),
            gamma=float(hyperparams.get("gamma", 0.99)),
            epsilon=float(hyperparams.get("epsilon", 0.1)),
            n_bins=int(hyperparams.get("n_bins", 0)),
            help_margin=(float(hyperparams["help_margin"])
                         if "help_margin" in hyperparams else None),
            scalarization_weights=(tuple(hyperparams["scalarization_weights"])
                                   if "scalarization_weights" in hyperparams else None),
        )
    if algorithm == "coverage_greedy":
        return CoverageGreedyAgent(env, seat, n=env.capabilities.num_controllers)
    if algorithm == "pareto_follower":
        return SequenceAgent(fallback=int(hyperparams.get("fallback_action", 0)))
    raise ValueError(f"unknown agent algorithm {algorithm!r}")
