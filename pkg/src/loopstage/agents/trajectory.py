"""Episode trajectories: the unit of preference elicitation and export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class TrajectoryStep:
    observation: tuple
    action: "int | tuple"
    reward: tuple  # reward_dims floats

    def to_json(self) -> dict:
        return {
            "observation": list(self.observation),
            "action": list(self.action) if isinstance(self.action, tuple) else self.action,
            "reward": list(self.reward),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrajectoryStep":
        action = obj["action"]
        return cls(
            observation=tuple(obj["observation"]),
            action=tuple(action) if isinstance(action, list) else action,
            reward=tuple(float(r) for r in obj["reward"]),
        )


@dataclass(frozen=True)
class Trajectory:
    env_id: str
    seed: int
    steps: tuple

    @property
    def total_return(self) -> tuple:
        if not self.steps:
            return ()
        dims = len(self.steps[0].reward)
        return tuple(sum(s.reward[d] for s in self.steps) for d in range(dims))

    def to_json(self) -> dict:
        return {
            "env_id": self.env_id,
            "seed": self.seed,
            "steps": [s.to_json() for s in self.steps],
            "total_return": list(self.total_return),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Trajectory":
        traj = cls(
            env_id=obj["env_id"],
            seed=int(obj["seed"]),
            steps=tuple(TrajectoryStep.from_json(s) for s in obj["steps"]),
        )
        recorded = tuple(float(r) for r in obj.get("total_return", traj.total_return))
        if recorded != traj.total_return:
            raise ValueError("total_return does not match the sum of step rewards")
        return traj


def build_trajectory(env_id: str, seed: int, steps: Sequence) -> Trajectory:
    return Trajectory(env_id=env_id, seed=seed, steps=tuple(steps))
