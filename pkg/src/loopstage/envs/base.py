"""Environment abstraction: reset/step/render with vector rewards and joint actions.

Every environment is single-threaded and fully deterministic given
(constructor params, reset seed, action sequence). Internal randomness comes
from one counter-based stream seeded at reset; its draw count is part of
state_dict() so state hashes cover it.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence


class EnvError(Exception):
    pass


class SpaceViolation(EnvError):
    pass


class SteppedAfterEnd(EnvError):
    pass


@dataclass(frozen=True)
class Discrete:
    n: int

    def contains(self, action: Any) -> bool:
        return isinstance(action, int) and not isinstance(action, bool) and 0 <= action < self.n

    def to_json(self) -> dict:
        return {"type": "discrete", "n": self.n}


@dataclass(frozen=True)
class VectorObs:
    """Fixed-length observation vector; bounds are informational."""
    length: int
    dtype: str = "int"  # "int" | "float"
    low: Optional[tuple] = None
    high: Optional[tuple] = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"type": "vector", "length": self.length, "dtype": self.dtype}
        if self.low is not None:
            out["low"] = list(self.low)
        if self.high is not None:
            out["high"] = list(self.high)
        return out


def space_from_json(obj: dict) -> Any:
    if obj.get("type") == "discrete":
        return Discrete(n=int(obj["n"]))
    if obj.get("type") == "vector":
        return VectorObs(length=int(obj["length"]), dtype=obj.get("dtype", "int"),
                         low=tuple(obj["low"]) if "low" in obj else None,
                         high=tuple(obj["high"]) if "high" in obj else None)
    raise ValueError(f"unsupported space descriptor {obj!r}")


@dataclass(frozen=True)
class EnvCapabilities:
    num_controllers: int
    reward_dims: int
    action_spaces: tuple          # per controller
    observation_spaces: tuple     # per controller
    render_modes: tuple

    def __post_init__(self):
        if self.num_controllers < 1:
            raise ValueError("num_controllers must be positive")
        if self.reward_dims < 1:
            raise ValueError("reward_dims must be positive")
        if len(self.action_spaces) != self.num_controllers:
            raise ValueError("one action space per controller required")
        if len(self.observation_spaces) != self.num_controllers:
            raise ValueError("one observation space per controller required")

    @property
    def multi_objective(self) -> bool:
        return self.reward_dims > 1

    @property
    def multi_agent(self) -> bool:
        return self.num_controllers > 1

    def to_json(self) -> dict:
        return {
            "num_controllers": self.num_controllers,
            "reward_dims": self.reward_dims,
            "action_spaces": [s.to_json() for s in self.action_spaces],
            "observation_spaces": [s.to_json() for s in self.observation_spaces],
            "render_modes": list(self.render_modes),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EnvCapabilities":
        return cls(
            num_controllers=int(obj["num_controllers"]),
            reward_dims=int(obj["reward_dims"]),
            action_spaces=tuple(space_from_json(s) for s in obj["action_spaces"]),
            observation_spaces=tuple(space_from_json(s) for s in obj["observation_spaces"]),
            render_modes=tuple(obj["render_modes"]),
        )


@dataclass(frozen=True)
class StepOutcome:
    observations: tuple           # per controller
    rewards: tuple                # per controller: tuple of reward_dims floats
    terminated: bool
    truncated: bool
    info: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "observations": [list(o) for o in self.observations],
            "rewards": [list(r) for r in self.rewards],
            "terminated": self.terminated,
            "truncated": self.truncated,
            "info": self.info,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "StepOutcome":
        return cls(
            observations=tuple(tuple(o) for o in obj["observations"]),
            rewards=tuple(tuple(float(x) for x in r) for r in obj["rewards"]),
            terminated=bool(obj["terminated"]),
            truncated=bool(obj["truncated"]),
            info=dict(obj["info"]),
        )


@dataclass(frozen=True)
class Cell:
    x: int
    y: int
    kind: str
    walls: str = ""  # subset of "NESW", grid mode only

    def to_json(self) -> dict:
        out: dict[str, Any] = {"x": self.x, "y": self.y, "kind": self.kind}
        if self.walls:
            out["walls"] = self.walls
        return out


@dataclass(frozen=True)
class Sprite:
    x: int
    y: int
    kind: str
    label: str = ""

    def to_json(self) -> dict:
        out: dict[str, Any] = {"x": self.x, "y": self.y, "kind": self.kind}
        if self.label:
            out["label"] = self.label
        return out


RENDER_MODES = ("grid", "sprite_list", "scalar_gauge")


@dataclass(frozen=True)
class RenderFrame:
    mode: str
    width: int
    height: int
    cells: tuple = ()
    sprites: tuple = ()
    overlay_text: tuple = ()

    def __post_init__(self):
        if self.mode not in RENDER_MODES:
            raise ValueError(f"unknown render mode {self.mode!r}")
        for c in self.cells:
            if not (0 <= c.x < self.width and 0 <= c.y < self.height):
                raise ValueError(f"cell ({c.x},{c.y}) outside {self.width}x{self.height}")
        for s in self.sprites:
            if not (0 <= s.x < self.width and 0 <= s.y < self.height):
                raise ValueError(f"sprite ({s.x},{s.y}) outside {self.width}x{self.height}")

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "width": self.width,
            "height": self.height,
            "cells": [c.to_json() for c in self.cells],
            "sprites": [s.to_json() for s in self.sprites],
            "overlay_text": list(self.overlay_text),
        }


class Environment(ABC):
    """reset/step/render contract. Exactly one caller steps an instance at a time."""

    env_id: str
    capabilities: EnvCapabilities

    @abstractmethod
    def reset(self, seed: int) -> tuple:
        """Put the environment in the initial state determined solely by seed."""

    @abstractmethod
    def step(self, joint_action: Sequence) -> StepOutcome:
        """Advance one tick with one action per controller."""

    @abstractmethod
    def render(self) -> RenderFrame:
        """Pure read of the current state as drawable primitives."""

    @abstractmethod
    def state_dict(self) -> dict:
        """Canonical JSON-able state, including internal RNG draw count."""

    # Shared guards -----------------------------------------------------

    def _check_live(self, done: bool, was_reset: bool) -> None:
        if not was_reset:
            raise EnvError("step before reset")
        if done:
            raise SteppedAfterEnd("episode is over; reset before stepping")

    def _check_joint_action(self, joint_action: Sequence) -> tuple:
        caps = self.capabilities
        try:
            actions = tuple(joint_action)
        except TypeError:
            raise SpaceViolation(f"joint action must be a sequence, got {joint_action!r}")
        if len(actions) != caps.num_controllers:
            raise SpaceViolation(
                f"expected {caps.num_controllers} actions, got {len(actions)}")
        for i, (a, space) in enumerate(zip(actions, caps.action_spaces)):
            if not space.contains(a):
                raise SpaceViolation(f"action {a!r} outside space of controller {i}")
        return actions
