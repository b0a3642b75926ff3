"""Underpowered car on a hill with the de facto standard constants."""

from __future__ import annotations

import math
from typing import Sequence

from ..rng import SplitMix64
from .base import Discrete, EnvCapabilities, Environment, RenderFrame, Sprite, StepOutcome, VectorObs

FORCE = 0.001
GRAVITY = 0.0025
MIN_POSITION = -1.2
MAX_POSITION = 0.6
MAX_SPEED = 0.07
GOAL_POSITION = 0.5
STEP_LIMIT = 200

GAUGE_WIDTH = 101


class MountainCar(Environment):
    """Single controller, 3 discrete actions: push left / none / right."""

    env_id = "mountain_car"

    def __init__(self):
        self.capabilities = EnvCapabilities(
            num_controllers=1,
            reward_dims=1,
            action_spaces=(Discrete(3),),
            observation_spaces=(VectorObs(length=2, dtype="float",
                                          low=(MIN_POSITION, -MAX_SPEED),
                                          high=(MAX_POSITION, MAX_SPEED)),),
            render_modes=("scalar_gauge",),
        )
        self._was_reset = False
        self.position = 0.0
        self.velocity = 0.0
        self.steps = 0
        self.done = False
        self._rng = SplitMix64(0)

    def reset(self, seed: int) -> tuple:
        self._rng = SplitMix64(seed)
        self.position = -0.6 + 0.2 * self._rng.next_float()
        self.velocity = 0.0
        self.steps = 0
        self.done = False
        self._was_reset = True
        return (self._obs(),)

    def _obs(self) -> tuple:
        return (self.position, self.velocity)

    def step(self, joint_action: Sequence) -> StepOutcome:
        self._check_live(self.done, self._was_reset)
        (action,) = self._check_joint_action(joint_action)
        direction = action - 1
        self.velocity += FORCE * direction - GRAVITY * math.cos(3 * self.position)
        self.velocity = max(-MAX_SPEED, min(MAX_SPEED, self.velocity))
        self.position += self.velocity
        self.position = max(MIN_POSITION, min(MAX_POSITION, self.position))
        if self.position <= MIN_POSITION and self.velocity < 0:
            self.velocity = 0.0
        self.steps += 1
        terminated = self.position >= GOAL_POSITION
        truncated = not terminated and self.steps >= STEP_LIMIT
        self.done = terminated or truncated
        return StepOutcome(
            observations=(self._obs(),),
            rewards=((-1.0,),),
            terminated=terminated,
            truncated=truncated,
            info={},
        )

    def render(self) -> RenderFrame:
        pos_frac = (self.position - MIN_POSITION) / (MAX_POSITION - MIN_POSITION)
        vel_frac = (self.velocity + MAX_SPEED) / (2 * MAX_SPEED)
        sprites = (
            Sprite(x=round(pos_frac * (GAUGE_WIDTH - 1)), y=0, kind="gauge_position"),
            Sprite(x=round(vel_frac * (GAUGE_WIDTH - 1)), y=1, kind="gauge_velocity"),
        )
        overlay = (f"position={self.position!r}", f"velocity={self.velocity!r}")
        return RenderFrame(mode="scalar_gauge", width=GAUGE_WIDTH, height=2,
                           sprites=sprites, overlay_text=overlay)

    def state_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "position": self.position,
            "velocity": self.velocity,
            "steps": self.steps,
            "done": self.done,
            "rng": self._rng.state_dict(),
        }
