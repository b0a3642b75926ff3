"""Landmark coverage team task: n movers, shared reward, intention broadcast."""

from __future__ import annotations

from typing import Sequence

from ..rng import SplitMix64
from .base import Cell, Discrete, EnvCapabilities, Environment, RenderFrame, Sprite, StepOutcome, VectorObs

MOVE_N, MOVE_E, MOVE_S, MOVE_W, STAY = 0, 1, 2, 3, 4
DELTAS = {MOVE_N: (0, -1), MOVE_E: (1, 0), MOVE_S: (0, 1), MOVE_W: (-1, 0), STAY: (0, 0)}

STEP_LIMIT = 100


class CoverageTeam(Environment):
    """n controllers on a k x k grid must stand on n landmark cells."""

    env_id = "coverage_team"

    def __init__(self, n: int, k: int = 7):
        if n < 1:
            raise ValueError("need at least one controller")
        if k * k < 2 * n:
            raise ValueError("grid too small for agents plus landmarks")
        self.n = n
        self.k = k
        obs_len = 2 + 3 * n + 2 * (n - 1)
        self.capabilities = EnvCapabilities(
            num_controllers=n,
            reward_dims=1,
            action_spaces=tuple(Discrete(5) for _ in range(n)),
            observation_spaces=tuple(VectorObs(length=obs_len, dtype="int") for _ in range(n)),
            render_modes=("grid",),
        )
        self._was_reset = False
        self.agents: list = []
        self.landmarks: list = []
        self.steps = 0
        self.done = False
        self._rng = SplitMix64(0)

    def reset(self, seed: int) -> tuple:
        self._rng = SplitMix64(seed)
        cells = [(x, y) for y in range(self.k) for x in range(self.k)]
        # Sample 2n distinct cells: first n landmarks, then n agent starts.
        picked = []
        pool = list(cells)
        for _ in range(2 * self.n):
            idx = self._rng.next_below(len(pool))
            picked.append(pool.pop(idx))
        self.landmarks = picked[:self.n]
        self.agents = picked[self.n:]
        self.steps = 0
        self.done = False
        self._was_reset = True
        return self._observations()

    def _covered(self) -> list:
        occupied = set(self.agents)
        return [lm in occupied for lm in self.landmarks]

    def _intentions(self) -> list:
        """Per controller: index of nearest uncovered landmark, -1 when none."""
        covered = self._covered()
        out = []
        for ax, ay in self.agents:
            best, best_d = -1, None
            for i, (lx, ly) in enumerate(self.landmarks):
                if covered[i]:
                    continue
                d = abs(ax - lx) + abs(ay - ly)
                if best_d is None or d < best_d:
                    best, best_d = i, d
            out.append(best)
        return out

    def _observations(self) -> tuple:
        covered = self._covered()
        obs = []
        for c in range(self.n):
            own = list(self.agents[c])
            lms = []
            for i, (lx, ly) in enumerate(self.landmarks):
                lms += [lx, ly, int(covered[i])]
            others = []
            for o in range(self.n):
                if o != c:
                    others += list(self.agents[o])
            obs.append(tuple(own + lms + others))
        return tuple(obs)

    def step(self, joint_action: Sequence) -> StepOutcome:
        self._check_live(self.done, self._was_reset)
        actions = self._check_joint_action(joint_action)
        for c, a in enumerate(actions):
            dx, dy = DELTAS[a]
            nx, ny = self.agents[c][0] + dx, self.agents[c][1] + dy
            if 0 <= nx < self.k and 0 <= ny < self.k:
                self.agents[c] = (nx, ny)
        self.steps += 1
        uncovered = self._covered().count(False)
        reward = -uncovered / self.n
        terminated = uncovered == 0
        truncated = not terminated and self.steps >= STEP_LIMIT
        self.done = terminated or truncated
        return StepOutcome(
            observations=self._observations(),
            rewards=tuple((reward,) for _ in range(self.n)),
            terminated=terminated,
            truncated=truncated,
            info={"intentions": self._intentions()},
        )

    def render(self) -> RenderFrame:
        cells = tuple(Cell(x=x, y=y, kind="floor")
                      for y in range(self.k) for x in range(self.k))
        covered = self._covered()
        sprites = []
        for i, (lx, ly) in enumerate(self.landmarks):
            kind = "landmark_covered" if covered[i] else "landmark"
            sprites.append(Sprite(x=lx, y=ly, kind=kind, label=str(i)))
        for c, (ax, ay) in enumerate(self.agents):
            sprites.append(Sprite(x=ax, y=ay, kind="agent", label=str(c)))
        overlay = tuple(f"intent[{c}]={t}" for c, t in enumerate(self._intentions()))
        return RenderFrame(mode="grid", width=self.k, height=self.k,
                           cells=cells, sprites=tuple(sprites), overlay_text=overlay)

    def state_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "agents": [list(a) for a in self.agents],
            "landmarks": [list(l) for l in self.landmarks],
            "steps": self.steps,
            "done": self.done,
            "rng": self._rng.state_dict(),
        }
