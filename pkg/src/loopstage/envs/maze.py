"""Perfect maze gridworld: seeded depth-first carving, step cost, corner goal."""

from __future__ import annotations

from typing import Sequence

from ..rng import SplitMix64
from .base import Cell, Discrete, EnvCapabilities, Environment, RenderFrame, Sprite, VectorObs

# Action indices, shared with the treasure env.
NORTH, EAST, SOUTH, WEST = 0, 1, 2, 3
DELTAS = {NORTH: (0, -1), EAST: (1, 0), SOUTH: (0, 1), WEST: (-1, 0)}

STEP_COST = -0.01
GOAL_REWARD = 1.0


def carve_maze(width: int, height: int, layout_seed: int) -> frozenset:
    """Return the set of open passages as frozensets of two adjacent cells.

    Randomized depth-first carving yields a perfect maze: every cell reachable,
    exactly one simple path between any two cells.
    """
    stream = SplitMix64(layout_seed)
    visited = {(0, 0)}
    stack = [(0, 0)]
    passages = set()
    while stack:
        x, y = stack[-1]
        neighbors = []
        for dx, dy in (DELTAS[NORTH], DELTAS[EAST], DELTAS[SOUTH], DELTAS[WEST]):
            nx, ny = x + dx, y + dy
            if 0 <= nx < width and 0 <= ny < height and (nx, ny) not in visited:
                neighbors.append((nx, ny))
        if not neighbors:
            stack.pop()
            continue
        nxt = neighbors[stream.next_below(len(neighbors))]
        passages.add(frozenset(((x, y), nxt)))
        visited.add(nxt)
        stack.append(nxt)
    return frozenset(passages)


def shortest_path(passages: frozenset, width: int, height: int,
                  start: tuple, goal: tuple) -> list:
    """BFS path from start to goal (inclusive); [] if unreachable."""
    from collections import deque
    prev = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        if cur == goal:
            path = [cur]
            while prev[cur] is not None:
                cur = prev[cur]
                path.append(cur)
            path.reverse()
            return path
        x, y = cur
        for a in (NORTH, EAST, SOUTH, WEST):
            dx, dy = DELTAS[a]
            nxt = (x + dx, y + dy)
            if 0 <= nxt[0] < width and 0 <= nxt[1] < height \
                    and frozenset((cur, nxt)) in passages and nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    return []


class GridMaze(Environment):
    """Single controller, scalar reward, 4 discrete moves; walls block."""

    env_id = "grid_maze"

    def __init__(self, width: int, height: int, layout_seed: int):
        if width < 1 or height < 1 or width * height < 2:
            raise ValueError("maze needs at least two cells")
        self.width = width
        self.height = height
        self.layout_seed = layout_seed
        self.passages = carve_maze(width, height, layout_seed)
        self.start = (0, 0)
        self.goal = (width - 1, height - 1)
        self.step_limit = 4 * width * height
        self.capabilities = EnvCapabilities(
            num_controllers=1,
            reward_dims=1,
            action_spaces=(Discrete(4),),
            observation_spaces=(VectorObs(length=2, dtype="int",
                                          low=(0, 0), high=(width - 1, height - 1)),),
            render_modes=("grid",),
        )
        self._was_reset = False
        self.pos = self.start
        self.steps = 0
        self.done = False
        self._rng = SplitMix64(0)

    def reset(self, seed: int) -> tuple:
        self._rng = SplitMix64(seed)
        self.pos = self.start
        self.steps = 0
        self.done = False
        self._was_reset = True
        return (self._obs(),)

    def _obs(self) -> tuple:
        return self.pos

    def step(self, joint_action: Sequence):
        from .base import StepOutcome
        self._check_live(self.done, self._was_reset)
        (action,) = self._check_joint_action(joint_action)
        x, y = self.pos
        dx, dy = DELTAS[action]
        nxt = (x + dx, y + dy)
        if 0 <= nxt[0] < self.width and 0 <= nxt[1] < self.height \
                and frozenset((self.pos, nxt)) in self.passages:
            self.pos = nxt
        self.steps += 1
        reward = STEP_COST
        terminated = self.pos == self.goal
        if terminated:
            reward += GOAL_REWARD
        truncated = not terminated and self.steps >= self.step_limit
        self.done = terminated or truncated
        return StepOutcome(
            observations=(self._obs(),),
            rewards=((reward,),),
            terminated=terminated,
            truncated=truncated,
            info={},
        )

    def _cell_walls(self, x: int, y: int) -> str:
        walls = ""
        for name, a in (("N", NORTH), ("E", EAST), ("S", SOUTH), ("W", WEST)):
            dx, dy = DELTAS[a]
            nxt = (x + dx, y + dy)
            inside = 0 <= nxt[0] < self.width and 0 <= nxt[1] < self.height
            if not inside or frozenset(((x, y), nxt)) not in self.passages:
                walls += name
        return walls

    def render(self) -> RenderFrame:
        cells = tuple(
            Cell(x=x, y=y, kind="floor", walls=self._cell_walls(x, y))
            for y in range(self.height) for x in range(self.width)
        )
        sprites = (
            Sprite(x=self.goal[0], y=self.goal[1], kind="goal"),
            Sprite(x=self.pos[0], y=self.pos[1], kind="agent"),
        )
        return RenderFrame(mode="grid", width=self.width, height=self.height,
                           cells=cells, sprites=sprites)

    def state_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "pos": list(self.pos),
            "steps": self.steps,
            "done": self.done,
            "rng": self._rng.state_dict(),
        }

    def optimal_path(self) -> list:
        return shortest_path(self.passages, self.width, self.height, self.start, self.goal)
