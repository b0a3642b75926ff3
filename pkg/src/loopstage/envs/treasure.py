"""Two-objective seabed treasure hunt loaded from a versioned fixture file.

Fixture format ("dst v1"):

    dst v1
    # col depth value
    0 1 1.0
    1 2 2.0
    ...

One treasure per column, columns contiguous from 0. Cells strictly below a
column's treasure depth are rock. Reward is (treasure value, -1 time penalty)
per step; reaching a treasure terminates the episode.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from ..rng import SplitMix64
from .base import Cell, Discrete, EnvCapabilities, Environment, RenderFrame, Sprite, StepOutcome, VectorObs
from .maze import DELTAS, EAST, NORTH, SOUTH, WEST  # same 4-action order

FIXTURE_HEADER = "dst v1"


class FixtureError(ValueError):
    pass


def parse_dst_fixture(text: str) -> list:
    """Return [(col, depth, value)] sorted by column; validates the format."""
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != FIXTURE_HEADER:
        raise FixtureError(f"fixture must start with {FIXTURE_HEADER!r}")
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 3:
            raise FixtureError(f"expected 'col depth value', got {ln!r}")
        try:
            col, depth, value = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise FixtureError(f"bad row {ln!r}") from None
        if col < 0 or depth < 0:
            raise FixtureError(f"negative coordinate in {ln!r}")
        rows.append((col, depth, value))
    if not rows:
        raise FixtureError("fixture has no treasures")
    rows.sort()
    cols = [r[0] for r in rows]
    if len(set(cols)) != len(cols):
        raise FixtureError("duplicate column")
    if cols != list(range(len(cols))):
        raise FixtureError("columns must be contiguous from 0")
    if rows[0][1] < 1:
        raise FixtureError("column 0 treasure must be below the start cell")
    return rows


def default_fixture_path() -> Path:
    return Path(__file__).resolve().parent.parent / "fixtures" / "dst_v1.txt"


class DeepSeaTreasure(Environment):
    """Single controller, reward_dims=2: (treasure value, time penalty)."""

    env_id = "deep_sea_treasure"

    def __init__(self, fixture: "str | Path | None" = None):
        path = Path(fixture) if fixture is not None else default_fixture_path()
        self.fixture_path = str(path)
        self.treasures = parse_dst_fixture(path.read_text())
        self.width = len(self.treasures)
        self.height = max(d for _, d, _ in self.treasures) + 1
        self.depth_by_col = {c: d for c, d, _ in self.treasures}
        self.value_by_cell = {(c, d): v for c, d, v in self.treasures}
        self.start = (0, 0)
        self.step_limit = 4 * self.width * self.height
        self.capabilities = EnvCapabilities(
            num_controllers=1,
            reward_dims=2,
            action_spaces=(Discrete(4),),
            observation_spaces=(VectorObs(length=2, dtype="int",
                                          low=(0, 0),
                                          high=(self.width - 1, self.height - 1)),),
            render_modes=("grid",),
        )
        self._was_reset = False
        self.pos = self.start
        self.steps = 0
        self.done = False
        self._rng = SplitMix64(0)

    def _is_water(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return y <= self.depth_by_col[x]

    def reset(self, seed: int) -> tuple:
        self._rng = SplitMix64(seed)
        self.pos = self.start
        self.steps = 0
        self.done = False
        self._was_reset = True
        return (self.pos,)

    def step(self, joint_action: Sequence) -> StepOutcome:
        self._check_live(self.done, self._was_reset)
        (action,) = self._check_joint_action(joint_action)
        dx, dy = DELTAS[action]
        nxt = (self.pos[0] + dx, self.pos[1] + dy)
        if self._is_water(*nxt):
            self.pos = nxt
        self.steps += 1
        value = self.value_by_cell.get(self.pos, 0.0)
        terminated = self.pos in self.value_by_cell
        truncated = not terminated and self.steps >= self.step_limit
        self.done = terminated or truncated
        return StepOutcome(
            observations=(self.pos,),
            rewards=((value, -1.0),),
            terminated=terminated,
            truncated=truncated,
            info={},
        )

    def render(self) -> RenderFrame:
        cells = []
        for y in range(self.height):
            for x in range(self.width):
                cells.append(Cell(x=x, y=y, kind="water" if self._is_water(x, y) else "rock"))
        sprites = [Sprite(x=c, y=d, kind="treasure", label=repr(v))
                   for c, d, v in self.treasures]
        sprites.append(Sprite(x=self.pos[0], y=self.pos[1], kind="agent"))
        return RenderFrame(mode="grid", width=self.width, height=self.height,
                           cells=tuple(cells), sprites=tuple(sprites))

    def state_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "pos": list(self.pos),
            "steps": self.steps,
            "done": self.done,
            "rng": self._rng.state_dict(),
        }
