"""Native environments and the registry the rest of the system builds from."""

from __future__ import annotations

from .base import (
    Cell,
    Discrete,
    EnvCapabilities,
    EnvError,
    Environment,
    RenderFrame,
    SpaceViolation,
    Sprite,
    StepOutcome,
    SteppedAfterEnd,
    VectorObs,
)
from .coverage import CoverageTeam
from .maze import GridMaze, carve_maze, shortest_path
from .mountain_car import MountainCar
from .treasure import DeepSeaTreasure, FixtureError, parse_dst_fixture


class UnknownEnvironment(ValueError):
    pass


def make_env(env_id: str, params: dict) -> Environment:
    """Instantiate a registered environment from its id and parameter dict."""
    if env_id == "grid_maze":
        return GridMaze(width=int(params["width"]), height=int(params["height"]),
                        layout_seed=int(params.get("layout_seed", 0)))
    if env_id == "mountain_car":
        return MountainCar()
    if env_id == "coverage_team":
        return CoverageTeam(n=int(params["n"]), k=int(params.get("k", 7)))
    if env_id == "deep_sea_treasure":
        return DeepSeaTreasure(fixture=params.get("fixture"))
    raise UnknownEnvironment(f"unknown environment id {env_id!r}")


ENV_IDS = ("grid_maze", "mountain_car", "coverage_team", "deep_sea_treasure")

__all__ = [
    "Cell", "CoverageTeam", "DeepSeaTreasure", "Discrete", "EnvCapabilities",
    "EnvError", "Environment", "FixtureError", "GridMaze", "MountainCar",
    "RenderFrame", "SpaceViolation", "Sprite", "StepOutcome", "SteppedAfterEnd",
    "UnknownEnvironment", "VectorObs", "carve_maze", "make_env", "parse_dst_fixture",
    "shortest_path", "ENV_IDS",
]
