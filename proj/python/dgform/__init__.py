"""Python bindings for the dgform deformable formation planner."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from . import _core
from ._core import DgformError, PROTOCOL_VERSION, hungarian

__all__ = [
    "DgformError",
    "PROTOCOL_VERSION",
    "formation_error",
    "hungarian",
    "run_paas",
    "run_scenario",
]

Point = Sequence[float]


def run_paas(
    shape: dict | str | Path,
    positions: Iterable[Point],
    center: Point,
    radius: float,
    *,
    agent_radius: float = 0.15,
    margin: float = 1.5,
    seed: int = 0,
) -> dict:
    """Plan targets and the assignment for agents at `positions`.

    `shape` is a shape document or a path to one.
    """
    if not isinstance(shape, dict):
        shape = json.loads(Path(shape).read_text())
    text = _core.run_paas(
        json.dumps(shape), [list(p) for p in positions], list(center), radius, agent_radius, margin, seed
    )
    return json.loads(text)


def run_scenario(path: str | Path, *, seed: int = 0, mode: str = "", duration: float = 0.0) -> dict:
    """Run a scenario headless and return its summary document."""
    return json.loads(_core.run_scenario(str(path), seed, mode, duration))


def formation_error(positions: Iterable[Point], desired: Iterable[Point]) -> float:
    return _core.formation_error([list(p) for p in positions], [list(p) for p in desired])
