from collections import deque
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lcmopg.config import get_settings
from lcmopg.envs.base import Discrete, EnvDescriptor, Env
from lcmopg.errors import ContractViolation
from lcmopg.objective_space import ParetoArchive

TREASURE_PRESETS: dict[str, tuple[float, ...]] = {
    "original": (1, 2, 3, 5, 8, 16, 24, 50, 74, 124),
    "convex": (0.7, 8.2, 11.5, 14.0, 15.1, 16.1, 19.6, 20.3, 22.4, 23.7),
}

OCEAN, CLIFF = 0, -1
# up, down, left, right as (d_row, d_col)
MOVES = np.array([[-1, 0], [1, 0], [0, -1], [0, 1]])


class DstMap(BaseModel):
    """Grid parsed from the ASCII asset: 0 ocean, -1 cliff, n > 0 treasure index."""

    model_config = ConfigDict(frozen=True)

    cells: tuple[tuple[int, ...], ...]
    start: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.cells), len(self.cells[0])

    def treasure_cells(self) -> dict[int, tuple[int, int]]:
        return {v: (r, c) for r, row in enumerate(self.cells) for c, v in enumerate(row) if v > 0}


def parse_dst_map(text: str) -> DstMap:
    rows: list[tuple[int, ...]] = []
    start = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        row = []
        for c, token in enumerate(line.split()):
            if token == "S":
                start = (len(rows), c)
                row.append(OCEAN)
            elif token == ".":
                row.append(OCEAN)
            elif token == "x":
                row.append(CLIFF)
            elif token.startswith("T") and token[1:].isdigit():
                row.append(int(token[1:]))
            else:
                raise ContractViolation(f"Unknown DST map token {token!r}")
        rows.append(tuple(row))
    if not rows or len({len(r) for r in rows}) != 1:
        raise ContractViolation("DST map must be a nonempty rectangle")
    if start is None:
        raise ContractViolation("DST map has no start cell")
    return DstMap(cells=tuple(rows), start=start)


def load_dst_map(path: Path | None = None) -> DstMap:
    path = path or get_settings().get_data_dir_resolved() / "dst_map.txt"
    return parse_dst_map(Path(path).read_text(encoding="utf-8"))


class DstConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    preset: Literal["original", "convex"] = "convex"
    treasure_values: tuple[float, ...] = Field(default=TREASURE_PRESETS["convex"])
    grid: DstMap = Field(default_factory=load_dst_map)

    @model_validator(mode="after")
    def _check(self) -> "DstConfig":
        treasures = self.grid.treasure_cells()
        if sorted(treasures) != list(range(1, len(self.treasure_values) + 1)):
            raise ValueError("map treasures must be numbered 1..n with one value each")
        if self.grid.cells[self.grid.start[0]][self.grid.start[1]] != OCEAN:
            raise ValueError("start cell must be ocean")
        return self

    @classmethod
    def from_preset(cls, preset: str, grid: DstMap | None = None) -> "DstConfig":
        kwargs = {"preset": preset, "treasure_values": TREASURE_PRESETS[preset]}
        if grid is not None:
            kwargs["grid"] = grid
        return cls(**kwargs)


class DeepSeaTreasure(Env):
    """Submarine on a grid; objectives are (treasure, time).

    State is (row, col). Every step costs -1 on the time objective, including
    the step that reaches a treasure or enters a cliff.
    """

    def __init__(self, config: DstConfig | None = None, max_episode_len: int = 50) -> None:
        self.config = config or DstConfig()
        self._cells = np.array(self.config.grid.cells, dtype=np.int64)
        self.descriptor = EnvDescriptor(
            name=f"dst-{self.config.preset}",
            m=2,
            state_dim=2,
            action_space=Discrete(4),
            max_episode_len=max_episode_len,
            initial_state=f"start cell {self.config.grid.start}",
            objective_names=("treasure", "time"),
        )

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.array(self.config.grid.start, dtype=np.float64)

    def step(self, state, action, rng):
        a = self.descriptor.action_space.validate(action)
        rows, cols = self._cells.shape
        pos = np.asarray(state, dtype=np.int64)
        target = np.clip(pos + MOVES[a], [0, 0], [rows - 1, cols - 1])
        cell = self._cells[target[0], target[1]]
        if cell == CLIFF:
            return pos.astype(np.float64), np.array([0.0, -1.0]), True
        if cell > 0:
            return target.astype(np.float64), np.array([float(self.config.treasure_values[cell - 1]), -1.0]), True
        return target.astype(np.float64), np.array([0.0, -1.0]), False

    def observe(self, state) -> np.ndarray:
        rows, cols = self._cells.shape
        return np.asarray(state, dtype=np.float64) / np.array([rows - 1, cols - 1])

    def shortest_paths(self) -> dict[int, int]:
        """Fewest steps from the start to each treasure; treasures and cliffs are never passed through."""
        rows, cols = self._cells.shape
        start = self.config.grid.start
        dist = {start: 0}
        found: dict[int, int] = {}
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in MOVES:
                nr, nc = r + dr, c + dc
                if not (0 <= nr < rows and 0 <= nc < cols) or (nr, nc) in dist:
                    continue
                cell = self._cells[nr, nc]
                if cell == CLIFF:
                    continue
                dist[(nr, nc)] = dist[(r, c)] + 1
                if cell > 0:
                    found[int(cell)] = dist[(nr, nc)]
                else:
                    queue.append((nr, nc))
        return found


def dst_exact_pf(config: DstConfig, gamma: float) -> ParetoArchive:
    """Returns of the shortest path to every treasure, filtered for dominance.

    Payloads are the treasure indices.
    """
    if not 0 < gamma <= 1:
        raise ContractViolation("gamma must lie in (0, 1]")
    lengths = DeepSeaTreasure(config).shortest_paths()
    points, payloads = [], []
    for n in sorted(lengths):
        steps = lengths[n]
        time = -float(np.sum(gamma ** np.arange(steps)))
        points.append([config.treasure_values[n - 1] * gamma ** (steps - 1), time])
        payloads.append(n)
    return ParetoArchive.from_points(points, payloads)
