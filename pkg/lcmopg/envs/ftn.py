import csv
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from lcmopg import logger
from lcmopg.config import get_settings
from lcmopg.envs.base import Discrete, EnvDescriptor, Env
from lcmopg.errors import ContractViolation
from lcmopg.objective_space import pareto_filter

FTN_OBJECTIVES = 6
LEAF_RADIUS = 10.0


def ftn_generate_leaves(d: int, rng: np.random.Generator, radius: float = LEAF_RADIUS) -> np.ndarray:
    """2^d distinct points on the positive orthant of the 6-sphere of the given radius.

    Equal norms make every pair mutually nondominated.
    """
    if d < 1:
        raise ContractViolation("depth must be >= 1")
    n = 2**d
    leaves = np.empty((0, FTN_OBJECTIVES))
    while leaves.shape[0] < n:
        draw = np.abs(rng.standard_normal((n - leaves.shape[0], FTN_OBJECTIVES)))
        norms = np.linalg.norm(draw, axis=1, keepdims=True)
        draw = draw[norms[:, 0] > 0] / norms[norms[:, 0] > 0] * radius
        leaves = np.unique(np.vstack([leaves, draw]), axis=0)
    return rng.permutation(leaves[:n])


def leaf_table_path(d: int, data_dir: Path | None = None) -> Path:
    return (data_dir or get_settings().get_data_dir_resolved()) / "ftn" / f"ftn_d{d}.csv"


def read_leaf_table(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as f:
        rows = [row for row in csv.reader(f) if row and not row[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def write_leaf_table(path: Path, leaves: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"reward_{j}" for j in range(leaves.shape[1])])
        writer.writerows([[repr(float(v)) for v in row] for row in leaves])
    tmp.replace(path)
    return path


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


class FtnConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    depth: int = Field(default=5, ge=1, le=10)
    leaf_rewards: tuple[tuple[float, ...], ...]
    source: str = "generated"

    @field_validator("leaf_rewards")
    @classmethod
    def _six_objectives(cls, v):
        if any(len(row) != FTN_OBJECTIVES for row in v):
            raise ValueError(f"every leaf reward needs {FTN_OBJECTIVES} components")
        return v

    @model_validator(mode="after")
    def _check(self) -> "FtnConfig":
        if len(self.leaf_rewards) != 2**self.depth:
            raise ValueError(f"depth {self.depth} needs {2**self.depth} leaves, got {len(self.leaf_rewards)}")
        if len(pareto_filter(np.array(self.leaf_rewards))) != len(self.leaf_rewards):
            raise ValueError("every leaf reward must be nondominated")
        return self

    @classmethod
    def load(cls, depth: int, seed: int = 0, data_dir: Path | None = None) -> "FtnConfig":
        """Leaf table from data/ftn/ftn_d{depth}.csv when present, else the sphere generator."""
        path = leaf_table_path(depth, data_dir)
        if path.is_file():
            leaves = read_leaf_table(path)
            source = str(path)
        else:
            logger.warning("No FTN leaf table at %s; generating %d leaves with seed %d", path, 2**depth, seed)
            leaves = ftn_generate_leaves(depth, np.random.default_rng(seed))
            source = f"generated(seed={seed})"
        return cls(depth=depth, leaf_rewards=tuple(tuple(r) for r in leaves.tolist()), source=source)


class FruitTreeNavigation(Env):
    """Binary tree of depth d. State is the node (i, j); action 0 goes left, 1 right."""

    def __init__(self, config: FtnConfig) -> None:
        self.config = config
        self._leaves = np.array(config.leaf_rewards, dtype=np.float64)
        self.descriptor = EnvDescriptor(
            name=f"ftn{config.depth}",
            m=FTN_OBJECTIVES,
            state_dim=2,
            action_space=Discrete(2),
            max_episode_len=config.depth,
            initial_state="root (0, 0)",
            objective_names=tuple(f"fruit_{j}" for j in range(FTN_OBJECTIVES)),
        )

    @property
    def leaves(self) -> np.ndarray:
        return self._leaves.copy()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(2)

    def step(self, state, action, rng):
        a = self.descriptor.action_space.validate(action)
        i, j = int(state[0]), int(state[1])
        if i >= self.config.depth:
            raise ContractViolation("step called on a leaf node")
        nxt = np.array([i + 1, 2 * j + a], dtype=np.float64)
        if i + 1 == self.config.depth:
            return nxt, self._leaves[2 * j + a].copy(), True
        return nxt, np.zeros(FTN_OBJECTIVES), False

    def observe(self, state) -> np.ndarray:
        i, j = float(state[0]), float(state[1])
        return np.array([i / self.config.depth, j / 2**i])
