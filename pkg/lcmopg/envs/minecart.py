import configparser
import itertools
import math
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from lcmopg.config import get_settings
from lcmopg.envs.base import Discrete, EnvDescriptor, Env
from lcmopg.objective_space import pareto_filter

MINE, TURN_LEFT, TURN_RIGHT, ACCELERATE, BRAKE, NOTHING = range(6)
ACTION_NAMES = ("mine", "turn_left", "turn_right", "accelerate", "brake", "nothing")

# indices into the internal state vector
X, Y, SPEED, ANGLE, ORE1, ORE2, DEPARTED = range(7)


class Mine(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    ore1: float = Field(ge=0.0)
    ore2: float = Field(ge=0.0)

    @property
    def load(self) -> float:
        return self.ore1 + self.ore2


class MinecartConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    mines: tuple[Mine, ...]
    capacity: float = Field(default=1.5, gt=0.0)
    home_radius: float = Field(default=0.15, gt=0.0)
    mine_radius: float = Field(default=0.1, gt=0.0)
    frame_skip: int = Field(default=4, ge=1)
    acceleration: float = Field(default=0.0075, gt=0.0)
    brake: float = Field(default=0.015, gt=0.0)
    max_speed: float = Field(default=0.03, gt=0.0)
    friction: float = Field(default=0.02, ge=0.0, lt=1.0)
    rotation_deg: float = Field(default=10.0, gt=0.0)
    initial_angle_deg: float = 45.0
    fuel_idle: float = Field(default=0.005, gt=0.0)
    fuel_accelerate: float = Field(default=0.025, ge=0.0)
    fuel_mine: float = Field(default=0.05, ge=0.0)
    max_episode_len_train: int = Field(default=100, ge=1)
    max_episode_len_test: int = Field(default=1000, ge=1)
    expected_full_load_points: int | None = None

    @model_validator(mode="after")
    def _check(self) -> "MinecartConfig":
        if not self.mines:
            raise ValueError("at least one mine is required")
        for i, mine in enumerate(self.mines, start=1):
            if not (
                self.mine_radius <= mine.x <= 1 - self.mine_radius
                and self.mine_radius <= mine.y <= 1 - self.mine_radius
            ):
                raise ValueError(f"mine{i} must lie inside the unit square")
            if math.hypot(mine.x, mine.y) <= self.home_radius + self.mine_radius:
                raise ValueError(f"mine{i} overlaps the home port")
        return self

    @classmethod
    def load(cls, path: Path | None = None) -> "MinecartConfig":
        path = Path(path or get_settings().get_data_dir_resolved() / "minecart.cfg")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
        values = dict(parser["minecart"])
        mine_sections = sorted((s for s in parser.sections() if s.startswith("mine") and s != "minecart"), key=lambda s: int(s[4:]))
        values["mines"] = tuple(Mine(**dict(parser[s])) for s in mine_sections)
        return cls(**values)


def minecart_full_load_points(config: MinecartConfig, decimals: int = 9) -> np.ndarray:
    """Distinct (ore1, ore2) pairs reachable by mining until the cart is exactly full.

    Whole Mine actions are enumerated per mine while the cart stays below
    capacity; the action that fills it is truncated proportionally.
    """
    loads = [mine.load for mine in config.mines]
    limits = [int(config.capacity // load) if load > 0 else 0 for load in loads]
    yields = np.array([[mine.ore1, mine.ore2] for mine in config.mines])
    points: set[tuple[float, float]] = set()
    for counts in itertools.product(*(range(n + 1) for n in limits)):
        counts_arr = np.array(counts, dtype=np.float64)
        carried = float(counts_arr @ np.array(loads))
        if carried >= config.capacity:
            continue
        base = counts_arr @ yields
        remaining = config.capacity - carried
        for j, load in enumerate(loads):
            if load > 0 and load >= remaining:
                point = base + yields[j] * (remaining / load)
                points.add(tuple(np.round(point, decimals)))
    if not points:
        return np.empty((0, 2))
    arr = np.array(sorted(points))
    return arr[pareto_filter(arr)]


class Minecart(Env):
    """Cart mining two ores; objectives are (ore1 sold, ore2 sold, -fuel).

    Internal state: (x, y, speed, angle_deg, ore1, ore2, departed).
    """

    def __init__(self, config: MinecartConfig | None = None, max_episode_len: int | None = None) -> None:
        self.config = config or MinecartConfig.load()
        self._centers = np.array([[m.x, m.y] for m in self.config.mines])
        self._yields = np.array([[m.ore1, m.ore2] for m in self.config.mines])
        self.descriptor = EnvDescriptor(
            name="minecart",
            m=3,
            state_dim=6,
            action_space=Discrete(6),
            max_episode_len=max_episode_len or self.config.max_episode_len_train,
            initial_state="home corner (0, 0), zero speed and load",
            objective_names=("ore1", "ore2", "fuel"),
        )

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        state = np.zeros(7)
        state[ANGLE] = self.config.initial_angle_deg
        return state

    def _mine_index(self, x: float, y: float) -> int | None:
        d = np.hypot(self._centers[:, 0] - x, self._centers[:, 1] - y)
        i = int(np.argmin(d))
        return i if d[i] <= self.config.mine_radius else None

    def step(self, state, action, rng):
        a = self.descriptor.action_space.validate(action)
        cfg = self.config
        s = np.array(state, dtype=np.float64)
        fuel = cfg.fuel_idle
        if a == ACCELERATE:
            fuel += cfg.fuel_accelerate
        elif a == MINE:
            fuel += cfg.fuel_mine
            i = self._mine_index(s[X], s[Y])
            loaded = s[ORE1] + s[ORE2]
            if i is not None and loaded < cfg.capacity:
                load = self._yields[i].sum()
                if load > 0:
                    take = self._yields[i] * min(1.0, (cfg.capacity - loaded) / load)
                    s[ORE1] += take[0]
                    s[ORE2] += take[1]
        for _ in range(cfg.frame_skip):
            if a == TURN_LEFT:
                s[ANGLE] = (s[ANGLE] - cfg.rotation_deg) % 360.0
            elif a == TURN_RIGHT:
                s[ANGLE] = (s[ANGLE] + cfg.rotation_deg) % 360.0
            elif a == ACCELERATE:
                s[SPEED] = min(s[SPEED] + cfg.acceleration, cfg.max_speed)
            elif a == BRAKE:
                s[SPEED] = max(s[SPEED] - cfg.brake, 0.0)
            s[SPEED] *= 1.0 - cfg.friction
            rad = math.radians(s[ANGLE])
            s[X] = min(max(s[X] + s[SPEED] * math.cos(rad), 0.0), 1.0)
            s[Y] = min(max(s[Y] + s[SPEED] * math.sin(rad), 0.0), 1.0)
            at_home = math.hypot(s[X], s[Y]) <= cfg.home_radius
            if not at_home:
                s[DEPARTED] = 1.0
            elif s[DEPARTED]:
                reward = np.array([s[ORE1], s[ORE2], -fuel])
                s[ORE1] = s[ORE2] = 0.0
                return s, reward, True
        return s, np.array([0.0, 0.0, -fuel]), False

    def observe(self, state) -> np.ndarray:
        cfg = self.config
        return np.array(
            [
                state[X],
                state[Y],
                state[SPEED] / cfg.max_speed,
                (state[ANGLE] % 360.0) / 360.0,
                state[ORE1] / cfg.capacity,
                state[ORE2] / cfg.capacity,
            ]
        )
