"""Shared environment interface.

Environments are stateless transition functions over explicit state arrays, so
one instance can serve any number of concurrent rollouts. ``state`` is the
full internal state; ``observe`` maps it to the features the policy sees.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from lcmopg.errors import ContractViolation


@dataclass(frozen=True)
class Discrete:
    n: int

    def validate(self, action) -> int:
        a = int(np.asarray(action).reshape(()))
        if not 0 <= a < self.n:
            raise ContractViolation(f"Invalid action index {a} for Discrete({self.n})")
        return a


@dataclass(frozen=True)
class Box:
    dim: int
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.lower) and np.isfinite(self.upper) and self.lower < self.upper):
            raise ContractViolation("Box bounds must be finite with lower < upper")

    def validate(self, action, tol: float = 1e-9) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != self.dim:
            raise ContractViolation(f"Action has dimension {a.shape[0]}, expected {self.dim}")
        if np.any(a < self.lower - tol) or np.any(a > self.upper + tol):
            raise ContractViolation(f"Action {a.tolist()} outside [{self.lower}, {self.upper}]^{self.dim}")
        return np.clip(a, self.lower, self.upper)

    def from_unit(self, u) -> np.ndarray:
        """Affine map from (0, 1)^dim onto the box."""
        return self.lower + (self.upper - self.lower) * np.asarray(u, dtype=np.float64)

    def to_unit(self, a) -> np.ndarray:
        return (np.asarray(a, dtype=np.float64) - self.lower) / (self.upper - self.lower)


@dataclass(frozen=True)
class EnvDescriptor:
    name: str
    m: int
    state_dim: int
    action_space: Discrete | Box
    max_episode_len: int
    initial_state: str
    objective_names: tuple[str, ...] = field(default_factory=tuple)
    # whether observations lie in [0, 1] and may be cosine-embedded
    unit_observations: bool = True
    deterministic: bool = True

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ContractViolation("A multi-objective environment needs m >= 2")


class Env(ABC):
    descriptor: EnvDescriptor

    @abstractmethod
    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    @abstractmethod
    def step(self, state: np.ndarray, action, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, bool]: ...

    @abstractmethod
    def observe(self, state: np.ndarray) -> np.ndarray: ...


def env_reset(env: Env, rng: np.random.Generator) -> np.ndarray:
    return env.reset(rng)


def env_step(env: Env, state: np.ndarray, action, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, bool]:
    return env.step(state, action, rng)
