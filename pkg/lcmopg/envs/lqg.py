import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from lcmopg.envs.base import Box, EnvDescriptor, Env


class LqgConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: int = Field(default=2, ge=2, le=6)
    xi: float = Field(default=0.1, gt=0.0, lt=0.5)
    sigma: float = Field(default=0.0, ge=0.0)
    s0: float = 10.0
    horizon: int = Field(default=30, ge=1)
    action_bound: float = Field(default=15.0, gt=0.0)

    @property
    def initial_state(self) -> np.ndarray:
        return np.full(self.m, self.s0, dtype=np.float64)


def lqg_matrices(m: int, xi: float) -> tuple[np.ndarray, np.ndarray]:
    """Stacks Q[i], R[i] of diagonal matrices: Q_i has xi off its own index and 1-xi on it, R_i the reverse."""
    q = np.full((m, m), xi)
    np.fill_diagonal(q, 1.0 - xi)
    r = np.full((m, m), 1.0 - xi)
    np.fill_diagonal(r, xi)
    eye = np.eye(m)
    return q[:, None, :] * eye[None, :, :], r[:, None, :] * eye[None, :, :]


class LinearQuadraticGaussian(Env):
    """s_next = s + a + sigma*eps and r_i = -s^T Q_i s - a^T R_i a. Internal state is (s, t)."""

    def __init__(self, config: LqgConfig | None = None) -> None:
        self.config = config or LqgConfig()
        self.Q, self.R = lqg_matrices(self.config.m, self.config.xi)
        m = self.config.m
        self.descriptor = EnvDescriptor(
            name=f"lqg{m}d",
            m=m,
            state_dim=m,
            action_space=Box(m, -self.config.action_bound, self.config.action_bound),
            max_episode_len=self.config.horizon,
            initial_state=f"s0 = ({self.config.s0}, ...)",
            objective_names=tuple(f"cost_{i}" for i in range(m)),
            unit_observations=False,
            deterministic=self.config.sigma == 0.0,
        )

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([self.config.initial_state, [0.0]])

    def reward(self, s, a) -> np.ndarray:
        """Vector reward for states and actions with any leading batch axes."""
        return -np.einsum("...j,ijk,...k->...i", s, self.Q, s) - np.einsum("...j,ijk,...k->...i", a, self.R, a)

    def step(self, state, action, rng):
        a = self.descriptor.action_space.validate(action)
        s, t = np.asarray(state[:-1], dtype=np.float64), state[-1]
        reward = self.reward(s, a)
        nxt = s + a
        if self.config.sigma > 0:
            nxt = nxt + self.config.sigma * rng.standard_normal(self.config.m)
        t = t + 1
        return np.concatenate([nxt, [t]]), reward, bool(t >= self.config.horizon)

    def observe(self, state) -> np.ndarray:
        return np.asarray(state[:-1], dtype=np.float64)
