"""Latent-conditioned policy network and rollouts.

The state tower and the cosine-embedded latent tower are single affine layers
of equal width; their outputs are multiplied elementwise and fed to a trunk
of ``depth`` layers ending in a Beta or categorical head.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from lcmopg import logger
from lcmopg.envs.base import Box, Discrete, Env, EnvDescriptor
from lcmopg.errors import CheckpointError, ContractViolation, NonFiniteError
from lcmopg.neural import (
    DTYPE,
    BetaHeadOutput,
    CategoricalHeadOutput,
    Mlp,
    beta_head_from_raw,
    beta_log_prob,
    beta_mean,
    beta_sample,
    beta_sample_rows,
    categorical_argmax,
    categorical_log_prob,
    categorical_sample,
    categorical_sample_rows,
    check_finite,
    cosine_embed,
    init_normal_,
    load_checkpoint,
    make_generator,
    save_checkpoint,
    trunk_widths,
)

Mode = Literal["stochastic", "deterministic"]

# stream tags keep training, monitoring and evaluation draws apart
TRAIN_STREAM, MONITOR_STREAM, EVAL_STREAM = 0, 1, 2


class PolicyConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    state_dim: int = Field(ge=1)
    head: Literal["categorical", "beta"]
    # number of discrete actions, or dimension of the action box
    action_dim: int = Field(ge=1)
    action_lower: float | None = None
    action_upper: float | None = None
    d_lat: int = Field(ge=1)
    K: int = Field(default=10, ge=1)
    width: int = Field(ge=1)
    depth: int = Field(ge=1)
    # cosine-embedding width per state coordinate; None feeds the raw features
    state_embedding: tuple[int, ...] | None = None
    beta_offset: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def _check(self) -> "PolicyConfig":
        if self.head == "beta" and (self.action_lower is None or self.action_upper is None):
            raise ValueError("a beta head needs action bounds")
        if self.state_embedding is not None:
            if len(self.state_embedding) != self.state_dim:
                raise ValueError("state_embedding needs one width per state coordinate")
            if any(e < 1 for e in self.state_embedding):
                raise ValueError("state_embedding widths must be >= 1")
        return self

    @classmethod
    def for_env(
        cls,
        descriptor: EnvDescriptor,
        d_lat: int,
        width: int,
        depth: int,
        K: int = 10,
        state_embedding: tuple[int, ...] | None = None,
    ) -> "PolicyConfig":
        if state_embedding is not None and not descriptor.unit_observations:
            raise ContractViolation(f"{descriptor.name} observations are not in [0, 1]; state embedding is unavailable")
        space = descriptor.action_space
        if isinstance(space, Discrete):
            return cls(state_dim=descriptor.state_dim, head="categorical", action_dim=space.n, d_lat=d_lat,
                       K=K, width=width, depth=depth, state_embedding=state_embedding)
        return cls(state_dim=descriptor.state_dim, head="beta", action_dim=space.dim, action_lower=space.lower,
                   action_upper=space.upper, d_lat=d_lat, K=K, width=width, depth=depth,
                   state_embedding=state_embedding)

    @property
    def box(self) -> Box | None:
        if self.head != "beta":
            return None
        return Box(self.action_dim, self.action_lower, self.action_upper)


class LatentConditionedPolicy(nn.Module):
    def __init__(self, config: PolicyConfig, generator: torch.Generator | None = None) -> None:
        super().__init__()
        self.config = config
        state_in = sum(config.state_embedding) if config.state_embedding else config.state_dim
        head_out = config.action_dim if config.head == "categorical" else 2 * config.action_dim
        self.state_tower = Mlp([state_in, config.width], ["selu"])
        self.latent_tower = Mlp([config.K * config.d_lat, config.width], ["tanh"])
        self.trunk = Mlp(*trunk_widths(config.width, config.width, config.depth, head_out))
        init_normal_(self, generator or make_generator(0))

    def state_features(self, observations: torch.Tensor) -> torch.Tensor:
        if not self.config.state_embedding:
            return observations
        parts = [cosine_embed(observations[..., j : j + 1], e) for j, e in enumerate(self.config.state_embedding)]
        return torch.cat(parts, dim=-1)

    def forward(self, observations, latents) -> torch.Tensor:
        obs = torch.as_tensor(observations, dtype=DTYPE)
        lat = torch.as_tensor(latents, dtype=DTYPE)
        if obs.shape[-1] != self.config.state_dim:
            raise ContractViolation(f"Observation width {obs.shape[-1]} != policy state_dim {self.config.state_dim}")
        if lat.shape[-1] != self.config.d_lat:
            raise ContractViolation(f"Latent width {lat.shape[-1]} != policy d_lat {self.config.d_lat}")
        mixed = self.state_tower(self.state_features(obs)) * self.latent_tower(cosine_embed(lat, self.config.K))
        return self.trunk(mixed)

    def head(self, observations, latents) -> BetaHeadOutput | CategoricalHeadOutput:
        raw = self(observations, latents)
        if self.config.head == "categorical":
            return CategoricalHeadOutput(logits=raw)
        return beta_head_from_raw(raw, offset=self.config.beta_offset)

    def log_prob(self, observations, latents, actions) -> torch.Tensor:
        """Log density (Beta, over the unit-interval action) or log mass (categorical)."""
        head = self.head(observations, latents)
        if isinstance(head, CategoricalHeadOutput):
            return categorical_log_prob(head, actions)
        return beta_log_prob(head, actions)

    def to_env_action(self, action):
        box = self.config.box
        if box is None:
            return int(action)
        return box.from_unit(action)


def _check_head(head: BetaHeadOutput | CategoricalHeadOutput) -> None:
    if isinstance(head, CategoricalHeadOutput):
        check_finite(head.logits, "policy logits")
    else:
        check_finite(head.alpha, "beta alpha")
        check_finite(head.beta, "beta beta")


def sample_latent(rng: np.random.Generator, d_lat: int) -> np.ndarray:
    return rng.random(d_lat)


def sample_latents(rng: np.random.Generator, n: int, d_lat: int) -> np.ndarray:
    return rng.random((n, d_lat))


def latent_rng(seed: int, stream: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, iteration, 0, 0])


def episode_rngs(seed: int, stream: int, iteration: int, n: int) -> list[np.random.Generator]:
    """Independent generators for episodes 0..n-1 of one iteration."""
    return [np.random.default_rng([seed, stream, iteration, 1, i]) for i in range(n)]


@torch.no_grad()
def act_stochastic(policy: LatentConditionedPolicy, observation, latent, rng: np.random.Generator):
    """Sample one action; returns (env-space action, log prob of the head-space action)."""
    head = policy.head(np.asarray(observation)[None, :], np.asarray(latent)[None, :])
    _check_head(head)
    if isinstance(head, CategoricalHeadOutput):
        a = categorical_sample(head, rng)
        logp = categorical_log_prob(head, a)
    else:
        a = beta_sample(head, rng)
        logp = beta_log_prob(head, a)
    return policy.to_env_action(a[0]), float(logp[0])


@torch.no_grad()
def act_deterministic(policy: LatentConditionedPolicy, observation, latent):
    head = policy.head(np.asarray(observation)[None, :], np.asarray(latent)[None, :])
    _check_head(head)
    if isinstance(head, CategoricalHeadOutput):
        return int(categorical_argmax(head)[0])
    return policy.to_env_action(beta_mean(head).numpy()[0])


@dataclass
class Trajectory:
    """One episode under a fixed latent.

    ``observations`` are the policy features of each visited state and
    ``actions`` are head-space actions (indices, or points of the unit box).
    """

    latent: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    return_: np.ndarray
    gamma: float
    env_actions: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def transitions(self) -> list[tuple[np.ndarray, object, np.ndarray]]:
        return list(zip(self.observations, self.env_actions, self.rewards))

    def discounted_return(self) -> np.ndarray:
        if self.length == 0:
            return np.zeros(self.return_.shape[0])
        return (self.gamma ** np.arange(self.length)) @ self.rewards


def _rollout_chunk(
    policy: LatentConditionedPolicy,
    env: Env,
    latents: np.ndarray,
    gamma: float,
    max_steps: int,
    rngs: list[np.random.Generator],
    mode: Mode,
) -> list[Trajectory]:
    n = latents.shape[0]
    m = env.descriptor.m
    states = [env.reset(rng) for rng in rngs]
    obs_log: list[list[np.ndarray]] = [[] for _ in range(n)]
    act_log: list[list] = [[] for _ in range(n)]
    env_act_log: list[list] = [[] for _ in range(n)]
    rew_log: list[list[np.ndarray]] = [[] for _ in range(n)]
    returns = np.zeros((n, m))
    active = list(range(n))
    for t in range(max_steps):
        if not active:
            break
        obs = np.stack([env.observe(states[i]) for i in active])
        with torch.no_grad():
            head = policy.head(obs, latents[active])
        _check_head(head)
        if mode == "deterministic":
            if isinstance(head, CategoricalHeadOutput):
                actions = categorical_argmax(head)
            else:
                actions = beta_mean(head).numpy()
        elif isinstance(head, CategoricalHeadOutput):
            actions = categorical_sample_rows(head, [rngs[i] for i in active])
        else:
            actions = beta_sample_rows(head, [rngs[i] for i in active])
        still = []
        for row, i in enumerate(active):
            env_action = policy.to_env_action(actions[row])
            states[i], reward, done = env.step(states[i], env_action, rngs[i])
            obs_log[i].append(obs[row])
            act_log[i].append(actions[row])
            env_act_log[i].append(env_action)
            rew_log[i].append(reward)
            returns[i] += gamma**t * reward
            if not done:
                still.append(i)
        active = still
    obs_dim = env.descriptor.state_dim
    act_shape = () if policy.config.head == "categorical" else (policy.config.action_dim,)
    act_dtype = np.int64 if policy.config.head == "categorical" else np.float64
    return [
        Trajectory(
            latent=latents[i].copy(),
            observations=np.array(obs_log[i]).reshape(-1, obs_dim),
            actions=np.array(act_log[i], dtype=act_dtype).reshape((-1,) + act_shape),
            rewards=np.array(rew_log[i]).reshape(-1, m),
            return_=returns[i],
            gamma=gamma,
            env_actions=env_act_log[i],
        )
        for i in range(n)
    ]


def rollout_batch(
    policy: LatentConditionedPolicy,
    env: Env,
    latents: np.ndarray,
    gamma: float,
    max_steps: int,
    rngs: list[np.random.Generator],
    mode: Mode = "stochastic",
    workers: int = 1,
) -> list[Trajectory]:
    """Run one episode per latent, stepping all episodes of a chunk in lockstep.

    Episode i draws actions and environment noise from rngs[i] only, so the
    result does not depend on how episodes are split across workers.
    """
    if not 0 < gamma <= 1:
        raise ContractViolation("gamma must lie in (0, 1]")
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if len(rngs) != latents.shape[0]:
        raise ContractViolation("One RNG per latent is required")
    n = latents.shape[0]
    if workers <= 1 or n < 2 * workers:
        return _rollout_chunk(policy, env, latents, gamma, max_steps, rngs, mode)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_rollout_chunk, policy, env, latents[lo:hi], gamma, max_steps, rngs[lo:hi], mode)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        trajectories = [traj for f in futures for traj in f.result()]
    logger.debug("Rolled out %d episodes on %d workers", n, workers)
    return trajectories


def rollout(
    policy: LatentConditionedPolicy,
    env: Env,
    latent,
    gamma: float,
    max_steps: int,
    rng: np.random.Generator,
    mode: Mode = "stochastic",
) -> Trajectory:
    return rollout_batch(policy, env, np.asarray(latent)[None, :], gamma, max_steps, [rng], mode)[0]


def policy_loss_and_grad(
    policy: LatentConditionedPolicy,
    batch: list[Trajectory],
    weights,
) -> tuple[float, list[torch.Tensor]]:
    """L = -sum_i sum_t w_it log pi(a_t | s_t, c_i) and its gradient w.r.t. every parameter.

    ``weights`` is either one weight per trajectory or, for per-transition
    credit, a sequence holding one weight array per trajectory.
    """
    params = list(policy.parameters())
    if len(weights) != len(batch):
        raise ContractViolation("One weight entry per trajectory is required")
    per_step = [
        np.full(traj.length, float(w)) if np.ndim(w) == 0 else np.asarray(w, dtype=np.float64)
        for traj, w in zip(batch, weights)
    ]
    for traj, w in zip(batch, per_step):
        if w.shape != (traj.length,):
            raise ContractViolation(f"Per-transition weights of shape {w.shape} for a trajectory of length {traj.length}")
        if not np.all(np.isfinite(w)):
            raise NonFiniteError("Non-finite policy weights", {"weights": w.tolist()})
    keep = [(traj, w) for traj, w in zip(batch, per_step) if traj.length and np.any(w != 0)]
    if not keep:
        return 0.0, [torch.zeros_like(p) for p in params]
    obs = np.concatenate([traj.observations for traj, _ in keep])
    lat = np.concatenate([np.repeat(traj.latent[None, :], traj.length, axis=0) for traj, _ in keep])
    acts = np.concatenate([traj.actions for traj, _ in keep])
    w = torch.as_tensor(np.concatenate([w for _, w in keep]), dtype=DTYPE)
    logp = policy.log_prob(obs, lat, acts)
    loss = -(w * logp).sum()
    if not torch.isfinite(loss):
        raise NonFiniteError("Non-finite policy loss", {"loss": loss.detach().item(), "transitions": int(w.shape[0])})
    grads = torch.autograd.grad(loss, params)
    return loss.detach().item(), list(grads)


def save_policy(path: Path, policy: LatentConditionedPolicy, metadata: dict | None = None) -> Path:
    config = {"policy": policy.config.model_dump(mode="json"), **(metadata or {})}
    return save_checkpoint(path, "policy", config, policy.state_dict())


def load_policy(path: Path) -> tuple[LatentConditionedPolicy, dict]:
    payload = load_checkpoint(path, "policy")
    config = dict(payload["config"])
    policy = LatentConditionedPolicy(PolicyConfig(**config.pop("policy")))
    try:
        policy.load_state_dict(payload["state_dict"])
    except RuntimeError as e:
        raise CheckpointError(f"Checkpoint {path} does not match its recorded architecture: {e}") from e
    return policy, config


def check_policy_matches_env(policy: LatentConditionedPolicy, descriptor: EnvDescriptor) -> None:
    expected = PolicyConfig.for_env(
        descriptor, policy.config.d_lat, policy.config.width, policy.config.depth, policy.config.K,
        policy.config.state_embedding if descriptor.unit_observations else None,
    )
    for name in ("state_dim", "head", "action_dim", "action_lower", "action_upper"):
        if getattr(expected, name) != getattr(policy.config, name):
            raise CheckpointError(
                f"Policy {name}={getattr(policy.config, name)!r} does not fit {descriptor.name} "
                f"({name}={getattr(expected, name)!r})"
            )
