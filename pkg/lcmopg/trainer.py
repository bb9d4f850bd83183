"""LC-MOPG and LC-MOPG-V training loops, plus the deterministic evaluation protocol."""
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from lcmopg import logger
from lcmopg.config import get_settings
from lcmopg.envs.base import Env
from lcmopg.errors import ContractViolation, DivergenceError, NonFiniteError
from lcmopg.neural import DTYPE, AdamOptimizer, Mlp, check_finite, init_normal_, make_generator, trunk_widths
from lcmopg.objective_space import ParetoArchive, hypervolume_clipped, pareto_filter
from lcmopg.policy import (
    EVAL_STREAM,
    MONITOR_STREAM,
    TRAIN_STREAM,
    LatentConditionedPolicy,
    PolicyConfig,
    Trajectory,
    episode_rngs,
    latent_rng,
    policy_loss_and_grad,
    rollout_batch,
    sample_latents,
    save_policy,
)
from lcmopg.scoring import AvgMode, NormalizationMode, score_batch

Variant = Literal["pg", "pg-v"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    variant: Variant = "pg"
    d_lat: int = Field(default=3, ge=1)
    n_lat_train: int = Field(default=400, ge=2)
    n_lat_test: int = Field(default=400, ge=1)
    K: int = Field(default=10, ge=1)
    k: int = Field(default=10, ge=1)
    beta: float = Field(default=4.0, ge=0.0)
    gamma: float = Field(default=0.99, gt=0.0, le=1.0)
    normalization: NormalizationMode = NormalizationMode.MAXMIN
    avg: AvgMode | None = None
    eps: float = Field(default=1e-8, gt=0.0)
    # None picks the variant's rule: clipped for pg, unclipped for pg-v
    clip: bool | None = None
    iterations: int = Field(default=30, ge=0)
    width: int = Field(default=36, ge=1)
    depth: int = Field(default=3, ge=1)
    state_embedding: tuple[int, ...] | None = None
    max_episode_len_train: int | None = Field(default=None, ge=0)
    max_episode_len_test: int | None = Field(default=None, ge=0)
    lr: float = Field(default=1e-3, gt=0.0)
    seed: int = Field(default=0, ge=0)
    test_episodes_per_latent: int = Field(default=1, ge=1)
    final_episodes_per_latent: int = Field(default=1, ge=1)
    eval_interval: int = Field(default=1, ge=1)
    record_better_half: bool = False
    workers: int | None = Field(default=None, ge=1)
    value_epochs: int = Field(default=1, ge=1)
    value_batch_size: int = Field(default=64, ge=1)
    value_width: int = Field(default=24, ge=1)
    value_depth: int = Field(default=3, ge=1)
    value_lr: float = Field(default=1e-3, gt=0.0)

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.k >= self.n_lat_train:
            raise ValueError(f"k={self.k} must be smaller than n_lat_train={self.n_lat_train}")
        return self

    @property
    def clip_scores(self) -> bool:
        return self.variant == "pg" if self.clip is None else self.clip

    @property
    def worker_count(self) -> int:
        return self.workers or get_settings().worker_count


@dataclass
class IterationRecord:
    iteration: int
    test_hv: float
    best_hv: float
    loss: float
    mean_abs_F: float
    mean_episode_length: float
    max_episode_length: int
    seconds: float


@dataclass
class TrainHistory:
    rows: list[IterationRecord] = field(default_factory=list)
    best_hv: float = float("-inf")
    best_iteration: int | None = None
    best_state: dict[str, torch.Tensor] | None = None
    # (iteration, raw returns of the trajectories with a positive score)
    better_half: list[tuple[int, np.ndarray]] = field(default_factory=list)


class RolloutBuffer:
    """Transitions of the current iteration, each tagged with its trajectory's final score."""

    def __init__(self) -> None:
        self.clear()

    def clear(self) -> None:
        self.observations: np.ndarray | None = None
        self.actions: np.ndarray | None = None
        self.scores = np.empty(0)
        self.trajectory_ids = np.empty(0, dtype=np.int64)
        self.iterations = np.empty(0, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.scores.shape[0])

    def add(self, trajectories: list[Trajectory], final: np.ndarray, iteration: int) -> None:
        if len(trajectories) != len(final):
            raise ContractViolation("One final score per trajectory is required")
        kept = [(i, t) for i, t in enumerate(trajectories) if t.length]
        if not kept:
            return
        obs = np.concatenate([t.observations for _, t in kept])
        acts = np.concatenate([t.actions for _, t in kept])
        scores = np.concatenate([np.full(t.length, float(final[i])) for i, t in kept])
        ids = np.concatenate([np.full(t.length, i, dtype=np.int64) for i, t in kept])
        self.observations = obs if self.observations is None else np.concatenate([self.observations, obs])
        self.actions = acts if self.actions is None else np.concatenate([self.actions, acts])
        self.scores = np.concatenate([self.scores, scores])
        self.trajectory_ids = np.concatenate([self.trajectory_ids, ids])
        self.iterations = np.concatenate([self.iterations, np.full(len(ids), iteration, dtype=np.int64)])

    def minibatches(self, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
        order = rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            yield order[start : start + batch_size]


class GeneralizedValueNets(nn.Module):
    """Q(s, a) and V(s) regressed on trajectory scores; neither sees the latent."""

    def __init__(
        self,
        policy_config: PolicyConfig,
        width: int,
        depth: int,
        lr: float = 1e-3,
        generator: torch.Generator | None = None,
    ) -> None:
        super().__init__()
        self.policy_config = policy_config
        self.action_features = policy_config.action_dim
        state_dim = policy_config.state_dim
        # `depth` hidden layers, then a scalar output
        self.q = Mlp(*trunk_widths(state_dim + self.action_features, width, depth + 1, 1))
        self.v = Mlp(*trunk_widths(state_dim, width, depth + 1, 1))
        init_normal_(self, generator or make_generator(1))
        self.q_optimizer = AdamOptimizer(self.q.parameters(), lr=lr)
        self.v_optimizer = AdamOptimizer(self.v.parameters(), lr=lr)

    def _actions(self, actions) -> torch.Tensor:
        if self.policy_config.head == "categorical":
            idx = torch.as_tensor(actions, dtype=torch.long)
            return nn.functional.one_hot(idx, self.action_features).to(DTYPE)
        return torch.as_tensor(actions, dtype=DTYPE).reshape(-1, self.action_features)

    def q_values(self, observations, actions) -> torch.Tensor:
        obs = torch.as_tensor(observations, dtype=DTYPE)
        return self.q(torch.cat([obs, self._actions(actions)], dim=-1)).squeeze(-1)

    def v_values(self, observations) -> torch.Tensor:
        return self.v(torch.as_tensor(observations, dtype=DTYPE)).squeeze(-1)

    def fit(self, buffer: RolloutBuffer, epochs: int, batch_size: int, rng: np.random.Generator) -> tuple[float, float]:
        """Minibatch regression of Q and V onto the stored scores; returns the mean losses."""
        if len(buffer) == 0:
            return 0.0, 0.0
        q_losses, v_losses = [], []
        for _ in range(epochs):
            for idx in buffer.minibatches(batch_size, rng):
                target = torch.as_tensor(buffer.scores[idx], dtype=DTYPE)
                q_loss = ((self.q_values(buffer.observations[idx], buffer.actions[idx]) - target) ** 2).mean()
                v_loss = ((self.v_values(buffer.observations[idx]) - target) ** 2).mean()
                check_finite(q_loss, "Q regression loss")
                check_finite(v_loss, "V regression loss")
                self.q_optimizer.zero_grad()
                self.v_optimizer.zero_grad()
                (q_loss + v_loss).backward()
                self.q_optimizer.step()
                self.v_optimizer.step()
                q_losses.append(q_loss.detach().item())
                v_losses.append(v_loss.detach().item())
        return float(np.mean(q_losses)), float(np.mean(v_losses))

    @torch.no_grad()
    def corrected_scores(self, trajectory: Trajectory) -> np.ndarray:
        """Per-transition weights Q(s, a) - V(s) along one trajectory."""
        if trajectory.length == 0:
            return np.zeros(0)
        q = self.q_values(trajectory.observations, trajectory.actions)
        v = self.v_values(trajectory.observations)
        return (q - v).numpy()


def evaluate(
    policy: LatentConditionedPolicy,
    env_factory: Callable[[], Env],
    n_lat_test: int,
    episodes_per_latent: int,
    gamma: float,
    ref,
    rng: np.random.Generator,
    max_steps: int | None = None,
    workers: int = 1,
    hv_divisor: float = 1.0,
) -> tuple[ParetoArchive, float]:
    """Deterministic rollouts for n_lat_test fresh latents; returns the nondominated archive and its HV.

    Payloads are the latents. Points that do not strictly dominate ``ref``
    stay in the archive but add nothing to the HV.
    """
    if n_lat_test < 1 or episodes_per_latent < 1:
        raise ContractViolation("n_lat_test and episodes_per_latent must be >= 1")
    env = env_factory()
    steps = env.descriptor.max_episode_len if max_steps is None else max_steps
    episodes = 1 if env.descriptor.deterministic else episodes_per_latent
    latents = sample_latents(rng, n_lat_test, policy.config.d_lat)
    seeds = rng.integers(0, 2**63 - 1, size=n_lat_test * episodes)
    trajs = rollout_batch(
        policy,
        env,
        np.repeat(latents, episodes, axis=0),
        gamma,
        steps,
        [np.random.default_rng(int(s)) for s in seeds],
        mode="deterministic",
        workers=workers,
    )
    returns = np.stack([t.return_ for t in trajs]).reshape(n_lat_test, episodes, -1).mean(axis=1)
    keep = pareto_filter(returns)
    archive = ParetoArchive(points=returns[keep].copy(), payloads=[latents[i].copy() for i in keep])
    hv = hypervolume_clipped(archive.points, ref) / hv_divisor
    return archive, hv


def _all_finite(module: nn.Module) -> bool:
    return all(bool(torch.all(torch.isfinite(p))) for p in module.parameters())


def _episode_cap(limit: int | None, env: Env) -> int:
    """Configured step cap; None falls back to the environment's, an explicit 0 stays 0."""
    return env.descriptor.max_episode_len if limit is None else limit


def _snapshot(module: nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def _diverged(
    policy: LatentConditionedPolicy,
    last_finite: dict[str, torch.Tensor],
    iteration: int,
    run_dir: Path | None,
    cause: Exception | None,
) -> DivergenceError:
    policy.load_state_dict(last_finite)
    path = None
    if run_dir is not None:
        path = save_policy(Path(run_dir) / "last_finite.pt", policy, {"iteration": iteration - 1})
    diagnostic = getattr(cause, "diagnostic", {}) if cause is not None else {}
    logger.error("Training diverged at iteration %d (%s); last finite parameters at %s", iteration, cause, path)
    return DivergenceError(
        f"Training diverged at iteration {iteration}: {cause or 'non-finite parameters'}",
        iteration=iteration,
        checkpoint_path=path,
        diagnostic=diagnostic,
    )


def _train(
    config: TrainConfig,
    env_factory: Callable[[], Env],
    ref,
    hv_divisor: float,
    run_dir: Path | None,
    on_iteration: Callable[[IterationRecord], None] | None,
) -> tuple[LatentConditionedPolicy, TrainHistory]:
    env = env_factory()
    policy_config = PolicyConfig.for_env(
        env.descriptor, config.d_lat, config.width, config.depth, config.K, config.state_embedding
    )
    policy = LatentConditionedPolicy(policy_config, make_generator(config.seed))
    optimizer = AdamOptimizer(policy.parameters(), lr=config.lr)
    value_nets = buffer = None
    if config.variant == "pg-v":
        value_nets = GeneralizedValueNets(
            policy_config, config.value_width, config.value_depth, config.value_lr,
            make_generator(config.seed + 1_000_003),
        )
        buffer = RolloutBuffer()
    train_steps = _episode_cap(config.max_episode_len_train, env)
    test_steps = _episode_cap(config.max_episode_len_test, env)
    workers = config.worker_count
    history = TrainHistory()
    logger.info(
        "Training %s on %s: %d iterations, N_lat=%d, d_lat=%d, %d workers",
        config.variant, env.descriptor.name, config.iterations, config.n_lat_train, config.d_lat, workers,
    )

    for it in range(1, config.iterations + 1):
        started = time.perf_counter()
        last_finite = _snapshot(policy)
        try:
            latents = sample_latents(latent_rng(config.seed, TRAIN_STREAM, it), config.n_lat_train, config.d_lat)
            trajs = rollout_batch(
                policy, env, latents, config.gamma, train_steps,
                episode_rngs(config.seed, TRAIN_STREAM, it, config.n_lat_train), "stochastic", workers,
            )
            returns = np.stack([t.return_ for t in trajs])
            scores = score_batch(
                returns, config.normalization, config.k, config.beta, config.clip_scores, config.avg, config.eps
            )
            if value_nets is None:
                weights = scores.final
            else:
                buffer.clear()
                buffer.add(trajs, scores.final, it)
                value_nets.fit(
                    buffer, config.value_epochs, config.value_batch_size,
                    np.random.default_rng([config.seed, TRAIN_STREAM, it, 2, 0]),
                )
                weights = [value_nets.corrected_scores(t) for t in trajs]
            loss, grads = policy_loss_and_grad(policy, trajs, weights)
            optimizer.step(grads)
        except NonFiniteError as e:
            raise _diverged(policy, last_finite, it, run_dir, e) from e
        if not _all_finite(policy):
            raise _diverged(policy, last_finite, it, run_dir, None)

        if config.record_better_half:
            history.better_half.append((it, returns[scores.scores > 0].copy()))

        test_hv = float("nan")
        if it % config.eval_interval == 0 or it == config.iterations:
            try:
                _, test_hv = evaluate(
                    policy, lambda: env, config.n_lat_train, config.test_episodes_per_latent, config.gamma, ref,
                    latent_rng(config.seed, MONITOR_STREAM, it), test_steps, workers, hv_divisor,
                )
            except NonFiniteError as e:
                raise _diverged(policy, last_finite, it, run_dir, e) from e
            if test_hv > history.best_hv:
                history.best_hv = test_hv
                history.best_iteration = it
                history.best_state = _snapshot(policy)
                if run_dir is not None:
                    save_policy(
                        Path(run_dir) / "best_policy.pt",
                        policy,
                        {"iteration": it, "test_hv": test_hv, "env": env.descriptor.name, "gamma": config.gamma},
                    )

        lengths = [t.length for t in trajs]
        record = IterationRecord(
            iteration=it,
            test_hv=test_hv,
            best_hv=history.best_hv,
            loss=loss,
            mean_abs_F=float(np.mean(np.abs(scores.final))),
            mean_episode_length=float(np.mean(lengths)),
            max_episode_length=int(np.max(lengths)),
            seconds=time.perf_counter() - started,
        )
        history.rows.append(record)
        logger.info(
            "iter %d: test_hv=%.6g best_hv=%.6g loss=%.6g mean|F|=%.4g len=%.1f/%d (%.2fs)",
            it, record.test_hv, record.best_hv, record.loss, record.mean_abs_F,
            record.mean_episode_length, record.max_episode_length, record.seconds,
        )
        if on_iteration is not None:
            on_iteration(record)
    return policy, history


def train_lcmopg(
    config: TrainConfig,
    env_factory: Callable[[], Env],
    ref,
    hv_divisor: float = 1.0,
    run_dir: Path | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> tuple[LatentConditionedPolicy, TrainHistory]:
    """One REINFORCE-style step per iteration on clipped trajectory scores."""
    if config.variant != "pg":
        raise ContractViolation("train_lcmopg needs variant='pg'")
    return _train(config, env_factory, ref, hv_divisor, run_dir, on_iteration)


def train_lcmopg_v(
    config: TrainConfig,
    env_factory: Callable[[], Env],
    ref,
    hv_divisor: float = 1.0,
    run_dir: Path | None = None,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> tuple[LatentConditionedPolicy, TrainHistory]:
    """Per-transition weights Q(s, a) - V(s) from value nets fit to unclipped scores."""
    if config.variant != "pg-v":
        raise ContractViolation("train_lcmopg_v needs variant='pg-v'")
    return _train(config, env_factory, ref, hv_divisor, run_dir, on_iteration)


def final_evaluation(
    policy: LatentConditionedPolicy,
    config: TrainConfig,
    env_factory: Callable[[], Env],
    ref,
    hv_divisor: float = 1.0,
) -> tuple[ParetoArchive, float]:
    """Evaluation with the larger test population on its own RNG stream."""
    env = env_factory()
    return evaluate(
        policy, lambda: env, config.n_lat_test, config.final_episodes_per_latent, config.gamma, ref,
        latent_rng(config.seed, EVAL_STREAM, 0),
        _episode_cap(config.max_episode_len_test, env), config.worker_count, hv_divisor,
    )
