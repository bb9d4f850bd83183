from pathlib import Path
from typing import Any, Callable

from lcmopg.envs.base import Box, Discrete, Env, EnvDescriptor, env_reset, env_step
from lcmopg.envs.dst import DeepSeaTreasure, DstConfig, dst_exact_pf
from lcmopg.envs.ftn import FruitTreeNavigation, FtnConfig, ftn_generate_leaves
from lcmopg.envs.lqg import LinearQuadraticGaussian, LqgConfig
from lcmopg.envs.minecart import Minecart, MinecartConfig, minecart_full_load_points
from lcmopg.errors import ContractViolation


def _dst(preset: str) -> Callable[..., Env]:
    def build(max_episode_len: int | None = None) -> Env:
        return DeepSeaTreasure(DstConfig.from_preset(preset), max_episode_len=max_episode_len or 50)

    return build


def _ftn(depth: int) -> Callable[..., Env]:
    def build(max_episode_len: int | None = None, leaf_seed: int = 0, data_dir: Path | None = None) -> Env:
        # episodes always last exactly `depth` steps; the cap is ignored
        return FruitTreeNavigation(FtnConfig.load(depth, seed=leaf_seed, data_dir=data_dir))

    return build


def _lqg(m: int, sigma: float = 0.0) -> Callable[..., Env]:
    def build(max_episode_len: int | None = None, **params: Any) -> Env:
        params.setdefault("sigma", sigma)
        if max_episode_len is not None:
            params.setdefault("horizon", max_episode_len)
        return LinearQuadraticGaussian(LqgConfig(m=m, **params))

    return build


def _minecart(max_episode_len: int | None = None, config_path: Path | None = None) -> Env:
    return Minecart(MinecartConfig.load(config_path), max_episode_len=max_episode_len)


ENV_BUILDERS: dict[str, Callable[..., Env]] = {
    "dst-convex": _dst("convex"),
    "dst-original": _dst("original"),
    "ftn5": _ftn(5),
    "ftn6": _ftn(6),
    "ftn7": _ftn(7),
    "lqg2d": _lqg(2),
    "lqg3d": _lqg(3),
    "lqg2d-noisy": _lqg(2, sigma=1.0),
    "minecart": _minecart,
}

ENV_IDS = tuple(ENV_BUILDERS)


def make_env(env_id: str, max_episode_len: int | None = None, **params: Any) -> Env:
    try:
        builder = ENV_BUILDERS[env_id]
    except KeyError:
        raise ContractViolation(f"Unknown environment {env_id!r}; expected one of {', '.join(ENV_IDS)}") from None
    return builder(max_episode_len=max_episode_len, **params)


__all__ = [
    "Box",
    "Discrete",
    "Env",
    "EnvDescriptor",
    "ENV_IDS",
    "DeepSeaTreasure",
    "DstConfig",
    "FruitTreeNavigation",
    "FtnConfig",
    "LinearQuadraticGaussian",
    "LqgConfig",
    "Minecart",
    "MinecartConfig",
    "dst_exact_pf",
    "env_reset",
    "env_step",
    "ftn_generate_leaves",
    "make_env",
    "minecart_full_load_points",
]
