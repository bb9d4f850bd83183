"""Named hyperparameter presets.

``published`` holds the published per-environment settings row for row; ``smoke``
shrinks them to something that finishes in seconds.
"""
from typing import Any

from lcmopg.errors import ContractViolation

_DST = {
    "d_lat": 3,
    "n_lat_train": 400,
    "n_lat_test": 400,
    "width": 36,
    "depth": 3,
    "max_episode_len_train": 50,
    "max_episode_len_test": 50,
    "k": 10,
    "beta": 4.0,
    "normalization": "maxmin",
    "iterations": 30,
}

_FTN = {
    "depth": 3,
    "gamma": 0.99,
    "normalization": "maxmin",
    "iterations": 20,
}

_LQG = {
    "depth": 3,
    "max_episode_len_train": 30,
    "max_episode_len_test": 30,
    "k": 3,
    "beta": 10.0,
    "gamma": 0.9,
    "normalization": "robust",
    "value_epochs": 1,
    "value_depth": 3,
}

PUBLISHED: dict[str, dict[str, Any]] = {
    "dst-convex": {**_DST, "gamma": 0.99},
    "dst-original": {**_DST, "gamma": 1.0},
    "ftn5": {**_FTN, "d_lat": 5, "n_lat_train": 300, "n_lat_test": 300, "width": 100, "k": 3, "beta": 5.0,
             "state_embedding": (10, 20)},
    "ftn6": {**_FTN, "d_lat": 7, "n_lat_train": 400, "n_lat_test": 1500, "width": 140, "k": 10, "beta": 10.0,
             "state_embedding": (10, 10)},
    "ftn7": {**_FTN, "d_lat": 7, "n_lat_train": 400, "n_lat_test": 1500, "width": 210, "k": 10, "beta": 10.0,
             "state_embedding": (10, 10)},
    "lqg2d": {**_LQG, "d_lat": 2, "n_lat_train": 200, "n_lat_test": 1500, "width": 24, "iterations": 500,
              "value_batch_size": 64, "value_width": 24},
    "lqg2d-noisy": {**_LQG, "d_lat": 2, "n_lat_train": 200, "n_lat_test": 1500, "width": 24, "iterations": 500,
                    "value_batch_size": 64, "value_width": 24,
                    "test_episodes_per_latent": 10, "final_episodes_per_latent": 200},
    "lqg3d": {**_LQG, "d_lat": 3, "n_lat_train": 300, "n_lat_test": 1500, "width": 30, "iterations": 800,
              "value_batch_size": 100, "value_width": 30},
    "minecart": {"d_lat": 3, "n_lat_train": 400, "n_lat_test": 2000, "width": 36, "depth": 3,
                 "max_episode_len_train": 100, "max_episode_len_test": 1000, "k": 3, "beta": 6.0, "gamma": 1.0,
                 "normalization": "maxmin", "iterations": 3000, "state_embedding": (10,) * 6},
}

_SMOKE_LIMITS = {"n_lat_train": 24, "n_lat_test": 24, "iterations": 3, "final_episodes_per_latent": 2,
                 "test_episodes_per_latent": 2}

# alternative spellings accepted by --preset
PRESET_ALIASES = {"paper": "published"}
PRESET_NAMES = ("published", "paper", "smoke", "none")


def preset_sections(name: str, env_id: str, variant: str = "pg") -> dict[str, dict[str, Any]]:
    """[train]/[experiment] sections for a named preset; ``none`` keeps the model defaults."""
    if name not in PRESET_NAMES:
        raise ContractViolation(f"Unknown preset {name!r}; expected one of {', '.join(PRESET_NAMES)}")
    name = PRESET_ALIASES.get(name, name)
    if env_id not in PUBLISHED:
        raise ContractViolation(f"No preset for environment {env_id!r}")
    train: dict[str, Any] = {} if name == "none" else dict(PUBLISHED[env_id])
    if name == "smoke":
        for key, limit in _SMOKE_LIMITS.items():
            if key in train:
                train[key] = min(train[key], limit)
        train["k"] = min(train["k"], train["n_lat_train"] - 1)
        train["width"] = min(train["width"], 16)
    train["variant"] = variant
    experiment: dict[str, Any] = {"env": env_id, "runs": 5 if name == "published" else 1}
    return {"experiment": experiment, "train": train, "env": {}}
