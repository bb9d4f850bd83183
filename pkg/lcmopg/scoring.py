"""Turns a batch of raw trajectory returns into per-trajectory training weights."""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import iqr

from lcmopg.errors import ContractViolation
from lcmopg.objective_space import as_points, nondominated_mask

DEFAULT_EPS = 1e-8


class NormalizationMode(str, Enum):
    STANDARD = "standard"
    ROBUST = "robust"
    MAXMIN = "maxmin"


class AvgMode(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"


def default_avg(mode: NormalizationMode) -> AvgMode:
    """Median centering pairs with the median-based normalizations."""
    return AvgMode.MEAN if NormalizationMode(mode) is NormalizationMode.STANDARD else AvgMode.MEDIAN


@dataclass(frozen=True)
class ScoreBatch:
    normalized_returns: np.ndarray
    scores: np.ndarray
    bonuses: np.ndarray
    final: np.ndarray

    def __post_init__(self) -> None:
        n = self.normalized_returns.shape[0]
        if not (self.scores.shape[0] == self.bonuses.shape[0] == self.final.shape[0] == n):
            raise ContractViolation("ScoreBatch arrays must share their length")

    @property
    def better_half(self) -> np.ndarray:
        return self.scores > 0


def normalize_returns(returns, mode: NormalizationMode | str, eps: float = DEFAULT_EPS) -> np.ndarray:
    g = as_points(returns)
    if g.shape[0] < 2:
        raise ContractViolation("Normalization needs at least two returns")
    mode = NormalizationMode(mode)
    if mode is NormalizationMode.STANDARD:
        center = g.mean(axis=0)
        spread = g.std(axis=0)
    elif mode is NormalizationMode.ROBUST:
        center = np.median(g, axis=0)
        spread = iqr(g, axis=0)
    else:
        center = np.median(g, axis=0)
        spread = g.max(axis=0) - g.min(axis=0)
    return (g - center) / np.maximum(spread, eps)


def compute_scores(normalized, avg: AvgMode | str = AvgMode.MEDIAN) -> np.ndarray:
    """Negative distance to the current front, with the per-dimension correction, then centered."""
    g = as_points(normalized)
    front = g[nondominated_mask(g)]
    nearest = cdist(g, front).min(axis=1)
    per_dim = (front.max(axis=0)[None, :] - g).min(axis=1)
    f = -np.minimum(nearest, per_dim)
    center = np.mean(f) if AvgMode(avg) is AvgMode.MEAN else np.median(f)
    return f - center


def knn_distances(normalized, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest neighbour, the point itself excluded."""
    g = as_points(normalized)
    n = g.shape[0]
    if not 1 <= k <= n - 1:
        raise ContractViolation(f"k must satisfy 1 <= k <= N-1 (k={k}, N={n})")
    d = cdist(g, g)
    np.fill_diagonal(d, np.inf)
    return np.partition(d, k - 1, axis=1)[:, k - 1]


def compute_bonuses(normalized, scores, k: int) -> np.ndarray:
    f = np.asarray(scores, dtype=np.float64)
    d = knn_distances(normalized, k)
    if f.shape[0] != d.shape[0]:
        raise ContractViolation("scores and returns differ in length")
    return np.where(f > 0, d, 0.0)


def final_scores(f, b, beta: float, clip: bool) -> np.ndarray:
    if beta < 0:
        raise ContractViolation("beta must be nonnegative")
    total = np.asarray(f, dtype=np.float64) + beta * np.asarray(b, dtype=np.float64)
    return np.maximum(total, 0.0) if clip else total


def score_batch(
    returns,
    mode: NormalizationMode | str,
    k: int,
    beta: float,
    clip: bool,
    avg: AvgMode | str | None = None,
    eps: float = DEFAULT_EPS,
) -> ScoreBatch:
    """Normalization, scores, bonuses and the final combination in one call."""
    avg = default_avg(mode) if avg is None else AvgMode(avg)
    normalized = normalize_returns(returns, mode, eps)
    f = compute_scores(normalized, avg)
    b = compute_bonuses(normalized, f, k)
    return ScoreBatch(
        normalized_returns=normalized,
        scores=f,
        bonuses=b,
        final=final_scores(f, b, beta, clip),
    )
