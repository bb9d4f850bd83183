"""Dominance, nondominated filtering and hypervolume over finite sets of return vectors.

All functions treat objectives as maximized. Inputs are array-likes of shape
(n, m); nothing is mutated.
"""
from bisect import bisect_left
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from lcmopg.errors import ContractViolation, IllPosedHypervolumeError

MAX_EXACT_DIM = 6

ReturnVector = np.ndarray
ReferencePoint = np.ndarray


def _as_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractViolation(f"Expected a nonempty 1-D return vector, got shape {arr.shape}")
    return arr


def as_points(points, allow_empty: bool = False) -> np.ndarray:
    """Coerce to a finite (n, m) float array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        if not allow_empty:
            raise ContractViolation("Empty point set")
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ContractViolation(f"Expected an (n, m) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("Point set contains NaN or Inf")
    return arr


def dominates(a, b) -> bool:
    a = _as_vector(a)
    b = _as_vector(b)
    if a.shape != b.shape:
        raise ContractViolation(f"Dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return bool(np.all(a >= b) and np.any(a > b))


def nondominated_mask(points) -> np.ndarray:
    """Boolean mask of points not dominated by any other point. Duplicates all survive."""
    pts = as_points(points)
    n = pts.shape[0]
    mask = np.ones(n, dtype=bool)
    # chunked to bound the (chunk, n, m) comparison tensor
    chunk = max(1, 4_000_000 // max(1, n * pts.shape[1]))
    for start in range(0, n, chunk):
        block = pts[start : start + chunk]
        ge = np.all(pts[None, :, :] >= block[:, None, :], axis=2)
        gt = np.any(pts[None, :, :] > block[:, None, :], axis=2)
        mask[start : start + chunk] = ~np.any(ge & gt, axis=1)
    return mask


def pareto_filter(points) -> list[int]:
    """Indices of all nondominated points, in input order."""
    return np.flatnonzero(nondominated_mask(points)).tolist()


def _unique_nondominated_min(x: np.ndarray) -> np.ndarray:
    """Deduplicated nondominated subset under minimization."""
    x = np.unique(x, axis=0)
    if x.shape[0] <= 1:
        return x
    return x[nondominated_mask(-x)]


def _hv2d_min(x: np.ndarray, r: np.ndarray) -> float:
    order = np.lexsort((x[:, 1], x[:, 0]))
    x = x[order]
    best = np.minimum.accumulate(x[:, 1])
    keep = np.ones(x.shape[0], dtype=bool)
    keep[1:] = x[1:, 1] < best[:-1]
    x = x[keep]
    upper = np.concatenate(([r[1]], x[:-1, 1]))
    return float(np.sum((r[0] - x[:, 0]) * (upper - x[:, 1])))


def _hv3d_min(x: np.ndarray, r: np.ndarray) -> float:
    """Sweep on the third objective, keeping the (x, y) staircase of the points seen so far.

    The staircase is sorted by x ascending with y strictly descending; its area
    is updated on every insertion, so the sweep is O(n log n) apart from list
    shifts. Dominated points and duplicates are tolerated.
    """
    x = x[np.argsort(x[:, 2], kind="stable")]
    r0, r1, r2 = (float(v) for v in r)
    xs: list[float] = []
    ys: list[float] = []
    area = 0.0
    total = 0.0
    n = x.shape[0]
    for i in range(n):
        px, py, pz = (float(v) for v in x[i])
        j = bisect_left(xs, px)
        covered = (j > 0 and ys[j - 1] <= py) or (j < len(xs) and xs[j] == px and ys[j] <= py)
        if not covered:
            # walk over the staircase points p dominates, adding the strip each one left uncovered
            left, top = px, ys[j - 1] if j > 0 else r1
            k = j
            while k < len(xs) and ys[k] >= py:
                area += (xs[k] - left) * (top - py)
                left, top = xs[k], ys[k]
                k += 1
            right = xs[k] if k < len(xs) else r0
            area += (right - left) * (top - py)
            del xs[j:k], ys[j:k]
            xs.insert(j, px)
            ys.insert(j, py)
        next_z = float(x[i + 1, 2]) if i + 1 < n else r2
        total += area * (next_z - pz)
    return total


def _hv_min(x: np.ndarray, r: np.ndarray) -> float:
    """Exact HV under minimization; x must be deduplicated and nondominated when m >= 4."""
    n, m = x.shape
    if n == 0:
        return 0.0
    if n == 1:
        return float(np.prod(r - x[0]))
    if m == 1:
        return float(r[0] - x[:, 0].min())
    if m == 2:
        return _hv2d_min(x, r)
    if m == 3:
        return _hv3d_min(x, r)
    # worst-first in the last objective: every later point is at least as good
    # there, so limiting against the current point collapses that axis
    x = x[np.argsort(-x[:, -1], kind="stable")]
    total = 0.0
    for i in range(n):
        p = x[i]
        later = x[i + 1 :]
        box = float(np.prod(r[:-1] - p[:-1]))
        if later.shape[0]:
            limited = np.maximum(later[:, :-1], p[:-1])
            if np.any(np.all(limited <= p[:-1], axis=1)):
                continue
            # the 2-D and 3-D sweeps drop dominated points themselves
            if m - 1 > 3:
                limited = _unique_nondominated_min(limited)
            box -= _hv_min(limited, r[:-1])
        total += (r[-1] - p[-1]) * box
    return total


def hypervolume(points, ref) -> float:
    """Lebesgue measure of the union of boxes [ref, p] over nondominated p.

    Dominated points contribute nothing and are dropped first; duplicates are
    merged. Every surviving point must strictly dominate ``ref`` coordinatewise.
    """
    ref = _as_vector(ref)
    pts = as_points(points, allow_empty=True)
    if pts.shape[0] == 0:
        return 0.0
    if pts.shape[1] != ref.shape[0]:
        raise ContractViolation(f"Dimension mismatch: points have m={pts.shape[1]}, ref has m={ref.shape[0]}")
    if ref.shape[0] > MAX_EXACT_DIM:
        raise ContractViolation(f"Exact hypervolume supports m <= {MAX_EXACT_DIM}, got m={ref.shape[0]}")
    front = np.unique(pts[nondominated_mask(pts)], axis=0)
    bad = np.any(front <= ref, axis=1)
    if np.any(bad):
        raise IllPosedHypervolumeError(
            f"{int(bad.sum())} nondominated point(s) do not strictly dominate the reference point {ref.tolist()}, "
            f"e.g. {front[bad][0].tolist()}"
        )
    if ref.shape[0] == 2:
        # sort-and-sweep on the first coordinate
        order = np.argsort(-front[:, 0], kind="stable")
        front = front[order]
        lower = np.concatenate(([ref[1]], front[:-1, 1]))
        return float(np.sum((front[:, 0] - ref[0]) * (front[:, 1] - lower)))
    return _hv_min(-front, -ref)


def hypervolume_clipped(points, ref) -> float:
    """hypervolume() over the points that strictly dominate ``ref``; the rest add no measure."""
    ref = _as_vector(ref)
    pts = as_points(points, allow_empty=True)
    if pts.shape[0] == 0:
        return 0.0
    if pts.shape[1] != ref.shape[0]:
        raise ContractViolation(f"Dimension mismatch: points have m={pts.shape[1]}, ref has m={ref.shape[0]}")
    return hypervolume(pts[np.all(pts > ref, axis=1)], ref)


def hypervolume_mc(points, ref, n_samples: int, seed=None, chunk: int = 100_000) -> tuple[float, float]:
    """Monte-Carlo estimate of hypervolume() with its standard error."""
    if n_samples <= 0:
        raise ContractViolation("n_samples must be positive")
    ref = _as_vector(ref)
    pts = as_points(points, allow_empty=True)
    if pts.shape[0] == 0:
        return 0.0, 0.0
    front = pts[nondominated_mask(pts)]
    if not np.all(front > ref):
        raise IllPosedHypervolumeError("Every nondominated point must strictly dominate the reference point")
    upper = front.max(axis=0)
    volume = float(np.prod(upper - ref))
    rng = np.random.default_rng(seed)
    hits = 0
    remaining = n_samples
    while remaining > 0:
        size = min(chunk, remaining)
        samples = rng.uniform(ref, upper, size=(size, ref.shape[0]))
        covered = np.zeros(size, dtype=bool)
        for p in front:
            covered |= np.all(samples <= p, axis=1)
        hits += int(covered.sum())
        remaining -= size
    frac = hits / n_samples
    return volume * frac, volume * float(np.sqrt(frac * (1.0 - frac) / n_samples))


@dataclass
class ParetoArchive:
    """Nondominated return vectors with optional per-point payloads."""

    points: np.ndarray
    payloads: list[Any] = field(default_factory=list)

    @classmethod
    def from_points(cls, points, payloads: Sequence[Any] | None = None) -> "ParetoArchive":
        pts = as_points(points)
        if payloads is not None and len(payloads) != pts.shape[0]:
            raise ContractViolation("payloads must match points one-to-one")
        keep = pareto_filter(pts)
        kept_payloads = [payloads[i] for i in keep] if payloads is not None else []
        return cls(points=pts[keep].copy(), payloads=kept_payloads)

    @property
    def m(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def hypervolume(self, ref) -> float:
        return hypervolume(self.points, ref)

    def merged(self, other: "ParetoArchive") -> "ParetoArchive":
        pts = np.vstack([self.points, other.points])
        payloads = None
        if self.payloads or other.payloads:
            payloads = list(self.payloads or [None] * len(self)) + list(other.payloads or [None] * len(other))
        return ParetoArchive.from_points(pts, payloads)
