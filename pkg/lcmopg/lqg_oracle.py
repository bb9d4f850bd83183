"""Ground-truth LQG Pareto front from Riccati solutions over a sweep of linear scalarizations."""
import itertools
from dataclasses import dataclass

import numpy as np

from lcmopg import logger
from lcmopg.envs.lqg import LinearQuadraticGaussian, LqgConfig, lqg_matrices
from lcmopg.errors import ContractViolation, RiccatiConvergenceError
from lcmopg.objective_space import ParetoArchive, hypervolume_clipped, pareto_filter

# reference point and HV divisor per objective count
LQG_HV_SCALES: dict[int, tuple[tuple[float, ...], float]] = {
    2: ((-310.0, -310.0), 160.0**2),
    3: ((-500.0, -500.0, -500.0), 350.0**3),
}


@dataclass(frozen=True)
class RiccatiSolution:
    S: np.ndarray
    residual: float
    iterations: int


def _riccati_map(S: np.ndarray, Q: np.ndarray, R: np.ndarray, gamma: float) -> np.ndarray:
    nxt = Q + gamma * S - gamma**2 * S @ np.linalg.solve(R + gamma * S, S)
    return 0.5 * (nxt + nxt.T)


def solve_riccati(Q, R, gamma: float, tol: float = 1e-11, max_iter: int = 100_000) -> RiccatiSolution:
    """Fixed point of S = Q + gS - g^2 S (R + gS)^-1 S, iterated from S = Q."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if Q.shape != R.shape or Q.shape[0] != Q.shape[1]:
        raise ContractViolation(f"Q and R must be square with equal shapes, got {Q.shape} and {R.shape}")
    if not 0 < gamma < 1:
        raise ContractViolation("gamma must lie in (0, 1)")
    S = Q.copy()
    residual = np.inf
    for i in range(1, max_iter + 1):
        nxt = _riccati_map(S, Q, R, gamma)
        residual = float(np.linalg.norm(nxt - S))
        S = nxt
        if residual <= tol:
            final = float(np.linalg.norm(S - _riccati_map(S, Q, R, gamma)))
            return RiccatiSolution(S=S, residual=final, iterations=i)
    raise RiccatiConvergenceError(residual, max_iter)


def optimal_action(S, R, gamma: float, s) -> np.ndarray:
    """a = -g (R + gS)^-1 S s."""
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    try:
        return -gamma * np.linalg.solve(R + gamma * S, S @ np.asarray(s, dtype=np.float64))
    except np.linalg.LinAlgError as e:
        raise ContractViolation(f"R + gamma*S is singular: {e}") from e


def simplex_weights(m: int, divisions: int = 100) -> np.ndarray:
    """Weights (n_1, ..., n_m)/divisions over all positive integer n_i summing to divisions.

    m=2 with 100 divisions gives 0.01..0.99; m=3 gives the 4851-point mesh.
    """
    if m < 2 or divisions < m:
        raise ContractViolation("simplex_weights needs m >= 2 and divisions >= m")
    rows = []
    for cuts in itertools.combinations(range(1, divisions), m - 1):
        bounds = (0, *cuts, divisions)
        rows.append([hi - lo for lo, hi in zip(bounds[:-1], bounds[1:])])
    return np.array(rows, dtype=np.float64) / divisions


def _linear_policy_returns(
    env: LinearQuadraticGaussian,
    gain: np.ndarray,
    gamma: float,
    episodes: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mean discounted return of a = gain @ s over ``episodes`` parallel episodes."""
    cfg = env.config
    s = np.tile(cfg.initial_state, (episodes, 1))
    total = np.zeros((episodes, cfg.m))
    for t in range(cfg.horizon):
        a = np.clip(s @ gain.T, -cfg.action_bound, cfg.action_bound)
        total += gamma**t * env.reward(s, a)
        s = s + a
        if cfg.sigma > 0:
            s = s + cfg.sigma * rng.standard_normal(s.shape)
    return total.mean(axis=0)


def oracle_pf(
    m: int = 2,
    xi: float = 0.1,
    gamma: float = 0.9,
    sigma: float = 0.0,
    horizon: int = 30,
    s0: float = 10.0,
    weight_grid: np.ndarray | None = None,
    episodes_per_weight: int = 2000,
    rng: np.random.Generator | None = None,
    ref=None,
    hv_divisor: float | None = None,
) -> tuple[ParetoArchive, float]:
    """Nondominated returns of the Riccati-optimal controllers for every weight; payloads are the weights."""
    grid = simplex_weights(m) if weight_grid is None else np.atleast_2d(np.asarray(weight_grid, dtype=np.float64))
    if grid.shape[1] != m or np.any(grid < 0) or not np.allclose(grid.sum(axis=1), 1.0):
        raise ContractViolation("weights must be nonnegative m-vectors summing to 1")
    default_ref, default_divisor = LQG_HV_SCALES.get(m, ((None,) * m, 1.0))
    ref = default_ref if ref is None else ref
    if any(r is None for r in ref):
        raise ContractViolation(f"No default reference point for m={m}; pass ref")
    hv_divisor = default_divisor if hv_divisor is None else hv_divisor
    rng = rng or np.random.default_rng(0)

    env = LinearQuadraticGaussian(LqgConfig(m=m, xi=xi, sigma=sigma, horizon=horizon, s0=s0))
    Qs, Rs = lqg_matrices(m, xi)
    episodes = 1 if sigma == 0 else episodes_per_weight
    returns = np.empty((grid.shape[0], m))
    for i, w in enumerate(grid):
        Q = np.tensordot(w, Qs, axes=1)
        R = np.tensordot(w, Rs, axes=1)
        sol = solve_riccati(Q, R, gamma)
        # a = gain @ s reproduces optimal_action for every state
        gain = -gamma * np.linalg.solve(R + gamma * sol.S, sol.S)
        returns[i] = _linear_policy_returns(env, gain, gamma, episodes, rng)
    keep = pareto_filter(returns)
    archive = ParetoArchive(points=returns[keep].copy(), payloads=[grid[i].copy() for i in keep])
    outside = int(np.sum(~np.all(archive.points > np.asarray(ref), axis=1)))
    if outside:
        logger.warning("%d oracle point(s) do not dominate the reference point %s", outside, list(ref))
    hv = hypervolume_clipped(archive.points, ref) / hv_divisor
    logger.info("LQG oracle m=%d sigma=%g: %d weights, %d PF points, HV=%.6f", m, sigma, len(grid), len(archive), hv)
    return archive, hv
