"""Equilibrium oracle for the multicarrier power game.

Each link maximizes its own capacity over the budget simplex given the
others' powers; the oracle iterates simultaneous water-filling best
responses, which is a block-contraction whenever the cross/direct gain
ratios are small enough, and certifies that condition per instance.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .network import received_power_profile

WATERFILL_BISECT_ITERS = 100


@dataclass(frozen=True)
class NeSolution:
    """Fixed point of simultaneous best responses plus convergence metadata."""

    p_star: np.ndarray      # (K, n_f)
    residual: float         # block-max move of the final sweep
    iterations: int
    certified: bool         # uniqueness condition held for this instance
    margin: float


def uniqueness_condition(g, p_max):
    """Check max_s g_kj P_j / (g_kk P_k) < 1/(K-1) over all ordered pairs.

    Returns (holds, margin) where margin = 1/(K-1) minus the worst ratio;
    a single link is vacuously fine with infinite margin.
    """
    g = np.asarray(g, dtype=float)
    p_max = np.asarray(p_max, dtype=float)
    K = g.shape[0]
    if K == 1:
        return True, np.inf
    worst = 0.0
    for k in range(K):
        for j in range(K):
            if j == k:
                continue
            ratio = np.max(g[k, j] * p_max[j] / (g[k, k] * p_max[k]))
            worst = max(worst, float(ratio))
    threshold = 1.0 / (K - 1)
    return worst < threshold, threshold - worst


def interference_coupling(g):
    """max_k sum_{j != k} max_s g_kj/g_kk, the worst aggregate gain ratio."""
    g = np.asarray(g, dtype=float)
    K = g.shape[0]
    worst = 0.0
    for k in range(K):
        total = sum(
            float(np.max(g[k, j] / g[k, k])) for j in range(K) if j != k
        )
        worst = max(worst, total)
    return worst


def alt_sufficient_condition(g):
    """Contraction certificate for curvature-matched scaling: coupling < 1."""
    return interference_coupling(g) < 1.0


def waterfill(direct_gains, floor, budget):
    """Single-link water-filling over parallel channels.

    Maximizes sum_s log(1 + d_s p_s / f_s) subject to sum p_s = budget,
    p >= 0.  The inverse water level is bisected over (0, max_s d_s/f_s]
    and the active set is then polished with the closed-form level, so the
    budget and the KKT conditions hold to machine precision.  All-zero
    direct gains return the zero vector.
    """
    d = np.asarray(direct_gains, dtype=float)
    f = np.asarray(floor, dtype=float)
    if np.any(d < 0):
        raise ValueError("direct gains must be nonnegative")
    if np.any(f <= 0):
        raise ValueError("floor must be positive")
    if budget <= 0:
        raise ValueError("budget must be positive")
    p = np.zeros_like(d)
    usable = d > 0
    if not np.any(usable):
        return p
    t = f[usable] / d[usable]      # water level at which a subcarrier activates
    lo, hi = 0.0, float(np.max(1.0 / t))
    for _ in range(WATERFILL_BISECT_ITERS):
        nu = 0.5 * (lo + hi)
        total = np.sum(np.maximum(1.0 / nu - t, 0.0))
        if total > budget:
            lo = nu
        else:
            hi = nu
    nu = 0.5 * (lo + hi)
    active = t < 1.0 / nu
    if not np.any(active):
        active = t <= np.min(t)    # degenerate: everything at the same threshold
    mu = (budget + t[active].sum()) / active.sum()
    p[usable] = np.where(active, mu - t, 0.0)
    np.maximum(p, 0.0, out=p)
    return p


def best_response(g, p, sigma2, k, p_max_k):
    """Link k's capacity-maximizing powers against the others' current powers."""
    rho = received_power_profile(g, p, sigma2, k)
    floor = rho - g[k, k] * p[k]
    return waterfill(g[k, k], floor, p_max_k)


def block_max_distance(a, b):
    """max over links of the Euclidean distance between per-link power rows."""
    diff = np.asarray(a) - np.asarray(b)
    return float(np.max(np.sqrt(np.sum(diff * diff, axis=-1))))


def solve_ne(g, sigma2, p_max, tol=1e-10, max_iter=100_000):
    """Nash equilibrium via synchronous water-filling sweeps.

    Converges linearly under the uniqueness condition; if that condition
    fails the result is still returned but flagged non-certified.  Hitting
    max_iter returns the best iterate with its residual rather than raising.
    """
    g = np.asarray(g, dtype=float)
    p_max = np.asarray(p_max, dtype=float)
    K, n_f = g.shape[0], g.shape[2]
    certified, margin = uniqueness_condition(g, p_max)
    if not certified:
        warnings.warn(
            "uniqueness condition violated; equilibrium not certified",
            stacklevel=2,
        )
    p = p_max[:, None] / n_f * np.ones((K, n_f))
    residual = np.inf
    iterations = 0
    while iterations < max_iter:
        new = np.stack(
            [best_response(g, p, sigma2, k, p_max[k]) for k in range(K)]
        )
        residual = block_max_distance(new, p)
        p = new
        iterations += 1
        if residual < tol:
            break
    return NeSolution(p_star=p, residual=residual, iterations=iterations,
                      certified=certified, margin=margin)


def ne_distance_table(states, spec, sigma2, p_max, tol=1e-10):
    """Pairwise block-max distances between the NEs of the given states.

    Returns (solutions, distances, delta) where delta is the largest entry;
    the matrix is symmetric with a zero diagonal by construction.
    """
    solutions = [
        solve_ne(spec.gains(state), sigma2, p_max, tol=tol) for state in states
    ]
    table = np.stack([sol.p_star for sol in solutions])
    diff = table[:, None] - table[None, :]
    dist = np.max(np.sqrt(np.sum(diff * diff, axis=-1)), axis=-1)
    delta = float(dist.max()) if len(states) > 1 else 0.0
    return solutions, dist, delta
