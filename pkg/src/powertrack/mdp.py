"""Desk-scale average-cost MDP for the scaling-policy optimality check.

State = (quantized tracking-error level, channel state); action = one of a
discrete set of attainable contraction moduli.  The transition kernel reuses
the stage-geometric structure: conditioned on a channel jump q -> r, the new
error level is the old one contracted by beta^N plus the equilibrium jump,
with N geometric; eliminating N gives level weights ((e_l - d_qr)/e_i)
raised to K^2*N_F*log_beta(nu).

Smaller moduli tilt every row toward smaller error levels (first-order
stochastic dominance), so with any increasing per-level cost the greedy
policy takes the smallest attainable modulus in every state; the solvers
here let that be verified numerically.
"""

import itertools

import numpy as np


def error_grid(delta, beta, levels=32):
    """Log-spaced error levels spanning three decades up to delta*beta/(1-beta)."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if delta <= 0:
        raise ValueError("delta must be positive")
    cap = delta * beta / (1.0 - beta)
    return np.geomspace(cap * 1e-3, cap, levels)


def mdp_kernel(grid, joint_tpm, ne_jumps, betas, nu, K, n_f):
    """Transition kernel over (error level, channel state) per action.

    Returns an (A, L*Q, L*Q) array, states flattened error-major
    (x = i*Q + q).  For each source (i, q), destination channel r and action
    a, weights over destination levels l are ((e_l - d_qr)/e_i)^E(a) for
    e_l > d_qr and zero otherwise, normalized per (q -> r) so the channel
    marginal stays exactly T_qr; rows therefore sum to one.  When no level
    is reachable (or all weights underflow) the mass falls back uniformly on
    the reachable set, or on the largest level if that set is empty.
    """
    grid = np.asarray(grid, dtype=float)
    tpm = np.asarray(joint_tpm, dtype=float)
    jumps = np.asarray(ne_jumps, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid levels must be positive and increasing")
    if np.any((betas <= 0) | (betas >= 1)):
        raise ValueError("actions must be contraction moduli in (0, 1)")
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    L, Q = len(grid), tpm.shape[0]
    if jumps.shape != (Q, Q):
        raise ValueError("ne_jumps must be Q x Q")
    A = len(betas)
    kernel = np.zeros((A, L * Q, L * Q))
    exponents = K * K * n_f * np.log(nu) / np.log(betas)
    for a, exponent in enumerate(exponents):
        for q in range(Q):
            for r in range(Q):
                feas = grid > jumps[q, r]
                for i in range(L):
                    w = np.zeros(L)
                    if feas.any():
                        x = (grid[feas] - jumps[q, r]) / grid[i]
                        logw = exponent * np.log(x)
                        logw -= logw.max()
                        w[feas] = np.exp(logw)
                    total = w.sum()
                    if total <= 0.0:
                        if feas.any():
                            w[feas] = 1.0
                        else:
                            w[-1] = 1.0
                        total = w.sum()
                    src = i * Q + q
                    kernel[a, src, r::Q] = tpm[q, r] * w / total
    return kernel


def per_state_cost(grid, Q, g=None):
    """Cost vector over the flattened state space from a per-level cost g."""
    if g is None:
        g = lambda e: e
    levels = np.asarray([g(e) for e in grid], dtype=float)
    return np.repeat(levels, Q)


def relative_value_iteration(kernel, cost, tol=1e-9, max_iter=200_000, ref=0):
    """Average-cost Bellman fixed point by relative value iteration.

    Returns (theta, values, greedy policy).  Stops when the span of the
    value-update differences falls below tol, at which point the optimal
    average cost is bracketed within that span.
    """
    kernel = np.asarray(kernel, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n = kernel.shape[1]
    h = np.zeros(n)
    for _ in range(max_iter):
        q_values = cost[None, :] + np.einsum("axy,y->ax", kernel, h)
        h_new = q_values.min(axis=0)
        diff = h_new - h
        span = diff.max() - diff.min()
        theta = 0.5 * (diff.max() + diff.min())
        h = h_new - h_new[ref]
        if span < tol:
            policy = np.argmin(q_values, axis=0)
            return theta, h, policy
    raise RuntimeError(f"relative value iteration did not reach span {tol}")


def stationary_distribution(transition):
    """Stationary law of a row-stochastic matrix via a constrained solve."""
    n = transition.shape[0]
    a = np.vstack([transition.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    mu, *_ = np.linalg.lstsq(a, b, rcond=None)
    return mu


def policy_average_cost(kernel, cost, policy):
    """Long-run average cost of one stationary policy (unichain)."""
    n = kernel.shape[1]
    p_pi = kernel[np.asarray(policy), np.arange(n)]
    mu = stationary_distribution(p_pi)
    return float(mu @ cost)


def policy_iteration(kernel, cost, max_iter=1000):
    """Exact optimal average cost via Howard policy iteration.

    Policy evaluation solves the linear system h = c - theta + P h with a
    reference value pinned to zero; unichain kernels make it nonsingular.
    Returns (theta, values, policy).
    """
    kernel = np.asarray(kernel, dtype=float)
    cost = np.asarray(cost, dtype=float)
    n = kernel.shape[1]
    policy = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        p_pi = kernel[policy, np.arange(n)]
        a = np.zeros((n + 1, n + 1))
        a[:n, :n] = np.eye(n) - p_pi
        a[:n, n] = 1.0
        a[n, 0] = 1.0
        b = np.concatenate([cost, [0.0]])
        sol = np.linalg.solve(a, b)
        h, theta = sol[:n], sol[n]
        q_values = cost[None, :] + np.einsum("axy,y->ax", kernel, h)
        new_policy = np.argmin(q_values, axis=0)
        if np.array_equal(new_policy, policy):
            return float(theta), h, policy
        policy = new_policy
    raise RuntimeError("policy iteration did not converge")


def enumerate_stationary_policies(kernel, cost, limit=200_000):
    """Average cost of every stationary deterministic policy (tiny spaces only).

    Returns (best theta, list of (policy tuple, theta)); refuses when the
    policy space exceeds `limit`.
    """
    a, n = kernel.shape[0], kernel.shape[1]
    total = a ** n
    if total > limit:
        raise ValueError(f"{total} stationary policies exceed the limit {limit}")
    results = []
    best = np.inf
    for policy in itertools.product(range(a), repeat=n):
        theta = policy_average_cost(kernel, cost, policy)
        results.append((policy, theta))
        best = min(best, theta)
    return best, results
