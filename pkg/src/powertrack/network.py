"""Interference-network physics at one channel state.

Everything is expressed through the per-receiver total received power
rho_k^(s) = sigma^2 + sum_j g_kj^(s) p_j^(s), which is the only quantity a
receiver feeds back: SINR, capacity and all derivatives are functions of it,
mirroring what a transmitter can actually observe.

Gain tensors are plain (K, K, n_f) arrays g[k, j, s] of linear power gains;
power profiles are (K, n_f) arrays of Watts.
"""

import numpy as np


def received_power_profile(g, p, sigma2, k):
    """Total received power per subcarrier at receiver k, own signal included."""
    return sigma2 + np.einsum("js,js->s", g[k], p)


def rho_all(g, p, sigma2):
    """Received power profiles of every receiver at once, shape (K, n_f)."""
    return sigma2 + np.einsum("kjs,js->ks", g, p)


def sinr(g, p, sigma2, k, s):
    """Signal to interference-plus-noise ratio of link k on subcarrier s."""
    own = g[k, k, s] * p[k, s]
    denom = received_power_profile(g, p, sigma2, k)[s] - own
    return own / denom


def sinr_profile(g, p, sigma2, k):
    own = g[k, k] * p[k]
    return own / (received_power_profile(g, p, sigma2, k) - own)


def link_capacity(g, p, sigma2, k):
    """Instantaneous mutual information of link k in nats per channel use."""
    return float(np.sum(np.log1p(sinr_profile(g, p, sigma2, k))))


def all_link_capacities(g, p, sigma2):
    """Capacities of all K links, shape (K,)."""
    rho = rho_all(g, p, sigma2)
    own = np.einsum("kks->ks", g) * p
    return np.sum(np.log1p(own / (rho - own)), axis=-1)


def lagrangian(g, p, sigma2, k, lambda_k, p_max_k):
    """Link capacity plus the dual penalty on the sum-power budget."""
    return link_capacity(g, p, sigma2, k) + lambda_k * (p_max_k - p[k].sum())


def gradient(g, p, sigma2, k, lambda_k):
    """Gradient of link k's Lagrangian w.r.t. its own powers: g_kk/rho_k - lambda_k."""
    rho = received_power_profile(g, p, sigma2, k)
    return g[k, k] / rho - lambda_k


def hessian_block(g, p, sigma2, k, j):
    """Second derivative block d2 C_k / (dp_k dp_j), a diagonal matrix.

    Entry s is -g_kk^(s) g_kj^(s) / rho_k^(s)^2, so the own block (j = k) is
    negative definite wherever the direct gain is positive.
    """
    rho = received_power_profile(g, p, sigma2, k)
    return np.diag(-g[k, k] * g[k, j] / rho ** 2)


def hessian_diagonal(g, p, sigma2, k, j):
    """Diagonal entries of hessian_block, as a vector."""
    rho = received_power_profile(g, p, sigma2, k)
    return -g[k, k] * g[k, j] / rho ** 2
