"""Norms, contraction moduli, tracking-error metrics and closed-form bounds.

The working norm everywhere is the block-maximum norm: the largest per-link
Euclidean norm of a stacked power profile.  The contraction modulus of a
link measures how much one scaled projected gradient step can expand the
distance to the equilibrium in that norm; the closed-form bounds tie the
maximum modulus, the equilibrium spread, and the average sojourn time of
the channel to the steady-state tracking errors.
"""

from dataclasses import dataclass

import numpy as np

from .channel import average_sojourn_time
from .network import received_power_profile


@dataclass(frozen=True)
class ErrorBounds:
    """Closed-form steady-state bounds from (beta, delta, sojourn time)."""

    eae_bound: float
    mse_bound: float
    p_region_bound: float
    n_bar: float


@dataclass(frozen=True)
class StageRecord:
    """Per-stage summary used by the dominated error recursion."""

    m: int
    state_key: str
    n_slots: int
    phi: float              # worst per-link modulus observed over the stage
    delta_next: float       # block-max jump to the next stage's equilibrium
    e_init: float           # distance to this stage's equilibrium at its first slot


def block_max_norm(p):
    """max over links of the per-link Euclidean norm; p is (K, n_f)."""
    p = np.asarray(p, dtype=float)
    return float(np.max(np.sqrt(np.sum(p * p, axis=-1))))


def diag_two_norm(d):
    """Induced 2-norm of a diagonal matrix: the largest absolute entry."""
    d = np.asarray(d, dtype=float)
    if d.ndim == 2:
        d = np.diagonal(d)
    return float(np.max(np.abs(d)))


def _as_diagonal(d_k, n_f):
    d = np.asarray(d_k, dtype=float)
    if d.ndim == 2:
        d = np.diagonal(d).copy()
    if d.shape != (n_f,):
        raise ValueError("scaling must be a diagonal of length n_f")
    if np.min(d) < 1e-12:
        raise ValueError("scaling is singular or indefinite")
    return d


def contraction_modulus(g, p, sigma2, k, d_k):
    """Per-link contraction modulus for a diagonal scaling D_k.

    All second-derivative blocks are diagonal, so the norm sums collapse to
    max_s |1 - h_s/d_s| + sum_{j != k} max_s (g_kk g_kj / rho^2)/d_s with
    h = g_kk^2/rho^2.
    """
    g = np.asarray(g, dtype=float)
    K, n_f = g.shape[0], g.shape[2]
    d = _as_diagonal(d_k, n_f)
    rho = received_power_profile(g, p, sigma2, k)
    h = (g[k, k] / rho) ** 2
    value = float(np.max(np.abs(1.0 - h / d)))
    for j in range(K):
        if j == k:
            continue
        value += float(np.max(g[k, k] * g[k, j] / rho ** 2 / d))
    return value


def modulus_lower_bound(g, k):
    """sum_{j != k} max_s g_kj/g_kk; no diagonal scaling can do better."""
    g = np.asarray(g, dtype=float)
    if np.any(g[k, k] <= 0):
        raise ValueError("direct gains must be positive")
    K = g.shape[0]
    return float(sum(np.max(g[k, j] / g[k, k]) for j in range(K) if j != k))


def theoretical_bounds(beta, delta, nu, K, n_f):
    """Closed-form steady-state bounds for a run with maximum modulus beta.

    eae <= delta*beta/((1-beta)*nbar), the escape probability is
    min(1, beta/((1-beta)*nbar)), and the mean squared error bound follows
    the same stage-geometric computation at second order.  Void for beta >= 1.
    """
    if beta >= 1.0:
        raise ValueError("bounds require a contraction modulus below 1")
    if beta < 0.0 or delta < 0.0:
        raise ValueError("beta and delta must be nonnegative")
    n_bar = average_sojourn_time(nu, K, n_f)
    eae = delta * beta / ((1.0 - beta) * n_bar)
    mse = (delta ** 2 * beta ** 2 * (2.0 * beta + (1.0 - beta) * n_bar)
           / ((1.0 - beta ** 2) * (1.0 - beta) * n_bar ** 2))
    p_region = min(1.0, beta / ((1.0 - beta) * n_bar))
    return ErrorBounds(eae_bound=eae, mse_bound=mse, p_region_bound=p_region,
                       n_bar=n_bar)


def default_burn_in(n_bar, beta):
    """Slots to discard before steady-state statistics: channel and
    contraction mixing times."""
    return int(np.ceil(max(10.0 * n_bar, 10.0 / max(1.0 - beta, 1e-9))))


def tracking_errors(trace, burn_in):
    """Empirical (EAE, MSE): time averages of the block-max distance to the
    active state's equilibrium after the burn-in."""
    if burn_in >= trace.horizon:
        raise ValueError("trace shorter than the burn-in")
    d = trace.dist_to_ne[burn_in:]
    return float(d.mean()), float((d * d).mean())


def region_stats(trace, delta, burn_in):
    """Fraction of post-burn-in slots outside every delta-ball around an
    enumerated equilibrium (the union-of-balls limit region)."""
    if trace.min_dist is None:
        raise ValueError("trace lacks min-distance recording (state space "
                         "was not enumerated)")
    d = trace.min_dist[burn_in:]
    return float(np.mean(d > delta))


def stage_records(trace):
    """Condense a trace into per-stage records for the dominated recursion.

    The stage modulus phi is the worst uniform per-slot contraction factor
    the stage exhibited: the largest per-link modulus of the scalings used,
    raised to the realized stage rate (e_end/e_init)^(1/N) when that is
    slower.  The modulus is a linearization rate, so right after a large
    equilibrium jump a stage can contract slower than it; the realized rate
    uses the recorded end-of-stage distance to the stage's own equilibrium.
    """
    starts = trace.stage_starts
    lengths = trace.stage_lengths()
    d = trace.dist_to_ne
    records = []
    for m in range(trace.num_stages):
        lo = starts[m]
        hi = lo + lengths[m]
        phi = float(trace.moduli[lo:hi].max())
        e_init = float(d[lo])
        if trace.stage_end_dist is not None and m + 1 < trace.num_stages:
            e_end = trace.stage_end_dist[m]
            # realized uniform per-slot rate of the stage; distances under
            # 1e-11 are rounding dust whose contribution sits far below the
            # 1e-9 domination slack
            if np.isfinite(e_end) and e_init > 1e-11 and e_end > 0.0:
                phi = max(phi, float((e_end / e_init) ** (1.0 / lengths[m])))
        if m + 1 < trace.num_stages:
            jump = trace.ne_by_stage[m + 1] - trace.ne_by_stage[m]
            delta_next = block_max_norm(jump)
        else:
            delta_next = np.nan
        records.append(StageRecord(
            m=m,
            state_key=trace.stage_state_keys[m],
            n_slots=int(lengths[m]),
            phi=phi,
            delta_next=float(delta_next),
            e_init=e_init,
        ))
    return records


def dominated_error_process(stages, e1):
    """Stage-indexed recursion e'(m+1) = e'(m)*phi_m^N_m + delta_{m,m+1}.

    Seeded with the measured first-stage error e1; each term dominates the
    corresponding measured stage-initial error whenever every stage
    contracts at its recorded modulus.
    """
    if len(stages) == 0:
        raise ValueError("need at least one stage")
    out = np.empty(len(stages))
    out[0] = e1
    for i, rec in enumerate(stages[:-1]):
        out[i + 1] = out[i] * rec.phi ** rec.n_slots + rec.delta_next
    return out


def product_norm_bound_check(a, b, slack=1e-12):
    """Check ||A B||_2 >= lambda_min(A) ||B||_2 for SPD diagonal A, B."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim == 2:
        a = np.diagonal(a)
    if b.ndim == 2:
        b = np.diagonal(b)
    if np.min(a) <= 0 or np.min(b) <= 0:
        raise ValueError("inputs must be symmetric positive definite")
    return float(np.max(a * b)) >= float(np.min(a) * np.max(b)) - slack
