"""Distributed scaled gradient projection power control.

Each slot, every transmitter updates its dual variable and then takes a
scaled, projected gradient step using only local quantities: its own direct
gains, its current powers, and the received power profile fed back by its
receiver.  Four scaling-matrix policies are provided:

- ``adaptive-diagonal``: diagonal scaling matched to the local curvature of
  the capacity, recomputed every slot (the proposed scheme; it minimizes the
  per-link contraction modulus).
- ``full-matrix``: centralized benchmark; symmetrized Jacobian of the stacked
  gradient map, eigenvalue-floored, recomputed every slot.
- ``frozen-diagonal``: the adaptive diagonal computed once at slot 0, then
  kept fixed.
- ``constant-step``: scaling (1/xi) * I, i.e. a plain projected gradient step
  with constant stepsize xi.

The dual variable supports three modes.  ``exact`` (default) picks the
multiplier that makes the update equal to the scaled-metric projection onto
the budget simplex, which is the reading of dual exact line search under
which the contraction theory actually applies.  ``newton`` takes one
curvature-matched dual step per slot, and a float gives the classic fixed
stepsize subgradient update.
"""

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .channel import BatchedChainWalker
from .game import block_max_distance, solve_ne
from .network import received_power_profile

ADAPTIVE_DIAGONAL = "adaptive-diagonal"
FULL_MATRIX = "full-matrix"
FROZEN_DIAGONAL = "frozen-diagonal"
CONSTANT_STEP = "constant-step"
POLICY_KINDS = (ADAPTIVE_DIAGONAL, FULL_MATRIX, FROZEN_DIAGONAL, CONSTANT_STEP)

SCALING_FLOOR = 1e-9        # keeps dead subcarriers invertible
EIGENVALUE_FLOOR = 1e-6     # positive definiteness floor for the full matrix


@dataclass(frozen=True)
class ScalingPolicy:
    """Which scaling matrices the transmitters use, and whether they freeze."""

    kind: str
    con_stepsize: float = 0.005
    freeze_at_init: bool = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.con_stepsize <= 0:
            raise ValueError("con_stepsize must be positive")
        if self.freeze_at_init is None:
            frozen = self.kind in (FROZEN_DIAGONAL, CONSTANT_STEP)
            object.__setattr__(self, "freeze_at_init", frozen)


def project_nonneg(v):
    """Componentwise max with zero."""
    return np.maximum(np.asarray(v), 0.0)


def lambda_update(lambda_k, alpha, p_max_k, p_k):
    """Projected dual subgradient step on the sum-power constraint."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return max(lambda_k - alpha * (p_max_k - np.sum(p_k)), 0.0)


def power_update(p_k, scaling, f_k):
    """Projected scaled gradient step [p + D^-1 f]^+ for one link.

    `scaling` is either the diagonal of D (1-D array) or a full SPD matrix;
    a scaling within 1e-12 of singular is refused so a caller must
    regularize instead of silently blowing up.
    """
    scaling = np.asarray(scaling, dtype=float)
    if scaling.ndim == 1:
        if np.min(scaling) < 1e-12:
            raise ValueError("scaling diagonal is singular or indefinite")
        step = f_k / scaling
    else:
        w = np.linalg.eigvalsh(scaling)
        if w.min() < 1e-12:
            raise ValueError("scaling matrix is singular or indefinite")
        step = np.linalg.solve(scaling, f_k)
    return project_nonneg(p_k + step)


def optimal_scaling(g, p, sigma2, k):
    """Curvature-matched diagonal scaling, the per-link modulus minimizer.

    Equals minus the own-block second derivative of the capacity:
    diag(g_kk^2 / rho_k^2), floored so dead subcarriers stay invertible.
    """
    rho = received_power_profile(g, p, sigma2, k)
    return np.maximum((g[k, k] / rho) ** 2, SCALING_FLOOR)


def _full_matrix_scaling(g, p, sigma2):
    """Symmetrized stacked-gradient Jacobian, floored; per-subcarrier blocks.

    Every second-derivative block is diagonal over subcarriers, so the big
    K*n_f matrix splits into n_f independent K x K blocks after reordering;
    flooring the eigenvalues per block is identical to flooring the big
    matrix.  Returns (inverse blocks (n_f, K, K), diagonal entries (K, n_f)).
    """
    gg = g[None] if g.ndim == 3 else g
    pp = p[None] if p.ndim == 2 else p
    inv, diag = _full_matrix_scaling_batch(gg, pp, sigma2)
    if g.ndim == 3:
        return inv[0], diag[0]
    return inv, diag


def _full_matrix_scaling_batch(g, p, sigma2):
    rho = sigma2 + np.einsum("tkjs,tjs->tks", g, p)
    gkk = np.einsum("tkks->tks", g)
    f1 = gkk / rho ** 2                              # (T, K, S)
    b = np.moveaxis(g, 3, 1) * np.moveaxis(f1, 2, 1)[..., :, None]
    m = 0.5 * (b + b.swapaxes(-1, -2))               # (T, S, K, K)
    w, v = np.linalg.eigh(m)
    w = np.maximum(w, EIGENVALUE_FLOOR)
    inv = np.einsum("...ij,...j,...kj->...ik", v, 1.0 / w, v)
    diag = np.einsum("...ij,...j,...ij->...i", v, w, v)   # (T, S, K)
    return inv, np.moveaxis(diag, 1, 2)


def make_scaling(policy, g, p, sigma2, initial=None):
    """Scaling matrices for all links under the given policy.

    Returns ("diag", (K, n_f) array of diagonals) for the diagonal policies
    or ("block", (n_f, K, K) inverse blocks, (K, n_f) diagonals) for the
    full-matrix one.  Frozen policies return `initial` untouched once it
    exists; slot 0 computes it.
    """
    K, n_f = p.shape
    if policy.freeze_at_init and initial is not None:
        return initial
    if policy.kind == CONSTANT_STEP:
        return "diag", np.full((K, n_f), 1.0 / policy.con_stepsize)
    if policy.kind == FULL_MATRIX:
        inv, diag = _full_matrix_scaling(g, p, sigma2)
        return "block", inv, diag
    d = np.stack([optimal_scaling(g, p, sigma2, k) for k in range(K)])
    return "diag", d


def _exact_multiplier_diag(y, w, p_max):
    """Multipliers making [y - lam*w]^+ land on the budget simplex.

    y and w are (..., K, n_f) with w > 0 and y >= 0; p_max broadcasts over
    links.  Sort-based exact solve per (trial, link); links already inside
    their budget get lam = 0.
    """
    over = y.sum(-1) > p_max
    tau = y / w
    order = np.argsort(-tau, axis=-1)
    tau_s = np.take_along_axis(tau, order, -1)
    y_c = np.cumsum(np.take_along_axis(y, order, -1), axis=-1)
    w_c = np.cumsum(np.take_along_axis(w, order, -1), axis=-1)
    lam_c = (y_c - p_max[..., None]) / w_c
    ok = lam_c < tau_s
    last = ok.shape[-1] - 1 - np.argmax(ok[..., ::-1], axis=-1)
    lam = np.take_along_axis(lam_c, last[..., None], -1)[..., 0]
    lam = np.where(over, np.maximum(lam, 0.0), 0.0)
    p_new = np.maximum(y - lam[..., None] * w, 0.0)
    return lam, p_new


def _exact_multiplier_block(p_t, grad_t, inv_blocks, p_max, tol=1e-10, sweeps=80):
    """Exact multipliers for the full-matrix policy by Gauss-Seidel over links.

    Arrays are subcarrier-major: p_t, grad_t are (T, n_f, K) and inv_blocks
    is (T, n_f, K, K).  Each link's multiplier is bisected to budget
    feasibility holding the others fixed; the sweep loop is deterministic
    and stops when every budget is met within tol.
    """
    t_dim, n_f, K = p_t.shape
    base = p_t + np.einsum("tsij,tsj->tsi", inv_blocks, grad_t)
    lam = np.zeros((t_dim, K))

    def powers(lam_):
        return np.maximum(base - np.einsum("tsij,tj->tsi", inv_blocks, lam_), 0.0)

    for _ in range(sweeps):
        for k in range(K):
            off = base[:, :, k] - (
                np.einsum("tsj,tj->ts", inv_blocks[:, :, k, :], lam)
                - inv_blocks[:, :, k, k] * lam[:, k, None]
            )
            ckk = inv_blocks[:, :, k, k]
            tot0 = np.maximum(off, 0.0).sum(-1)
            hi = np.max(np.maximum(off, 0.0) / ckk, axis=-1) + 1.0
            lo = np.zeros(t_dim)
            need = tot0 > p_max[k]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                tot = np.maximum(off - ckk * mid[:, None], 0.0).sum(-1)
                lo = np.where(tot > p_max[k], mid, lo)
                hi = np.where(tot > p_max[k], hi, mid)
            lam[:, k] = np.where(need, 0.5 * (lo + hi), 0.0)
        p_new = powers(lam)
        gap = p_new.sum(1) - p_max[None, :]
        violation = np.maximum(gap, 0.0)
        slack_ok = (lam <= 0) | (np.abs(gap) <= tol)
        if violation.max() <= tol and slack_ok.all():
            break
    return lam, powers(lam)


def _policy_moduli(g, rho, d, gkk):
    """Per-link contraction moduli for diagonal scalings, batched.

    g is (T, K, K, n_f); d and gkk are (T, K, n_f).  Uses the diagonality of
    every second-derivative block: modulus = max_s |1 - h_s/d_s| plus the
    cross terms sum_j max_s (g_kk g_kj / rho^2) / d.
    """
    hess = (gkk / rho) ** 2
    a = hess / d
    term1 = np.max(np.abs(1.0 - a), axis=-1)
    cross = g * (gkk / rho ** 2 / d)[:, :, None, :]
    cross_max = cross.max(axis=-1)
    return term1 + cross_max.sum(axis=-1) - a.max(axis=-1)


def _coupling_per_link(g):
    """sum_{j != k} max_s g_kj/g_kk for every link; batched over (T, K, K, S)."""
    gkk = np.einsum("tkks->tks", g)
    ratio = g / gkk[:, :, None, :]
    r = ratio.max(axis=-1)
    idx = np.arange(g.shape[1])
    return r.sum(axis=-1) - r[:, idx, idx]


@dataclass
class TrackingTrace:
    """Per-slot record of one tracking run.

    Distances are block-max distances between the iterate and the NE of the
    slot's channel state.  `min_dist` additionally minimizes over the NEs of
    every enumerated state (present only when the state space was
    enumerable).  Stage arrays are indexed by stage, slot arrays by slot;
    `stage_starts[m]` is the first slot of stage m (stage 0 starts at 0).
    """

    policy_kind: str
    dual_step: object
    sigma2: float
    p_max: np.ndarray
    dist_to_ne: np.ndarray
    moduli: np.ndarray
    stage_ids: np.ndarray
    stage_starts: np.ndarray
    stage_states: np.ndarray
    stage_state_keys: list
    ne_by_stage: np.ndarray
    stage_end_dist: np.ndarray = None   # last entry NaN (censored by horizon)
    lambdas: np.ndarray = None
    powers: np.ndarray = None
    capacities: np.ndarray = None
    min_dist: np.ndarray = None
    delta_enumerated: float = None

    @property
    def horizon(self):
        return len(self.dist_to_ne)

    @property
    def num_stages(self):
        return len(self.stage_starts)

    def stage_lengths(self):
        edges = np.concatenate((self.stage_starts, [self.horizon]))
        return np.diff(edges)


class _NeCache:
    """LRU cache of equilibria keyed by joint-state bytes, with a running
    max-pairwise-distance estimate of the NE spread."""

    def __init__(self, spec, sigma2, p_max, tol, maxsize):
        self.spec = spec
        self.sigma2 = sigma2
        self.p_max = np.asarray(p_max, dtype=float)
        self.tol = tol
        self.maxsize = maxsize
        self._cache = OrderedDict()
        self.delta_estimate = 0.0

    def lookup(self, state):
        key = np.ascontiguousarray(state).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        sol = solve_ne(self.spec.gains(state), self.sigma2, self.p_max,
                       tol=self.tol)
        for other in self._cache.values():
            self.delta_estimate = max(
                self.delta_estimate, block_max_distance(sol.p_star, other)
            )
        self._cache[key] = sol.p_star
        if len(self._cache) > self.maxsize:
            self._cache.popitem(last=False)
        return sol.p_star


def prepare_state_tables(spec, sigma2, p_max, cap=4096, tol=1e-10):
    """Enumerate the joint states and solve every NE once, for reuse.

    Returns a dict with the state list, per-state NE table, pairwise NE
    distances with their maximum delta, and per-state per-link coupling
    (the modulus of the curvature-matched policy).  Returns None when the
    state space exceeds the cap.
    """
    from .channel import enumerate_joint_states, StateSpaceTooLarge
    from .game import ne_distance_table

    try:
        states, joint_tpm = enumerate_joint_states(spec, cap=cap)
    except StateSpaceTooLarge:
        return None
    solutions, dist, delta = ne_distance_table(states, spec, sigma2, p_max, tol=tol)
    ne_table = np.stack([s.p_star for s in solutions])
    certified = np.array([s.certified for s in solutions])
    q = len(states)
    gains = spec.level_table[np.arange(spec.num_chains), states.astype(np.int64)]
    gains = gains.reshape(q, spec.K, spec.K, spec.n_f)
    coupling = _coupling_per_link(gains)
    return {
        "states": states,
        "joint_tpm": joint_tpm,
        "ne_table": ne_table,
        "ne_distances": dist,
        "delta": delta,
        "coupling": coupling,
        "certified": certified,
    }


def run_tracking_batch(spec, policy, sigma2, p_max, horizon, trial_rngs,
                       alpha=0.05, dual_step="exact", ne_cap=4096,
                       ne_tol=1e-10, ne_cache_size=512, tables=None,
                       record_powers=False, record_lambdas=False,
                       record_capacity=False):
    """Run the slot loop for several trials at once, vectorized over trials.

    Trials share nothing but code: trial t's channel substreams are derived
    from trial_rngs[t] alone, so the batch reproduces independent runs bit
    for bit regardless of batch size.  Returns one TrackingTrace per trial.
    """
    p_max = np.asarray(p_max, dtype=float)
    K, n_f, T = spec.K, spec.n_f, len(trial_rngs)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if dual_step == "fixed":
        dual_step = float(alpha)
    if isinstance(dual_step, str) and dual_step not in ("exact", "newton"):
        raise ValueError("dual_step must be 'exact', 'newton', 'fixed', or a stepsize")
    if dual_step == "newton" and policy.kind == FULL_MATRIX:
        raise ValueError("newton dual step is only defined for diagonal scalings")

    if tables is None:
        tables = prepare_state_tables(spec, sigma2, p_max, cap=ne_cap, tol=ne_tol)
    enumerable = tables is not None
    if enumerable:
        strides = (spec.q_levels ** np.arange(spec.num_chains - 1, -1, -1)).astype(np.int64)
        ne_table = tables["ne_table"]
        coupling_table = tables["coupling"]
        delta = tables["delta"]
    else:
        cache = _NeCache(spec, sigma2, p_max, ne_tol, ne_cache_size)

    walker = BatchedChainWalker(spec, trial_rngs)
    states = walker.states
    chain_rows = np.arange(spec.num_chains)

    p = np.broadcast_to(p_max[:, None] / n_f, (T, K, n_f)).copy()
    lam = np.broadcast_to(0.5 * n_f / p_max, (T, K)).copy()

    dist = np.empty((T, horizon))
    moduli = np.empty((T, horizon, K))
    stage_ids = np.empty((T, horizon), dtype=np.int32)
    min_dist = np.empty((T, horizon)) if enumerable else None
    lambdas = np.empty((T, horizon, K)) if record_lambdas else None
    powers = np.empty((T, horizon, K, n_f)) if record_powers else None
    capacities = np.empty((T, horizon, K)) if record_capacity else None

    stage_starts = [[0] for _ in range(T)]
    stage_states = [[states[t].copy()] for t in range(T)]
    stage_ne = [[] for _ in range(T)]
    stage_end = [[] for _ in range(T)]       # dist of the next iterate to the
    stage_counter = np.zeros(T, dtype=np.int32)  # stage's own NE, per stage

    cur_ne = np.empty((T, K, n_f))
    cur_coupling = np.empty((T, K))
    frozen = None
    ids = None

    def refresh_state_data(mask):
        nonlocal ids
        if enumerable:
            ids = states @ strides
            sel = np.flatnonzero(mask)
            cur_ne[sel] = ne_table[ids[sel]]
            cur_coupling[sel] = coupling_table[ids[sel]]
        else:
            for t in np.flatnonzero(mask):
                cur_ne[t] = cache.lookup(states[t])
            g_sel = spec.level_table[chain_rows, states[mask]].reshape(
                -1, K, K, n_f)
            cur_coupling[mask] = _coupling_per_link(g_sel)

    refresh_state_data(np.ones(T, dtype=bool))
    for t in range(T):
        stage_ne[t].append(cur_ne[t].copy())

    for n in range(horizon):
        g = spec.level_table[chain_rows, states].reshape(T, K, K, n_f)
        gkk = np.einsum("tkks->tks", g)
        rho = sigma2 + np.einsum("tkjs,tjs->tks", g, p)

        diff = p - cur_ne
        dist[:, n] = np.sqrt(np.sum(diff * diff, axis=-1)).max(axis=-1)
        stage_ids[:, n] = stage_counter
        if enumerable:
            md = dist[:, n].copy()
            far = md > delta
            if far.any():
                dd = p[far][:, None] - ne_table[None, :]
                md[far] = np.sqrt(np.sum(dd * dd, axis=-1)).max(-1).min(-1)
            min_dist[:, n] = md
        if record_lambdas:
            lambdas[:, n] = lam
        if record_powers:
            powers[:, n] = p
        if record_capacity:
            own = gkk * p
            capacities[:, n] = np.log1p(own / (rho - own)).sum(-1)

        grad = gkk / rho
        if policy.kind == FULL_MATRIX:
            inv_blocks, diag = _full_matrix_scaling_batch(g, p, sigma2)
            moduli[:, n] = _policy_moduli(g, rho, diag, gkk)
            p_t = np.moveaxis(p, 2, 1)
            grad_t = np.moveaxis(grad, 2, 1)
            if dual_step == "exact":
                lam, p_t_new = _exact_multiplier_block(
                    p_t, grad_t, inv_blocks, p_max)
            else:
                lam = np.maximum(lam - dual_step * (p_max - p.sum(-1)), 0.0)
                step = np.einsum("tsij,tsj->tsi", inv_blocks,
                                 grad_t - np.moveaxis(
                                     np.broadcast_to(lam[..., None], grad.shape),
                                     2, 1))
                p_t_new = np.maximum(p_t + step, 0.0)
            p = np.moveaxis(p_t_new, 1, 2).copy()
        else:
            if policy.kind == ADAPTIVE_DIAGONAL:
                d = np.maximum((gkk / rho) ** 2, SCALING_FLOOR)
                moduli[:, n] = cur_coupling
            elif policy.kind == CONSTANT_STEP:
                if frozen is None:
                    frozen = np.full((T, K, n_f), 1.0 / policy.con_stepsize)
                d = frozen
                moduli[:, n] = _policy_moduli(g, rho, d, gkk)
            else:
                if frozen is None:
                    frozen = np.maximum((gkk / rho) ** 2, SCALING_FLOOR)
                d = frozen
                moduli[:, n] = _policy_moduli(g, rho, d, gkk)

            if dual_step == "exact":
                y = p + grad / d
                lam, p = _exact_multiplier_diag(y, 1.0 / d, p_max)
            else:
                if dual_step == "newton":
                    step_size = 1.0 / (1.0 / d).sum(-1)
                else:
                    step_size = dual_step
                lam = np.maximum(lam - step_size * (p_max - p.sum(-1)), 0.0)
                p = np.maximum(p + (grad - lam[..., None]) / d, 0.0)

        if n < horizon - 1:
            states, changed = walker.step()
            if changed.any():
                ends = p[changed] - cur_ne[changed]
                ends = np.sqrt(np.sum(ends * ends, axis=-1)).max(axis=-1)
                refresh_state_data(changed)
                stage_counter[changed] += 1
                for i, t in enumerate(np.flatnonzero(changed)):
                    stage_starts[t].append(n + 1)
                    stage_states[t].append(states[t].copy())
                    stage_ne[t].append(cur_ne[t].copy())
                    stage_end[t].append(float(ends[i]))

    traces = []
    for t in range(T):
        st = np.asarray(stage_states[t], dtype=np.int16)
        if enumerable:
            keys = [str(int(s @ strides)) for s in st.astype(np.int64)]
        else:
            keys = [hashlib.sha1(np.ascontiguousarray(s).tobytes()).hexdigest()[:12]
                    for s in st]
        traces.append(TrackingTrace(
            policy_kind=policy.kind,
            dual_step=dual_step,
            sigma2=sigma2,
            p_max=p_max,
            dist_to_ne=dist[t],
            moduli=moduli[t],
            stage_ids=stage_ids[t],
            stage_starts=np.asarray(stage_starts[t], dtype=np.int64),
            stage_states=st,
            stage_state_keys=keys,
            ne_by_stage=np.asarray(stage_ne[t]),
            stage_end_dist=np.asarray(stage_end[t] + [np.nan]),
            lambdas=lambdas[t] if record_lambdas else None,
            powers=powers[t] if record_powers else None,
            capacities=capacities[t] if record_capacity else None,
            min_dist=min_dist[t] if enumerable else None,
            delta_enumerated=delta if enumerable else None,
        ))
    return traces


def run_tracking(spec, policy, sigma2, p_max, alpha, horizon, rng,
                 dual_step="exact", **kwargs):
    """Single-trial tracking run; see run_tracking_batch for semantics."""
    return run_tracking_batch(
        spec, policy, sigma2, p_max, horizon, [rng],
        alpha=alpha, dual_step=dual_step, **kwargs,
    )[0]


def trace_to_csv_rows(trace):
    """Flatten a fully recorded trace into spec'd CSV rows.

    Yields (slot, stage, state_index_or_hash, k, s, power, lambda, beta_k,
    dist_to_ne_block); requires powers and lambdas to have been recorded.
    """
    if trace.powers is None or trace.lambdas is None:
        raise ValueError("trace was run without power/lambda recording")
    K, n_f = trace.powers.shape[1:]
    for n in range(trace.horizon):
        m = int(trace.stage_ids[n])
        key = trace.stage_state_keys[m]
        for k in range(K):
            for s in range(n_f):
                yield (n, m, key, k, s,
                       trace.powers[n, k, s],
                       trace.lambdas[n, k],
                       trace.moduli[n, k],
                       trace.dist_to_ne[n])
