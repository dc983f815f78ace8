"""Bundled invariant checks, runnable from the CLI as one command.

Each check returns (name, ok, detail); a failing check serializes the
offending instance next to the report so it can be replayed.  Instances
that merely violate the equilibrium-uniqueness certificate are reported as
non-certified warnings, not failures.
"""

import json
import os

import numpy as np

from . import analysis, game, network
from .channel import average_sojourn_time, sample_trace
from .power_control import (
    ADAPTIVE_DIAGONAL,
    ScalingPolicy,
    optimal_scaling,
    run_tracking_batch,
)
from . import mdp
from .experiments import run_cell, trial_streams, prepare_state_tables

FD_STEP = 1e-6


def _random_instance(rng, k_max=4, s_max=8, cross_scale=0.3):
    K = int(rng.integers(1, k_max + 1))
    n_f = int(rng.integers(1, s_max + 1))
    g = cross_scale * rng.random((K, K, n_f))
    for k in range(K):
        g[k, k] = 0.5 + rng.random(n_f)
    p = rng.random((K, n_f))
    sigma2 = 0.5 + rng.random()
    return g, p, sigma2


def fd_gradient(g, p, sigma2, k, lam, p_max_k, h=FD_STEP):
    grad = np.empty(p.shape[1])
    for s in range(p.shape[1]):
        hi = p.copy()
        lo = p.copy()
        hi[k, s] += h
        lo[k, s] -= h
        grad[s] = (network.lagrangian(g, hi, sigma2, k, lam, p_max_k)
                   - network.lagrangian(g, lo, sigma2, k, lam, p_max_k)) / (2 * h)
    return grad


def fd_hessian_block(g, p, sigma2, k, j, h=FD_STEP):
    n_f = p.shape[1]
    block = np.empty((n_f, n_f))
    for s in range(n_f):
        hi = p.copy()
        lo = p.copy()
        hi[j, s] += h
        lo[j, s] -= h
        block[:, s] = (network.gradient(g, hi, sigma2, k, 0.0)
                       - network.gradient(g, lo, sigma2, k, 0.0)) / (2 * h)
    return block


def _tol(value):
    return max(1e-6, 1e-4 * abs(value))


def check_gradient_fd(rng, instances=20):
    for _ in range(instances):
        g, p, sigma2 = _random_instance(rng)
        K = g.shape[0]
        for k in range(K):
            lam = float(rng.random())
            got = network.gradient(g, p, sigma2, k, lam)
            want = fd_gradient(g, p, sigma2, k, lam, 1.0)
            err = np.abs(got - want)
            if np.any(err > np.vectorize(_tol)(want)):
                return False, f"gradient mismatch {err.max():.3e}", {
                    "g": g.tolist(), "p": p.tolist(), "sigma2": sigma2,
                    "k": k, "lambda": lam}
    return True, f"{instances} instances", None


def check_hessian_fd(rng, instances=20):
    for _ in range(instances):
        g, p, sigma2 = _random_instance(rng)
        K = g.shape[0]
        for k in range(K):
            for j in range(K):
                got = network.hessian_block(g, p, sigma2, k, j)
                want = fd_hessian_block(g, p, sigma2, k, j)
                err = np.abs(got - want)
                tol = np.maximum(1e-6, 1e-4 * np.abs(want))
                if np.any(err > tol):
                    return False, f"hessian mismatch {err.max():.3e}", {
                        "g": g.tolist(), "p": p.tolist(), "sigma2": sigma2,
                        "k": k, "j": j}
    return True, f"{instances} instances", None


def check_modulus_bound(rng, instances=200):
    worst_gap = 0.0
    for _ in range(instances):
        g, p, sigma2 = _random_instance(rng, k_max=3, s_max=4)
        k = int(rng.integers(g.shape[0]))
        lower = analysis.modulus_lower_bound(g, k)
        d = np.exp(rng.normal(size=g.shape[2]))
        beta = analysis.contraction_modulus(g, p, sigma2, k, d)
        if beta < lower - 1e-12:
            return False, "random scaling beat the lower bound", {
                "g": g.tolist(), "p": p.tolist(), "sigma2": sigma2,
                "k": k, "d": d.tolist()}
        d_opt = optimal_scaling(g, p, sigma2, k)
        beta_opt = analysis.contraction_modulus(g, p, sigma2, k, d_opt)
        gap = abs(beta_opt - lower)
        worst_gap = max(worst_gap, gap)
        if gap > 1e-12:
            return False, f"optimal scaling missed the bound by {gap:.3e}", {
                "g": g.tolist(), "p": p.tolist(), "sigma2": sigma2, "k": k}
    return True, f"{instances} instances, worst equality gap {worst_gap:.2e}", None


def check_product_norm(rng, pairs=2000):
    for _ in range(pairs):
        n = int(rng.integers(1, 9))
        a = np.exp(rng.normal(size=n))
        b = np.exp(rng.normal(size=n))
        if not analysis.product_norm_bound_check(a, b):
            return False, "product norm inequality violated", {
                "a": a.tolist(), "b": b.tolist()}
    return True, f"{pairs} pairs", None


def check_waterfill_kkt(rng, instances=200):
    for _ in range(instances):
        n = int(rng.integers(1, 9))
        d = rng.random(n) + 0.1
        f = rng.random(n) + 0.1
        budget = 0.1 + 2 * rng.random()
        p = game.waterfill(d, f, budget)
        if p.sum() > budget + 1e-12 or np.any(p < 0):
            return False, "budget or positivity violated", {
                "d": d.tolist(), "f": f.tolist(), "budget": budget}
        marginal = d / (f + d * p)
        active = p > 1e-12
        if active.any():
            nus = marginal[active]
            nu_star = nus.mean()
            if np.max(np.abs(nus - nu_star)) > 1e-9:
                return False, "active marginals unequal", {
                    "d": d.tolist(), "f": f.tolist(), "budget": budget}
            if np.any(marginal[~active] > nu_star + 1e-9):
                return False, "inactive subcarrier beats the water level", {
                    "d": d.tolist(), "f": f.tolist(), "budget": budget}
    return True, f"{instances} instances", None


def check_ne_certification(config):
    spec = config.build_spec(config.epsilon[0])
    tables = prepare_state_tables(spec, config.sigma2,
                                  np.asarray(config.p_max),
                                  cap=config.enumeration_cap,
                                  tol=config.ne_tol)
    if tables is None:
        return True, "state space not enumerable; certification is per stage", None
    bad = int((~tables["certified"]).sum())
    total = len(tables["certified"])
    if bad:
        return True, f"non-certified: {bad}/{total} states (results flagged, not failed)", None
    return True, f"all {total} states certified", None


def check_static_convergence(config, seed):
    from .channel import build_fsmc_spec
    spec = config.build_spec(config.epsilon[0])
    spec1 = build_fsmc_spec(config.K, config.n_f, 1, 0.1,
                            mean_gains=spec.mean_gains)
    policy = ScalingPolicy(ADAPTIVE_DIAGONAL)
    traces = run_tracking_batch(spec1, policy, config.sigma2,
                                np.asarray(config.p_max), 400,
                                trial_streams(seed, 1),
                                dual_step=config.dual_step)
    tr = traces[0]
    beta = float(tr.moduli.max())
    d = tr.dist_to_ne
    if not np.any(d <= 1e-8):
        return False, "did not reach 1e-8 within 400 slots", {
            "final_error": float(d[-1]), "beta": beta}
    live = d[3:-1] > 1e-8
    ratios = d[4:][live] / d[3:-1][live]
    worst = float(ratios.max()) if ratios.size else 0.0
    if worst > beta + 0.05:
        return False, f"ratio {worst:.4f} exceeded beta+0.05 ({beta + 0.05:.4f})", {
            "beta": beta}
    return True, f"beta {beta:.3f}, worst ratio {worst:.3f}", None


def check_domination(config, seed, trials=100, horizon=400):
    spec = config.build_spec(config.epsilon[0])
    policy = ScalingPolicy(ADAPTIVE_DIAGONAL)
    traces = run_tracking_batch(spec, policy, config.sigma2,
                                np.asarray(config.p_max), horizon,
                                trial_streams(seed, trials),
                                dual_step=config.dual_step)
    beta = max(float(t.moduli.max()) for t in traces)
    if beta >= 1.0:
        return True, f"beta {beta:.3f} >= 1: domination cap void (non-certified)", None
    delta = traces[0].delta_enumerated
    if delta is None:
        return True, "state space not enumerable; cap check skipped", None
    cap = delta * beta / (1.0 - beta)
    for t_index, tr in enumerate(traces):
        recs = analysis.stage_records(tr)
        dom = analysis.dominated_error_process(recs, recs[0].e_init)
        e_init = np.array([r.e_init for r in recs])
        if np.any(e_init > dom + 1e-9):
            worst = float((e_init - dom).max())
            return False, f"stage-initial error exceeded dominated value by {worst:.3e}", {
                "trial": t_index}
        if np.any(dom > cap + 1e-9):
            return False, f"dominated value exceeded cap {cap:.4f}", {
                "trial": t_index, "max_dom": float(dom.max())}
    return True, f"{trials} trials, cap {cap:.3f}", None


def check_bounds_vs_empirical(config, seed):
    spec = config.build_spec(config.epsilon[0])
    tables = prepare_state_tables(spec, config.sigma2,
                                  np.asarray(config.p_max),
                                  cap=config.enumeration_cap,
                                  tol=config.ne_tol)
    cell = run_cell(config, spec, ADAPTIVE_DIAGONAL, seed, tables=tables)
    bounds = cell.bounds(config.K, config.n_f)
    if bounds is None:
        return True, f"beta {cell.beta_max:.3f} >= 1 (non-certified); bounds void", None
    if cell.eae > bounds.eae_bound * 1.2:
        return False, f"EAE {cell.eae:.4e} above 1.2x bound {bounds.eae_bound:.4e}", None
    if cell.mse > bounds.mse_bound * 1.2:
        return False, f"MSE {cell.mse:.4e} above 1.2x bound {bounds.mse_bound:.4e}", None
    if cell.p_region > bounds.p_region_bound + 2 * cell.p_region_se + 1e-12:
        return False, f"P_region {cell.p_region:.4e} above bound", None
    return True, (f"EAE {cell.eae:.3e} <= {bounds.eae_bound:.3e}, "
                  f"MSE {cell.mse:.3e} <= {bounds.mse_bound:.3e}"), None


def check_mdp_greedy():
    tpm = np.array([[0.9, 0.1], [0.1, 0.9]])
    jumps = np.array([[0.0, 0.05], [0.05, 0.0]])
    betas = np.array([0.3, 0.7])
    grid = mdp.error_grid(jumps.max(), betas.max(), levels=2)
    kernel = mdp.mdp_kernel(grid, tpm, jumps, betas, nu=0.9, K=1, n_f=1)
    cost = mdp.per_state_cost(grid, 2)
    theta, _, greedy = mdp.relative_value_iteration(kernel, cost, tol=1e-10)
    best, _ = mdp.enumerate_stationary_policies(kernel, cost)
    min_beta = np.zeros(kernel.shape[1], dtype=int)
    theta_min = mdp.policy_average_cost(kernel, cost, min_beta)
    if not np.array_equal(greedy, min_beta):
        return False, "greedy policy is not the min-modulus policy", None
    if theta_min > best + 1e-9:
        return False, f"min-modulus cost {theta_min:.6e} above enumerated best {best:.6e}", None
    return True, f"theta {theta:.6f} matches enumerated best {best:.6f}", None


def check_sojourn_mean(config, seed, target_stages=20000):
    spec = config.build_spec(config.epsilon[0])
    n_bar = average_sojourn_time(spec.nu, spec.K, spec.n_f)
    horizon = int(target_stages * n_bar) + 1
    rng = trial_streams(seed, 1)[0]
    trace = sample_trace(spec, horizon, rng)
    lengths = trace.stage_lengths()
    if len(lengths) < 100:
        return False, "too few stages observed", None
    rel = abs(lengths.mean() - n_bar) / n_bar
    if rel > 0.02:
        return False, f"mean stage length off by {rel:.2%}", None
    return True, f"{len(lengths)} stages, mean {lengths.mean():.3f} vs {n_bar:.3f}", None


def verify_suite(config, seed=None, out_dir="out"):
    """Run every bundled check; returns (all passed, list of report lines)."""
    seed = config.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(777,))))
    checks = [
        ("gradient-fd", lambda: check_gradient_fd(rng)),
        ("hessian-fd", lambda: check_hessian_fd(rng)),
        ("modulus-lower-bound", lambda: check_modulus_bound(rng)),
        ("product-norm", lambda: check_product_norm(rng)),
        ("waterfill-kkt", lambda: check_waterfill_kkt(rng)),
        ("ne-certification", lambda: check_ne_certification(config)),
        ("static-convergence", lambda: check_static_convergence(config, seed)),
        ("lemma-domination", lambda: check_domination(config, seed)),
        ("bounds-vs-empirical", lambda: check_bounds_vs_empirical(config, seed)),
        ("mdp-greedy", check_mdp_greedy),
        ("sojourn-mean", lambda: check_sojourn_mean(config, seed)),
    ]
    lines = []
    all_ok = True
    for name, fn in checks:
        result = fn()
        ok, detail, offending = result if len(result) == 3 else (*result, None)
        status = "PASS" if ok else "FAIL"
        lines.append(f"[{status}] {name}: {detail}")
        if not ok:
            all_ok = False
            if offending is not None:
                path = os.path.join(out_dir, f"offending_{name}.json")
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(offending, fh, indent=2)
                lines.append(f"        offending instance: {path}")
    return all_ok, lines
