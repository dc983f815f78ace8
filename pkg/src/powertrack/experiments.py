"""Monte Carlo orchestration and CSV emission.

One experiment = a sweep over fading speeds (epsilon values) and scaling
policies; each (epsilon, policy) cell is a batch of seeded trials sharing
the channel substreams across policies so scheme comparisons use common
random numbers.  Everything written to disk is a deterministic function of
(config, seed): trial t chain c draws from a Philox stream keyed
(seed, t, c), trials are reduced in index order, and floats are written via
repr, so reruns are byte-identical.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import analysis, game, mdp, network
from .channel import average_sojourn_time, enumerate_joint_states, sample_trace, sojourn_pmf
from .power_control import (
    ADAPTIVE_DIAGONAL,
    CONSTANT_STEP,
    ScalingPolicy,
    prepare_state_tables,
    run_tracking_batch,
)

SCHEMA_VERSION = 1

CSV_HEADERS = {
    "capacity.csv": ["policy", "epsilon", "slot", "sum_capacity",
                     "norm_sum_utility", "norm_link_capacity"],
    "region.csv": ["policy", "epsilon", "nu", "n_bar", "inv_n_bar",
                   "p_region", "p_region_se", "p_region_bound", "region_exact"],
    "eae.csv": ["policy", "epsilon", "nu", "n_bar", "inv_n_bar",
                "eae", "eae_se", "eae_norm", "eae_bound"],
    "mse.csv": ["policy", "epsilon", "nu", "n_bar", "inv_n_bar",
                "mse", "mse_se", "mse_norm", "mse_bound"],
    "sweep.csv": ["policy", "epsilon", "nu", "n_bar", "inv_n_bar",
                  "beta_max", "delta", "burn_in", "eae", "eae_se", "mse",
                  "mse_se", "p_region", "p_region_se", "eae_bound",
                  "mse_bound", "p_region_bound", "region_exact"],
    "ne_table.csv": ["state_index", "k", "s", "power"],
    "mdp_report.csv": ["quantity", "value"],
}


def trial_streams(seed, trials):
    """Independent per-trial root generators keyed (seed, trial)."""
    return [
        np.random.Generator(np.random.Philox(
            np.random.SeedSequence(entropy=seed, spawn_key=(t,))))
        for t in range(trials)
    ]


def _fmt(value):
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_manifest(out_dir, files):
    path = os.path.join(out_dir, "manifest.json")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "files": {os.path.basename(f): CSV_HEADERS[os.path.basename(f)]
                  for f in files},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass
class CellResult:
    """Reduced metrics of one (policy, epsilon) batch of trials."""

    policy: str
    epsilon: float
    nu: float
    n_bar: float
    beta_max: float
    delta: float
    region_exact: bool
    burn_in: int
    eae_trials: np.ndarray
    mse_trials: np.ndarray
    region_trials: np.ndarray
    capacity: np.ndarray = None      # (slots/stride, K) trial-averaged
    traces: list = None

    @property
    def eae(self):
        return float(self.eae_trials.mean())

    @property
    def eae_se(self):
        return _standard_error(self.eae_trials)

    @property
    def mse(self):
        return float(self.mse_trials.mean())

    @property
    def mse_se(self):
        return _standard_error(self.mse_trials)

    @property
    def p_region(self):
        return float(self.region_trials.mean())

    @property
    def p_region_se(self):
        return _standard_error(self.region_trials)

    def bounds(self, K, n_f):
        if self.beta_max >= 1.0:
            return None
        return analysis.theoretical_bounds(self.beta_max, self.delta, self.nu,
                                           K, n_f)


def _standard_error(values):
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def run_cell(config, spec, policy_kind, seed, tables=None, keep_traces=False):
    """Run all trials of one (policy, epsilon) cell and reduce them."""
    policy = ScalingPolicy(kind=policy_kind, con_stepsize=config.con_stepsize)
    rngs = trial_streams(seed, config.trials)
    traces = run_tracking_batch(
        spec, policy, config.sigma2, np.asarray(config.p_max), config.horizon,
        rngs, alpha=config.alpha, dual_step=config.dual_step,
        ne_cap=config.enumeration_cap, ne_tol=config.ne_tol,
        ne_cache_size=config.ne_cache_size, tables=tables,
        record_capacity=config.record_capacity,
    )
    nu = spec.nu
    n_bar = average_sojourn_time(nu, spec.K, spec.n_f) if nu < 1 else float("inf")
    beta_max = float(max(t.moduli.max() for t in traces))
    if traces[0].delta_enumerated is not None:
        delta = traces[0].delta_enumerated
        region_exact = True
    else:
        delta = 0.0
        region_exact = False
    if config.burn_in is not None:
        burn_in = config.burn_in
    else:
        finite_nbar = n_bar if np.isfinite(n_bar) else 1.0
        burn_in = min(analysis.default_burn_in(finite_nbar, min(beta_max, 1.0)),
                      config.horizon // 4)
    eae = np.empty(len(traces))
    mse = np.empty(len(traces))
    region = np.empty(len(traces))
    for i, tr in enumerate(traces):
        eae[i], mse[i] = analysis.tracking_errors(tr, burn_in)
        if tr.min_dist is not None:
            region[i] = analysis.region_stats(tr, delta, burn_in)
        else:
            d = tr.dist_to_ne[burn_in:]
            delta = max(delta, 0.0)
            region[i] = float(np.mean(d > delta)) if delta > 0 else 0.0
    capacity = None
    if config.record_capacity:
        stride = config.stride()
        caps = np.stack([t.capacities[::stride] for t in traces])
        capacity = caps.mean(axis=0)
    return CellResult(
        policy=policy_kind, epsilon=spec.epsilon, nu=nu, n_bar=n_bar,
        beta_max=beta_max, delta=delta, region_exact=region_exact,
        burn_in=burn_in, eae_trials=eae, mse_trials=mse, region_trials=region,
        capacity=capacity, traces=traces if keep_traces else None,
    )


def run_sweep_cells(config, seed, epsilon_list=None, keep_traces=False):
    """All (epsilon, policy) cells with shared per-epsilon NE tables."""
    cells = []
    for eps in (epsilon_list if epsilon_list is not None else config.epsilon):
        spec = config.build_spec(eps)
        tables = prepare_state_tables(
            spec, config.sigma2, np.asarray(config.p_max),
            cap=config.enumeration_cap, tol=config.ne_tol,
        )
        for policy_kind in config.policies:
            cells.append(run_cell(config, spec, policy_kind, seed,
                                  tables=tables, keep_traces=keep_traces))
    return cells


def _sweep_rows(cells, config):
    norm_eae = max(c.eae for c in cells) or 1.0
    norm_mse = max(c.mse for c in cells) or 1.0
    rows = {"region": [], "eae": [], "mse": [], "sweep": []}
    for c in cells:
        b = c.bounds(config.K, config.n_f)
        eae_bound = b.eae_bound if b else None
        mse_bound = b.mse_bound if b else None
        pr_bound = b.p_region_bound if b else None
        inv = 1.0 / c.n_bar if np.isfinite(c.n_bar) else 0.0
        rows["region"].append([c.policy, c.epsilon, c.nu, c.n_bar, inv,
                               c.p_region, c.p_region_se, pr_bound,
                               int(c.region_exact)])
        rows["eae"].append([c.policy, c.epsilon, c.nu, c.n_bar, inv,
                            c.eae, c.eae_se, c.eae / norm_eae, eae_bound])
        rows["mse"].append([c.policy, c.epsilon, c.nu, c.n_bar, inv,
                            c.mse, c.mse_se, c.mse / norm_mse, mse_bound])
        rows["sweep"].append([c.policy, c.epsilon, c.nu, c.n_bar, inv,
                              c.beta_max, c.delta, c.burn_in, c.eae, c.eae_se,
                              c.mse, c.mse_se, c.p_region, c.p_region_se,
                              eae_bound, mse_bound, pr_bound,
                              int(c.region_exact)])
    return rows


def _capacity_rows(cells, config):
    rows = []
    stride = config.stride()
    for c in cells:
        if c.capacity is None:
            continue
        sum_cap = c.capacity.sum(axis=1)
        max_sum = sum_cap.max() or 1.0
        max_link = c.capacity.max() or 1.0
        mean_link = c.capacity.mean(axis=1)
        for i, sc in enumerate(sum_cap):
            rows.append([c.policy, c.epsilon, i * stride, sc, sc / max_sum,
                         mean_link[i] / max_link])
    return rows


def run_experiment(config, seed=None, out_dir="out"):
    """Full experiment: tracking timelines plus the three sweep figures.

    Emits capacity.csv (sum capacity vs slot, both normalizations),
    region.csv, eae.csv and mse.csv (each metric vs inverse sojourn time
    with bounds), plus a manifest with the schema version.
    """
    seed = config.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    cells = run_sweep_cells(config, seed)
    rows = _sweep_rows(cells, config)
    paths = [
        write_csv(os.path.join(out_dir, "capacity.csv"),
                  CSV_HEADERS["capacity.csv"], _capacity_rows(cells, config)),
        write_csv(os.path.join(out_dir, "region.csv"),
                  CSV_HEADERS["region.csv"], rows["region"]),
        write_csv(os.path.join(out_dir, "eae.csv"),
                  CSV_HEADERS["eae.csv"], rows["eae"]),
        write_csv(os.path.join(out_dir, "mse.csv"),
                  CSV_HEADERS["mse.csv"], rows["mse"]),
    ]
    write_manifest(out_dir, paths)
    return paths


def sweep_sojourn(config, epsilon_list=None, seed=None, out_dir="out"):
    """One row per (policy, epsilon): sojourn time, errors, and bounds."""
    seed = config.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    cells = run_sweep_cells(config, seed, epsilon_list=epsilon_list)
    rows = _sweep_rows(cells, config)
    path = write_csv(os.path.join(out_dir, "sweep.csv"),
                     CSV_HEADERS["sweep.csv"], rows["sweep"])
    write_manifest(out_dir, [path])
    return path


def export_ne_table(config, seed=None, out_dir="out"):
    """Solve the NE of every enumerated state of the first sweep point."""
    os.makedirs(out_dir, exist_ok=True)
    spec = config.build_spec(config.epsilon[0])
    states, _ = enumerate_joint_states(spec, cap=config.enumeration_cap)
    rows = []
    for idx, state in enumerate(states):
        sol = game.solve_ne(spec.gains(state), config.sigma2,
                            np.asarray(config.p_max), tol=config.ne_tol)
        for k in range(spec.K):
            for s in range(spec.n_f):
                rows.append([idx, k, s, sol.p_star[k, s]])
    path = write_csv(os.path.join(out_dir, "ne_table.csv"),
                     CSV_HEADERS["ne_table.csv"], rows)
    write_manifest(out_dir, [path])
    return path


def mdp_verify(config, seed=None, out_dir="out", levels=8, actions=4,
               tol=1e-9):
    """Desk-scale optimality check of the min-modulus scaling policy.

    Builds the error/channel MDP from the first sweep point's enumerated
    states, runs relative value iteration, exact policy iteration, and the
    constant min-modulus policy, and reports their average costs.
    """
    os.makedirs(out_dir, exist_ok=True)
    spec = config.build_spec(config.epsilon[0])
    tables = prepare_state_tables(spec, config.sigma2,
                                  np.asarray(config.p_max),
                                  cap=config.enumeration_cap,
                                  tol=config.ne_tol)
    if tables is None:
        raise ValueError("state space too large for the MDP check")
    coupling = tables["coupling"].max(axis=1)
    beta_hi = min(float(coupling.max()), 0.95)
    beta_lo = max(min(beta_hi / 8.0, 0.05), 1e-3)
    betas = np.geomspace(beta_lo, max(beta_hi, 2 * beta_lo), actions)
    delta = max(tables["delta"], 1e-6)
    grid = mdp.error_grid(delta, betas.max(), levels=levels)
    kernel = mdp.mdp_kernel(grid, tables["joint_tpm"], tables["ne_distances"],
                            betas, spec.nu, spec.K, spec.n_f)
    cost = mdp.per_state_cost(grid, tables["joint_tpm"].shape[0])
    theta_rvi, _, greedy = mdp.relative_value_iteration(kernel, cost, tol=tol)
    theta_pi, _, pi_policy = mdp.policy_iteration(kernel, cost)
    min_beta_policy = np.full(kernel.shape[1], int(np.argmin(betas)))
    theta_min_beta = mdp.policy_average_cost(kernel, cost, min_beta_policy)
    rows = [
        ["theta_rvi", theta_rvi],
        ["theta_policy_iteration", theta_pi],
        ["theta_min_beta", theta_min_beta],
        ["greedy_is_min_beta", int(np.array_equal(greedy, min_beta_policy))],
        ["gap_min_beta_vs_optimal", theta_min_beta - theta_pi],
    ]
    path = write_csv(os.path.join(out_dir, "mdp_report.csv"),
                     CSV_HEADERS["mdp_report.csv"], rows)
    write_manifest(out_dir, [path])
    return path, dict(rows)
