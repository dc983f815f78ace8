"""Finite-state Markov channel (FSMC) model.

Every scalar power-gain process is an ergodic Markov chain on a small set of
quantized gain levels with a circulant tridiagonal transition matrix: the
chain stays put with probability nu = 1 - 2*eps and hops to either cyclic
neighbour with probability eps.  The network-wide channel is the product of
K*K*N_F independent scalar chains, one per (receiver, transmitter,
subcarrier) triple.
"""

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-12


class StateSpaceTooLarge(ValueError):
    """Joint state enumeration refused because the product space is too big."""

    def __init__(self, q, cap):
        super().__init__(
            f"joint state space has {q} states, exceeding the enumeration cap {cap}"
        )
        self.q = q
        self.cap = cap


@dataclass(frozen=True)
class ScalarChain:
    """One quantized gain process: levels, transition matrix, stationary law."""

    levels: np.ndarray
    tpm: np.ndarray
    stationary: np.ndarray

    @property
    def num_states(self):
        return len(self.levels)


@dataclass(frozen=True, repr=False)
class FsmcSpec:
    """Network-wide channel: K*K*N_F independent scalar chains sharing eps.

    Chains are laid out flat in C order over (receiver k, transmitter j,
    subcarrier s); `level_table[c, i]` is the gain of chain c in level i,
    already scaled by the mean gain of its (k, j) pair.
    """

    K: int
    n_f: int
    epsilon: float
    q_levels: int
    mean_gains: np.ndarray          # (K, K, n_f)
    chains: tuple                   # length K*K*n_f, C order over (k, j, s)
    level_table: np.ndarray = field(default=None)  # (num_chains, q_levels)
    geometry: dict = field(default=None)

    @property
    def num_chains(self):
        return self.K * self.K * self.n_f

    @property
    def num_joint_states(self):
        return self.q_levels ** self.num_chains

    @property
    def nu(self):
        return 1.0 - 2.0 * self.epsilon if self.q_levels > 1 else 1.0

    def chain_index(self, k, j, s):
        return (k * self.K + j) * self.n_f + s

    def gains(self, state):
        """Gain tensor (K, K, n_f) for one joint state (flat index vector)."""
        state = np.asarray(state)
        flat = self.level_table[np.arange(self.num_chains), state]
        return flat.reshape(self.K, self.K, self.n_f)


@dataclass(frozen=True)
class ChannelTrace:
    """Time-ordered joint states plus the slots where any index changed."""

    states: np.ndarray              # (horizon, num_chains) int
    stage_boundaries: np.ndarray    # strictly increasing slot indices >= 1

    @property
    def horizon(self):
        return self.states.shape[0]

    def stage_lengths(self, drop_censored=True):
        """Lengths of the stages in slot counts.

        The final stage is truncated by the horizon; drop it by default so
        the lengths are honest draws of the sojourn time.
        """
        edges = np.concatenate(([0], self.stage_boundaries, [self.horizon]))
        lengths = np.diff(edges)
        if drop_censored and len(self.stage_boundaries) > 0:
            lengths = lengths[:-1]
        return lengths


def quantized_exponential_levels(q_levels, mean_gain=1.0):
    """Conditional means of an Exponential(mean_gain) law over equiprobable cells.

    The power gain of a Rayleigh-amplitude channel is exponential; the state
    space is built by partitioning that law into `q_levels` cells of equal
    probability and representing each cell by its conditional mean, which
    preserves the overall mean gain exactly.
    """
    if q_levels < 1:
        raise ValueError("q_levels must be >= 1")
    if mean_gain <= 0:
        raise ValueError("mean_gain must be positive")
    i = np.arange(q_levels) / q_levels
    # quantile edges of Exp(1); the implicit last edge is +inf, where
    # (1 + x) e^{-x} vanishes
    edges = -np.log1p(-i)
    w = np.append((1.0 + edges) * np.exp(-edges), 0.0)
    levels = q_levels * (w[:-1] - w[1:])
    return mean_gain * levels


def circulant_tridiagonal_tpm(q_levels, epsilon):
    """Transition matrix with diagonal 1-2*eps and cyclic-neighbour mass eps.

    For two states the two neighbour slots coincide, giving off-diagonal
    2*eps; a single state is absorbing.
    """
    if q_levels == 1:
        return np.ones((1, 1))
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    nu = 1.0 - 2.0 * epsilon
    tpm = np.zeros((q_levels, q_levels))
    idx = np.arange(q_levels)
    tpm[idx, idx] = nu
    tpm[idx, (idx + 1) % q_levels] += epsilon
    tpm[idx, (idx - 1) % q_levels] += epsilon
    return tpm


def build_scalar_chain(q_levels, epsilon, mean_gain):
    """Build one quantized gain chain.

    Levels are the equiprobable-cell conditional means of an exponential law
    with the given mean; the transition matrix is the circulant tridiagonal
    one, which is doubly stochastic, so the stationary law is uniform.
    """
    levels = quantized_exponential_levels(q_levels, mean_gain)
    tpm = circulant_tridiagonal_tpm(q_levels, epsilon)
    stationary = np.full(q_levels, 1.0 / q_levels)
    return ScalarChain(levels=levels, tpm=tpm, stationary=stationary)


def step_chain(chain, state, rng):
    """Draw the next level index given the current one."""
    q = chain.num_states
    if state >= q:
        raise ValueError(f"state {state} out of range for {q}-state chain")
    if q == 1:
        return 0
    row = chain.tpm[state]
    return int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))


def mean_gains_from_geometry(K, n_f, direct_distance, cross_distance,
                             path_loss_exponent=3.5):
    """Mean gain tensor from a two-distance layout, direct link normalized to 1."""
    direct = float(direct_distance) ** -path_loss_exponent
    cross = float(cross_distance) ** -path_loss_exponent
    g = np.full((K, K, n_f), cross / direct)
    for k in range(K):
        g[k, k, :] = 1.0
    return g


def build_fsmc_spec(K, n_f, q_levels, epsilon, mean_gains=None, geometry=None):
    """Assemble an FsmcSpec from either an explicit mean-gain tensor or geometry."""
    if K < 1 or n_f < 1:
        raise ValueError("K and n_f must be positive")
    if mean_gains is None:
        if geometry is None:
            raise ValueError("either mean_gains or geometry is required")
        mean_gains = mean_gains_from_geometry(
            K, n_f,
            geometry["direct_distance"], geometry["cross_distance"],
            geometry.get("path_loss_exponent", 3.5),
        )
    mean_gains = np.asarray(mean_gains, dtype=float)
    if mean_gains.shape != (K, K, n_f):
        raise ValueError(f"mean_gains must have shape {(K, K, n_f)}")
    if np.any(mean_gains < 0) or np.any(np.diagonal(mean_gains, axis1=0, axis2=1) <= 0):
        raise ValueError("gains must be nonnegative with positive direct gains")
    unit_levels = quantized_exponential_levels(q_levels, 1.0)
    tpm = circulant_tridiagonal_tpm(q_levels, epsilon)
    stationary = np.full(q_levels, 1.0 / q_levels)
    chains = tuple(
        ScalarChain(levels=unit_levels * mean_gains[k, j, s], tpm=tpm,
                    stationary=stationary)
        for k in range(K) for j in range(K) for s in range(n_f)
    )
    level_table = mean_gains.reshape(-1, 1) * unit_levels[None, :]
    return FsmcSpec(K=K, n_f=n_f, epsilon=float(epsilon), q_levels=int(q_levels),
                    mean_gains=mean_gains, chains=chains, level_table=level_table,
                    geometry=geometry)


def average_sojourn_time(nu, K, n_f):
    """Mean number of slots the joint chain spends in one state: 1/(1 - nu^(K^2*N_F))."""
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    return 1.0 / (1.0 - nu ** (K * K * n_f))


def epsilon_for_sojourn(n_bar, K, n_f):
    """Transition parameter eps giving the requested average sojourn time."""
    if n_bar <= 1.0:
        raise ValueError("average sojourn time must exceed 1 slot")
    nu = (1.0 - 1.0 / n_bar) ** (1.0 / (K * K * n_f))
    return (1.0 - nu) / 2.0


def sojourn_pmf(nu, K, n_f, l):
    """P(stage length = l): geometric with success probability 1 - nu^(K^2*N_F)."""
    if l < 1:
        raise ValueError("stage lengths start at 1")
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    stay = nu ** (K * K * n_f)
    return stay ** (l - 1) * (1.0 - stay)


class ChainWalker:
    """Incremental sampler of the joint chain, one substream per scalar chain.

    The circulant structure makes the one-step move distribution independent
    of the current level: +1 with probability eps, -1 with probability eps,
    stay otherwise (all modulo the level count).  Uniform draws are buffered
    per chain in blocks so stepping stays cheap even with thousands of chains.
    """

    def __init__(self, spec, rng, block=256):
        self.spec = spec
        self.block = int(block)
        self._gens = rng.spawn(spec.num_chains)
        self._buf = np.empty((spec.num_chains, self.block))
        self._pos = self.block
        q = spec.q_levels
        self.state = np.array(
            [int(g.integers(q)) for g in self._gens], dtype=np.int64
        )

    def _refill(self):
        for c, g in enumerate(self._gens):
            self._buf[c] = g.random(self.block)
        self._pos = 0

    def step(self):
        """Advance one slot; returns (state view, changed flag)."""
        spec = self.spec
        if spec.q_levels == 1:
            return self.state, False
        if self._pos >= self.block:
            self._refill()
        u = self._buf[:, self._pos]
        self._pos += 1
        move = np.where(u < spec.epsilon, 1, np.where(u < 2 * spec.epsilon, -1, 0))
        changed = bool(np.any(move != 0))
        if changed:
            self.state = (self.state + move) % spec.q_levels
        return self.state, changed


class BatchedChainWalker:
    """ChainWalker over several trials at once, states held as a (T, C) array.

    Trial t's chain c consumes exactly the same substream as a ChainWalker
    built from trial t's generator, so batched and one-at-a-time runs agree
    bit for bit.
    """

    def __init__(self, spec, trial_rngs, block=256):
        self.spec = spec
        self.block = int(block)
        self._gens = [rng.spawn(spec.num_chains) for rng in trial_rngs]
        self.trials = len(trial_rngs)
        self._buf = np.empty((self.trials, spec.num_chains, self.block))
        self._pos = self.block
        q = spec.q_levels
        self.states = np.array(
            [[int(g.integers(q)) for g in gens] for gens in self._gens],
            dtype=np.int64,
        )

    def _refill(self):
        for t, gens in enumerate(self._gens):
            for c, g in enumerate(gens):
                self._buf[t, c] = g.random(self.block)
        self._pos = 0

    def step(self):
        """Advance every trial one slot; returns (states, changed mask (T,))."""
        spec = self.spec
        if spec.q_levels == 1:
            return self.states, np.zeros(self.trials, dtype=bool)
        if self._pos >= self.block:
            self._refill()
        u = self._buf[:, :, self._pos]
        self._pos += 1
        move = np.where(u < spec.epsilon, 1, np.where(u < 2 * spec.epsilon, -1, 0))
        changed = np.any(move != 0, axis=1)
        self.states = (self.states + move) % spec.q_levels
        return self.states, changed


def sample_trace(spec, horizon, rng):
    """Run all scalar chains independently for `horizon` slots.

    Initial levels are drawn from the (uniform) stationary law; a stage
    boundary is recorded at every slot whose joint state differs from the
    previous one.  Consumes the per-chain substreams exactly as ChainWalker
    does, but generates each chain's whole path in one vectorized pass, so it
    only suits horizons whose full state array fits in memory.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    gens = rng.spawn(spec.num_chains)
    q = spec.q_levels
    dtype = np.int16 if q > 127 else np.int8
    states = np.empty((horizon, spec.num_chains), dtype=dtype)
    changed = np.zeros(horizon, dtype=bool)
    for c, g in enumerate(gens):
        s0 = int(g.integers(q))
        if q == 1 or horizon == 1:
            states[:, c] = s0
            continue
        u = g.random(horizon - 1)
        move = np.where(u < spec.epsilon, 1, np.where(u < 2 * spec.epsilon, -1, 0))
        path = (s0 + np.cumsum(move)) % q
        states[0, c] = s0
        states[1:, c] = path
        changed[1:] |= move != 0
    boundaries = np.flatnonzero(changed)
    return ChannelTrace(states=states, stage_boundaries=boundaries.astype(np.int64))


def enumerate_joint_states(spec, cap=4096):
    """All joint states in lexicographic order plus the joint transition matrix.

    The joint matrix is the Kronecker product of the scalar matrices, chain 0
    most significant, matching the lexicographic state order.  Refuses with
    the computed cardinality when the product space exceeds `cap`.
    """
    q = spec.num_joint_states
    if q > cap:
        raise StateSpaceTooLarge(q, cap)
    dims = (spec.q_levels,) * spec.num_chains
    states = np.stack(
        np.unravel_index(np.arange(q), dims), axis=-1
    ).astype(np.int16)
    joint = np.ones((1, 1))
    for chain in spec.chains:
        joint = np.kron(joint, chain.tpm)
    return states, joint


def state_index(spec, state):
    """Flat lexicographic index of a joint state (chain 0 most significant)."""
    dims = (spec.q_levels,) * spec.num_chains
    return int(np.ravel_multi_index(tuple(np.asarray(state)), dims))


def fsmc_spec_to_dict(spec):
    """JSON-ready dict; mean gains are written explicitly, geometry kept if known."""
    d = {
        "K": spec.K,
        "N_F": spec.n_f,
        "epsilon": spec.epsilon,
        "q_levels": spec.q_levels,
        "mean_gains": spec.mean_gains.tolist(),
    }
    if spec.geometry is not None:
        d["geometry"] = dict(spec.geometry)
    return d


def fsmc_spec_from_dict(d):
    """Inverse of fsmc_spec_to_dict; accepts geometry or an explicit tensor."""
    return build_fsmc_spec(
        K=int(d["K"]),
        n_f=int(d["N_F"]),
        q_levels=int(d["q_levels"]),
        epsilon=float(d["epsilon"]),
        mean_gains=np.asarray(d["mean_gains"], dtype=float) if "mean_gains" in d else None,
        geometry=d.get("geometry"),
    )
