"""Experiment configuration: a JSON-backed dataclass with validation."""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .channel import build_fsmc_spec
from .power_control import POLICY_KINDS


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    K: int
    n_f: int
    q_levels: int
    epsilon: list            # one entry per sweep point
    sigma2: float
    p_max: list              # per-link budgets, Watts
    horizon: int
    trials: int
    seed: int = 0
    geometry: dict = None
    mean_gains: list = None
    policies: list = field(default_factory=lambda: list(POLICY_KINDS))
    alpha: float = 0.05
    dual_step: object = "exact"
    con_stepsize: float = 0.005
    burn_in: int = None
    enumeration_cap: int = 4096
    ne_tol: float = 1e-10
    ne_cache_size: int = 512
    capacity_stride: int = None
    record_capacity: bool = True

    def __post_init__(self):
        if np.isscalar(self.epsilon):
            self.epsilon = [float(self.epsilon)]
        else:
            self.epsilon = [float(e) for e in self.epsilon]
        if np.isscalar(self.p_max):
            self.p_max = [float(self.p_max)] * int(self.K)
        else:
            self.p_max = [float(v) for v in self.p_max]
        self.validate()

    def validate(self):
        if self.K < 1 or self.n_f < 1 or self.q_levels < 1:
            raise ConfigError("K, n_f and q_levels must be positive")
        if self.q_levels > 1:
            for e in self.epsilon:
                if not 0.0 < e < 0.5:
                    raise ConfigError(f"epsilon {e} outside (0, 0.5)")
        if self.sigma2 <= 0:
            raise ConfigError("sigma2 must be positive")
        if len(self.p_max) != self.K or any(v <= 0 for v in self.p_max):
            raise ConfigError("p_max needs one positive budget per link")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.burn_in is not None and self.horizon <= self.burn_in:
            raise ConfigError("horizon must exceed the burn-in")
        if self.alpha <= 0 or self.con_stepsize <= 0:
            raise ConfigError("stepsizes must be positive")
        unknown = set(self.policies) - set(POLICY_KINDS)
        if unknown:
            raise ConfigError(f"unknown policies: {sorted(unknown)}")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        if self.geometry is None and self.mean_gains is None:
            raise ConfigError("either geometry or mean_gains is required")
        if isinstance(self.dual_step, str):
            if self.dual_step not in ("exact", "newton", "fixed"):
                raise ConfigError("dual_step must be exact, newton, fixed, "
                                  "or a number")
        elif float(self.dual_step) <= 0:
            raise ConfigError("a numeric dual_step must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def build_spec(self, epsilon):
        """FSMC spec for one sweep point."""
        mean_gains = None
        if self.mean_gains is not None:
            mean_gains = np.asarray(self.mean_gains, dtype=float)
        return build_fsmc_spec(self.K, self.n_f, self.q_levels, epsilon,
                               mean_gains=mean_gains, geometry=self.geometry)

    def stride(self):
        if self.capacity_stride is not None:
            return max(1, int(self.capacity_stride))
        return max(1, self.horizon // 2000)

    def to_dict(self):
        return asdict(self)


def config_from_dict(data):
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
