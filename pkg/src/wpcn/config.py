"""Experiment configuration: flat ``key = value`` files plus overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .channel import db_to_linear, dbm_to_watts, time_correlation
from .env import EhModel
from .errors import ConfigError

__all__ = ["ExperimentConfig", "load_config", "parse_value", "POLICIES"]

POLICIES = ("madrl", "naive", "pgd", "oracle")


@dataclass
class ExperimentConfig:
    n_cells: int = 5
    T: float = 0.02
    f_d: float = 10.0
    P_dbm: float = 30.0
    sigma2_dbm: float = -50.0
    beta_db: float = -50.0
    eh_model: str = "linear"
    eta: float = 0.5
    a1: float = 1.5e3
    a2: float = 3.3
    a3: float = 2.8e-3
    K_T: int = 20
    K_P: int = 20
    eps_tau_fraction: float = 0.01
    alpha_C: float = 1e-5
    alpha_A: float = 1e-5
    gamma: float = 0.5
    train_slots: int = 100_000
    test_slots: int = 10_000
    warmup_slots: int = 1000
    seeds: tuple = tuple(range(50))
    policy: str = "madrl"
    critic_hidden: tuple = (200, 200, 100, 70)
    actor_trunk: tuple = (200, 200)
    actor_head: tuple = (200, 200)
    actor_out_scale: float = 0.01
    hap_user_distance: float = 10.0
    hap_spacing: float = 15.0
    pathloss_exponent: float = 3.0
    pgd_precision: float = 1e-2
    oracle_K: int = 20
    ma_window: int = 1000
    greedy_eval: bool = False
    checkpoint_every: int = 0
    # independent stream seeds; None means "use the run seed"
    channel_seed: int | None = None
    init_seed: int | None = None
    policy_seed: int | None = None

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.critic_hidden = tuple(int(w) for w in self.critic_hidden)
        self.actor_trunk = tuple(int(w) for w in self.actor_trunk)
        self.actor_head = tuple(int(w) for w in self.actor_head)
        self.validate()

    def validate(self) -> None:
        if self.n_cells < 1:
            raise ConfigError("n_cells must be >= 1")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.eh_model not in ("linear", "nonlinear"):
            raise ConfigError(f"eh_model must be 'linear' or 'nonlinear', got {self.eh_model!r}")
        if self.K_T < 2 or self.K_P < 2:
            raise ConfigError("K_T and K_P must be >= 2")
        if not (0 < self.eps_tau_fraction < 1):
            raise ConfigError("eps_tau_fraction must lie in (0, 1)")
        if not (0 < self.gamma <= 1):
            raise ConfigError("gamma must lie in (0, 1]")
        if self.train_slots < 0 or self.test_slots < 0 or self.warmup_slots < 1:
            raise ConfigError("slot counts must be nonnegative (warm-up >= 1)")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not self.actor_trunk:
            raise ConfigError("actor trunk needs at least one hidden layer")

    # derived physical quantities
    @property
    def P(self) -> float:
        return dbm_to_watts(self.P_dbm)

    @property
    def sigma2(self) -> float:
        return dbm_to_watts(self.sigma2_dbm)

    @property
    def beta(self) -> float:
        return db_to_linear(self.beta_db)

    @property
    def eps_tau(self) -> float:
        return self.eps_tau_fraction * self.T

    @property
    def rho(self) -> float:
        return time_correlation(self.f_d, self.T)

    def eh(self) -> EhModel:
        return EhModel(self.eh_model, self.eta, self.a1, self.a2, self.a3)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, pairs: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in pairs.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = (parse_value(key, raw, getattr(self, key))
                            if isinstance(raw, str) else raw)
        return self.replace(**changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TUPLE_KEYS = ("seeds", "critic_hidden", "actor_trunk", "actor_head")
_OPTIONAL_INT = ("channel_seed", "init_seed", "policy_seed")


def parse_value(key: str, raw: str, default=None):
    raw = raw.strip()
    try:
        if key in _TUPLE_KEYS:
            if key == "seeds" and ":" in raw:
                lo, hi = raw.split(":")
                return tuple(range(int(lo), int(hi)))
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if key in _OPTIONAL_INT:
            return None if raw.lower() in ("none", "") else int(raw)
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return (base or ExperimentConfig()).with_overrides(pairs)
