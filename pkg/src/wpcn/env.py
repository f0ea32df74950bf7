"""Per-slot physics of the multi-cell WPCN.

Each H-AP ``i`` transfers energy for ``tau[i]`` seconds and then listens to its
user for the rest of the slot.  Sorting the split points partitions the slot
into ``N + 1`` intervals during which every cell's mode is fixed; rates and
harvested energy are sums over those intervals.

Rates are returned in nats per slot (the interval-duration-weighted sum before
division by ``T``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import LinkGains
from .errors import ConstraintError, DomainError, InvalidArgumentError

__all__ = [
    "SlotSchedule",
    "build_schedule",
    "EhModel",
    "eh_transfer",
    "interference",
    "rate",
    "harvested_energy",
    "SlotOutcome",
    "step",
    "BUDGET_TOL",
]

BUDGET_TOL = 1e-12  # joules


@dataclass(frozen=True)
class SlotSchedule:
    tau: np.ndarray  # (N,) seconds
    T: float
    mu: np.ndarray  # (N,) cell indices in ascending tau order (0-based)
    boundaries: np.ndarray  # (N+2,) interval endpoints
    b: np.ndarray  # (N+1, N) 1.0 where the H-AP receives WIT

    @property
    def n_cells(self) -> int:
        return self.tau.shape[0]

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.boundaries)


def build_schedule(tau, T: float, eps_tau: float | None = None) -> SlotSchedule:
    """Interval structure induced by the WET durations ``tau``.

    ``eps_tau`` defaults to ``T / 100``.  Ties are ordered by cell index.
    """
    tau = np.asarray(tau, dtype=float).reshape(-1)
    if eps_tau is None:
        eps_tau = T / 100.0
    upper = T - eps_tau
    if not np.all(np.isfinite(tau)) or np.any(tau < 0) or np.any(tau > upper * (1 + 1e-12)):
        raise DomainError(f"tau must lie in [0, {upper}], got {tau}")
    mu = np.argsort(tau, kind="stable")
    boundaries = np.concatenate(([0.0], tau[mu], [T]))
    b = (tau[None, :] < boundaries[1:, None]).astype(float)
    return SlotSchedule(tau, float(T), mu, boundaries, b)


@dataclass(frozen=True)
class EhModel:
    """Energy-harvesting circuit response.

    ``linear``: ``eta * x``.  ``nonlinear``: logistic saturation at ``a3`` watts,
    ``a3 (1 - exp(-a1 x)) / (1 + exp(-a1 x + a2))``.
    """

    kind: str = "linear"
    eta: float = 0.5
    a1: float = 1.5e3
    a2: float = 3.3
    a3: float = 2.8e-3

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise InvalidArgumentError(f"unknown EH model {self.kind!r}")
        if not (0.0 < self.eta <= 1.0):
            raise InvalidArgumentError("eta must lie in (0, 1]")

    def __call__(self, x):
        return eh_transfer(self, x)


def eh_transfer(model: EhModel, x):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise DomainError("EH input power must be nonnegative")
    if model.kind == "linear":
        out = model.eta * arr
    else:
        e = np.exp(-model.a1 * arr)
        out = model.a3 * (1.0 - e) / (1.0 + e * math.exp(model.a2))
    return float(out) if out.ndim == 0 else out


def interference(sched: SlotSchedule, gains: LinkGains, p, n: int, j: int, i: int,
                 P: float, beta: float) -> tuple[float, float]:
    """WIT interference and cross-link WET interference from cell ``j`` at
    H-AP ``i`` during interval ``n`` (0-based)."""
    if i == j:
        raise InvalidArgumentError("interference needs two distinct cells")
    if not (0 <= n <= sched.n_cells):
        raise InvalidArgumentError(f"interval index {n} out of range")
    bj = sched.b[n, j]
    return float(gains.h[j, i] * p[j] * bj), float(beta * gains.g[j, i] * P * (1.0 - bj))


def _interference_tensor(sched: SlotSchedule, gains: LinkGains, p: np.ndarray,
                         P: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    # I[n, j, i] and D[n, j, i], zero on j == i
    b = sched.b
    I = b[:, :, None] * (gains.h * p[:, None])[None, :, :]
    D = (1.0 - b)[:, :, None] * (beta * P * gains.g)[None, :, :]
    idx = np.arange(sched.n_cells)
    I[:, idx, idx] = 0.0
    D[:, idx, idx] = 0.0
    return I, D


def _rates_from_interference(sched, gains, p, sigma2, total):
    # total[n, j, i]: interference from j at i; returns rates (N,) and excl (N, N)
    n_cells = sched.n_cells
    dur = sched.durations
    signal = np.diag(gains.h) * p  # (N,)
    S = total.sum(axis=1)  # (N+1, N)
    w = dur[:, None] * sched.b  # (N+1, N)
    rates = (w * np.log1p(signal[None, :] / (sigma2 + S))).sum(axis=0)
    # excl[j, i]: rate of user j without cell i -> S[:, j] - total[:, i, j]
    S_ex = S[:, :, None] - np.transpose(total, (0, 2, 1))  # [n, j, i]
    S_ex = np.maximum(S_ex, 0.0)
    excl = (w[:, :, None] * np.log1p(signal[None, :, None] / (sigma2 + S_ex))).sum(axis=0)
    idx = np.arange(n_cells)
    excl[idx, idx] = rates
    return rates, excl


def rate(sched: SlotSchedule, gains: LinkGains, p, sigma2: float, i: int,
         exclude: int | None = None, *, P: float, beta: float) -> float:
    """Achievable rate of user ``i`` in nats per slot, optionally with cell
    ``exclude`` removed from the interference sum."""
    if not sigma2 > 0:
        raise InvalidArgumentError("noise power must be positive")
    p = np.asarray(p, dtype=float)
    I, D = _interference_tensor(sched, gains, p, P, beta)
    tot = I + D
    if exclude is not None:
        tot[:, exclude, :] = 0.0
    S = tot[:, :, i].sum(axis=1)
    sinr = gains.h[i, i] * p[i] / (sigma2 + S)
    return float(np.sum(sched.durations * sched.b[:, i] * np.log1p(sinr)))


def _energy_per_interval(sched, gains, model, P):
    # E[n, j, i] power-domain contribution of H-AP j to user i (before duration)
    wet = 1.0 - sched.b  # (N+1, N)
    x = P * gains.h.T[None, :, :] * wet[:, None, :] * wet[:, :, None]
    return eh_transfer(model, x)


def harvested_energy(sched: SlotSchedule, gains: LinkGains, model: EhModel,
                     P: float, i: int | None = None):
    """Energy (J) harvested by user ``i``, or by every user when ``i`` is None."""
    contrib = _energy_per_interval(sched, gains, model, P)
    energies = (sched.durations[:, None] * contrib.sum(axis=1)).sum(axis=0)
    return energies if i is None else float(energies[i])


@dataclass(frozen=True)
class SlotOutcome:
    schedule: SlotSchedule
    p: np.ndarray
    rates: np.ndarray  # (N,) nats per slot
    rates_excl: np.ndarray  # (N, N): [j, i] = rate of j without cell i; diagonal = rates
    energies: np.ndarray  # (N,) joules
    rewards: np.ndarray  # (N,)
    wit_interference: np.ndarray  # (N+1, N, N) I[n, j, i], watts
    wet_interference: np.ndarray  # (N+1, N, N) D[n, j, i], watts

    @property
    def sum_rate(self) -> float:
        """Objective value in nats/s."""
        return float(self.rates.sum() / self.schedule.T)


def price_rewards(rates: np.ndarray, rates_excl: np.ndarray) -> np.ndarray:
    """``r_i = R_i - sum_{j != i} (R_{j\\i} - R_j)``, accumulated in ascending ``j``."""
    n = rates.shape[0]
    out = np.empty(n)
    for i in range(n):
        price = 0.0
        for j in range(n):
            if j != i:
                price += float(rates_excl[j, i]) - float(rates[j])
        out[i] = float(rates[i]) - price
    return out


def step(gains: LinkGains, tau, p, model: EhModel, P: float, sigma2: float,
         beta: float, T: float, eps_tau: float | None = None,
         energies: np.ndarray | None = None) -> SlotOutcome:
    """Evaluate one slot for realized WET durations ``tau`` and powers ``p``.

    Raises ConstraintError if any user spends more than it harvested.
    """
    if not sigma2 > 0:
        raise InvalidArgumentError("noise power must be positive")
    sched = build_schedule(tau, T, eps_tau)
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape != sched.tau.shape or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("powers must be finite, nonnegative, one per cell")
    if energies is None:
        energies = harvested_energy(sched, gains, model, P)
    spent = (T - sched.tau) * p
    over = spent - energies
    if np.any(over > BUDGET_TOL):
        bad = int(np.argmax(over))
        raise ConstraintError(
            f"cell {bad} spends {spent[bad]:.6g} J but harvested {energies[bad]:.6g} J")
    I, D = _interference_tensor(sched, gains, p, P, beta)
    rates, excl = _rates_from_interference(sched, gains, p, sigma2, I + D)
    return SlotOutcome(sched, p, rates, excl, np.asarray(energies, dtype=float),
                       price_rewards(rates, excl), I, D)
