"""One actor-critic agent per H-AP, trained only from local information.

An agent sees its own previous action, its own link gain at the previous and
current slot, its previous rate, and three sensed quantities per foreign cell
(harvestable energy, WIT interference and WET interference observed under the
previous slot's actions).  Rewards are assembled from price messages sent by
the other H-APs over the backhaul.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .env import SlotOutcome, SlotSchedule
from .errors import InvalidArgumentError, NumericError, ProtocolError
from .nn import DenseNet, TwoHeadActorNet, apply_factors, log_prob_grad_seed

log = logging.getLogger(__name__)

__all__ = [
    "ActionSpaces",
    "realize_action",
    "sense_external",
    "raw_state",
    "state_size",
    "StateNormalizer",
    "td_error",
    "Agent",
    "PriceMessage",
    "price_messages",
    "agent_reward",
    "exchange_prices",
]

LOG_FLOOR = 1e-30
CLIP = 5.0


@dataclass(frozen=True)
class ActionSpaces:
    K_T: int = 20
    K_P: int = 20
    T: float = 0.02
    eps_tau: float | None = None

    def __post_init__(self):
        if self.K_T < 2 or self.K_P < 2:
            raise InvalidArgumentError("quantization levels must be >= 2")
        if not self.T > 0:
            raise InvalidArgumentError("slot duration must be positive")

    @property
    def eps(self) -> float:
        return self.T / 100.0 if self.eps_tau is None else self.eps_tau

    @property
    def tau_max(self) -> float:
        return self.T - self.eps

    def tau_of(self, k_tau: int) -> float:
        if not (0 <= k_tau < self.K_T):
            raise InvalidArgumentError(f"time index {k_tau} out of range")
        return k_tau * self.tau_max / (self.K_T - 1)

    def power_of(self, k_p: int, energy: float, tau: float) -> float:
        """Spend ``k_p / (K_P - 1)`` of the harvested energy over the WIT phase."""
        if not (0 <= k_p < self.K_P):
            raise InvalidArgumentError(f"power index {k_p} out of range")
        if energy < 0:
            raise InvalidArgumentError("harvested energy must be nonnegative")
        return k_p * energy / ((self.K_P - 1) * (self.T - tau))

    def tau_grid(self) -> np.ndarray:
        return np.arange(self.K_T) * self.tau_max / (self.K_T - 1)


def realize_action(k_tau: int, k_p: int, energy: float, spaces: ActionSpaces):
    tau = spaces.tau_of(k_tau)
    return tau, spaces.power_of(k_p, energy, tau)


def state_size(n_cells: int) -> int:
    return 5 + 3 * (n_cells - 1)


def sense_external(i: int, prev_sched: SlotSchedule, gains, prev_p, P: float, eta: float,
                   beta: float) -> np.ndarray:
    """Sensed ``(E_hat, I_hat, D_hat)`` rows for every foreign cell ``j != i``
    in ascending ``j``.

    Durations and modes come from the previous slot's schedule, gains from the
    current slot.
    """
    dur = prev_sched.durations
    b = prev_sched.b
    wet = 1.0 - b
    n = prev_sched.n_cells
    rows = []
    for j in range(n):
        if j == i:
            continue
        e_hat = eta * P * np.sum(dur * gains.h[i, j] * wet[:, i] * wet[:, j])
        i_hat = np.sum(dur * gains.h[j, i] * prev_p[j] * b[:, j])
        d_hat = beta * np.sum(dur * gains.g[j, i] * wet[:, j])
        rows.append((e_hat, i_hat, d_hat))
    return np.array(rows, dtype=float).reshape(n - 1, 3)


def raw_state(prev_tau: float, prev_p: float, prev_gain: float, gain: float,
              prev_rate: float, external: np.ndarray) -> np.ndarray:
    """Unnormalized layout: ``[tau, p, h_prev, h_now, R_prev, (E, I, D) per j]``."""
    return np.concatenate(([prev_tau, prev_p, prev_gain, gain, prev_rate],
                           np.asarray(external, dtype=float).reshape(-1)))


class StateNormalizer:
    """Maps a raw state to the network input.

    Powers, gains and sensed quantities go through ``log10(x + 1e-30)`` and a
    per-feature affine map frozen after calibration.  The WET duration is
    divided by ``T`` and the rate by ``rate_scale``.
    """

    def __init__(self, n_cells: int, T: float, rate_scale: float = 1.0):
        self.n_cells = n_cells
        self.T = T
        self.rate_scale = rate_scale
        size = state_size(n_cells)
        self.log_idx = np.array([1, 2, 3] + list(range(5, size)))
        self.mean = np.zeros(self.log_idx.size)
        self.scale = np.ones(self.log_idx.size)

    @classmethod
    def calibrate(cls, samples, n_cells: int, T: float, P: float, sigma2: float):
        samples = np.asarray(samples, dtype=float)
        norm = cls(n_cells, T)
        h_max = float(np.max(samples[:, 3]))
        norm.rate_scale = T * math.log1p(P * h_max / sigma2)
        logs = np.log10(samples[:, norm.log_idx] + LOG_FLOOR)
        norm.mean = logs.mean(axis=0)
        std = logs.std(axis=0)
        norm.scale = np.where(std > 1e-12, std, 1.0)
        return norm

    def __call__(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        out = raw.copy()
        out[0] = raw[0] / self.T
        out[4] = raw[4] / self.rate_scale
        z = (np.log10(raw[self.log_idx] + LOG_FLOOR) - self.mean) / self.scale
        out[self.log_idx] = np.clip(z, -CLIP, CLIP)
        return out

    def to_dict(self) -> dict:
        return {"n_cells": self.n_cells, "T": self.T, "rate_scale": self.rate_scale,
                "mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StateNormalizer":
        norm = cls(int(d["n_cells"]), float(d["T"]), float(d["rate_scale"]))
        norm.mean = np.array(d["mean"], dtype=float)
        norm.scale = np.array(d["scale"], dtype=float)
        return norm


def td_error(critic: DenseNet, s, s_next, r: float, gamma: float) -> float:
    v = float(critic.predict(s)[0])
    v_next = float(critic.predict(s_next)[0])
    return r + gamma * v_next - v


class Agent:
    """Actor and critic of one H-AP, plus its private sampling stream."""

    def __init__(self, index: int, actor: TwoHeadActorNet, critic: DenseNet | None,
                 spaces: ActionSpaces, rng: np.random.Generator,
                 normalizer: StateNormalizer | None = None,
                 alpha_C: float = 1e-5, alpha_A: float = 1e-5, gamma: float = 0.5,
                 greedy: bool = False):
        if actor.k_time != spaces.K_T or actor.k_power != spaces.K_P:
            raise InvalidArgumentError("actor head widths do not match the action spaces")
        self.index = index
        self.actor = actor
        self.critic = critic
        self.spaces = spaces
        self.rng = rng
        self.normalizer = normalizer
        self.alpha_C = alpha_C
        self.alpha_A = alpha_A
        self.gamma = gamma
        self.greedy = greedy
        self._probs = None
        self._pending_time = None

    def _draw(self, probs: np.ndarray) -> int:
        if self.greedy:
            return int(np.argmax(probs))
        # inverse-CDF on one uniform keeps the stream usage fixed per draw
        u = self.rng.random()
        k = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
        return min(k, probs.size - 1)

    def choose_time(self, s) -> int:
        """First phase of a slot: run the actor on ``s`` and draw the time index."""
        self._probs = self.actor.forward(s)
        self._pending_time = self._draw(self._probs[0])
        return self._pending_time

    def choose_power(self) -> int:
        """Third phase: draw the power index from the cached power head."""
        if self._probs is None:
            raise ProtocolError("power requested before the time decision of this slot")
        return self._draw(self._probs[1])

    def sample_action(self, s) -> tuple[int, int]:
        return self.choose_time(s), self.choose_power()

    @property
    def probs(self):
        return self._probs

    def update(self, s, k_tau: int, k_p: int, s_next, r: float) -> float:
        """One A2C step for the transition ``(s, a, r, s_next)``.

        The actor's cached forward pass must be for ``s``.  Returns the TD
        error; raises NumericError (no parameter touched) if it is not finite.
        """
        if self.critic is None:
            raise ProtocolError("agent has no critic; it was built for evaluation only")
        v_next = float(self.critic.predict(s_next)[0])
        v = float(self.critic.forward(s)[0])
        delta = r + self.gamma * v_next - v
        if not math.isfinite(delta):
            raise NumericError(f"agent {self.index}: non-finite TD error")
        # delta folded into the output seeds; the sign convention is gradient ascent
        c_fac, _ = self.critic.backward_factors(np.array([delta]))
        pt, pp = self._probs
        a_fac = self.actor.backward_factors(delta * log_prob_grad_seed(pt, k_tau),
                                            delta * log_prob_grad_seed(pp, k_p))
        for dz, _ in a_fac:
            if not np.isfinite(np.sum(dz)):
                raise NumericError(f"agent {self.index}: non-finite actor gradient")
        apply_factors(self.critic, c_fac, self.alpha_C, "ascent")
        apply_factors(self.actor, a_fac, self.alpha_A, "ascent")
        return delta


@dataclass(frozen=True)
class PriceMessage:
    sender: int
    receiver: int
    value: float  # rate of the sender's user without the receiver's cell
    own_rate: float  # sender's actual rate in the same slot
    slot: int


def price_messages(j: int, outcome: SlotOutcome, slot: int) -> list[PriceMessage]:
    """Messages H-AP ``j`` sends, computed from its own rates only."""
    n = outcome.rates.shape[0]
    own = float(outcome.rates[j])
    return [PriceMessage(j, i, float(outcome.rates_excl[j, i]), own, slot)
            for i in range(n) if i != j]


def agent_reward(i: int, own_rate: float, inbox, n_cells: int, slot: int) -> float:
    """``R_i - sum_j (R_{j\\i} - R_j)`` over messages addressed to ``i``."""
    by_sender = {}
    for m in inbox:
        if m.receiver != i or m.slot != slot:
            raise ProtocolError(f"message {m} delivered to agent {i} in slot {slot}")
        by_sender[m.sender] = m
    missing = [j for j in range(n_cells) if j != i and j not in by_sender]
    if missing:
        raise ProtocolError(f"agent {i} is missing price messages from {missing}")
    price = 0.0
    for j in range(n_cells):
        if j != i:
            m = by_sender[j]
            price += m.value - m.own_rate
    return own_rate - price


def exchange_prices(outcome: SlotOutcome, slot: int) -> np.ndarray:
    """Deliver every H-AP's price messages and return the per-agent rewards."""
    n = outcome.rates.shape[0]
    inboxes = {i: [] for i in range(n)}
    for j in range(n):
        for m in price_messages(j, outcome, slot):
            inboxes[m.receiver].append(m)
    return np.array([agent_reward(i, float(outcome.rates[i]), inboxes[i], n, slot)
                     for i in range(n)])
