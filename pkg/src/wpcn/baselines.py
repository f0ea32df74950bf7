"""Centralized reference solvers for the per-slot sum-rate problem.

All three solvers see the full channel state.  They serve as yardsticks for the
distributed agents: ``naive_policy`` is the equal-split heuristic,
``pgd_solve`` is a local optimizer over every H-AP ordering, and
``brute_force_oracle`` enumerates the agents' discrete action grid.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression

from .channel import LinkGains
from .env import EhModel, build_schedule, harvested_energy, step
from .errors import InvalidArgumentError, UnsupportedError

__all__ = [
    "SolverReport",
    "Problem",
    "naive_policy",
    "pgd_solve",
    "brute_force_oracle",
    "ORACLE_BUDGET",
    "PGD_MAX_CELLS",
]

ORACLE_BUDGET = 10**7
PGD_MAX_CELLS = 7


@dataclass
class SolverReport:
    objective: float  # nats/s
    tau: np.ndarray
    p: np.ndarray
    ordering: tuple
    iterations: int = 0
    wall_time: float = 0.0
    trace: list = field(default_factory=list, repr=False)

    def as_row(self) -> dict:
        row = {"objective": self.objective, "iterations": self.iterations,
               "wall_time": self.wall_time,
               "ordering": " ".join(str(k) for k in self.ordering)}
        for i, (t, p) in enumerate(zip(self.tau, self.p)):
            row[f"tau_{i}"] = float(t)
            row[f"p_{i}"] = float(p)
        return row


@dataclass(frozen=True)
class Problem:
    """Everything a centralized solver needs about one slot."""

    gains: LinkGains
    model: EhModel
    P: float
    sigma2: float
    beta: float
    T: float
    eps_tau: float | None = None

    @property
    def n_cells(self) -> int:
        return self.gains.n_cells

    @property
    def tau_max(self) -> float:
        eps = self.T / 100.0 if self.eps_tau is None else self.eps_tau
        return self.T - eps

    def energies(self, tau) -> np.ndarray:
        return harvested_energy(build_schedule(tau, self.T, self.eps_tau),
                                self.gains, self.model, self.P)

    def budget_powers(self, tau, energies=None) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if energies is None:
            energies = self.energies(tau)
        return energies / (self.T - tau)

    def evaluate(self, tau, p):
        return step(self.gains, tau, p, self.model, self.P, self.sigma2, self.beta,
                    self.T, self.eps_tau)

    def objective(self, tau, frac) -> float:
        """Sum rate (nats/s) with powers set to a fraction of each user's budget."""
        sched = build_schedule(tau, self.T, self.eps_tau)
        E = harvested_energy(sched, self.gains, self.model, self.P)
        p = np.asarray(frac) * E / (self.T - sched.tau)
        return _sum_rate(sched, self.gains, p, self.P, self.sigma2, self.beta) / self.T


def _sum_rate(sched, gains, p, P, sigma2, beta) -> float:
    b = sched.b
    h = gains.h
    off = ~np.eye(h.shape[0], dtype=bool)
    wit = b * p[None, :]  # (N+1, N) transmitting users' power
    interf = wit @ (h * off) + (1.0 - b) @ (beta * P * gains.g * off)
    sinr = np.diag(h) * p / (sigma2 + interf)
    return float(np.sum(sched.durations[:, None] * b * np.log1p(sinr)))


def _report(prob: Problem, tau, p, ordering, iterations, t0, trace=None) -> SolverReport:
    out = prob.evaluate(tau, p)
    return SolverReport(out.sum_rate, np.asarray(tau, dtype=float), np.asarray(p, dtype=float),
                        tuple(int(k) for k in ordering), iterations,
                        time.perf_counter() - t0, trace or [])


def naive_policy(prob: Problem) -> SolverReport:
    """Equal WET/WIT split; every user spends its whole harvested energy."""
    t0 = time.perf_counter()
    tau = np.full(prob.n_cells, prob.T / 2.0)
    p = prob.budget_powers(tau)
    return _report(prob, tau, p, tuple(range(prob.n_cells)), 0, t0)


def _project_tau(u, order, u_max):
    z = isotonic_regression(u[list(order)]).x
    out = np.empty_like(u)
    out[list(order)] = np.clip(z, 0.0, u_max)
    return out


class _OrderingSolver:
    """Alternating projected-gradient ascent inside one ordering cone.

    Variables are normalized: ``u = tau / T`` and ``v`` = fraction of the
    harvested-energy budget spent, so every iterate is feasible.
    """

    fd_step = 1e-6
    max_halvings = 30
    inner_tol = 1e-6
    max_inner = 100

    def __init__(self, prob: Problem, order):
        self.prob = prob
        self.order = order
        self.u_max = prob.tau_max / prob.T
        self.evals = 0

    def f(self, u, v) -> float:
        self.evals += 1
        return self.prob.objective(u * self.prob.T, v)

    def _grad(self, fun, x, lo, hi):
        g = np.zeros_like(x)
        h = self.fd_step
        for k in range(x.size):
            xp = x.copy()
            xm = x.copy()
            xp[k] = min(x[k] + h, hi)
            xm[k] = max(x[k] - h, lo)
            if xp[k] == xm[k]:
                continue
            g[k] = (fun(xp) - fun(xm)) / (xp[k] - xm[k])
        return g

    def _ascend(self, fun, proj, x, fx, lo, hi):
        """Projected gradient ascent with halving line search; never decreases."""
        s = 0.25
        iters = 0
        for _ in range(self.max_inner):
            g = self._grad(fun, x, lo, hi)
            gmax = np.max(np.abs(g))
            if gmax == 0 or not np.isfinite(gmax):
                break
            d = g / gmax
            trial = s
            for _ in range(self.max_halvings):
                xn = proj(x + trial * d)
                fn = fun(xn)
                if fn > fx:
                    break
                trial *= 0.5
            else:
                break
            iters += 1
            gain = (fn - fx) / max(abs(fx), 1e-300)
            x, fx = xn, fn
            s = min(2.0 * trial, 0.5)
            if gain < self.inner_tol:
                break
        return x, fx, iters

    def solve(self, precision: float):
        n = self.prob.n_cells
        u = np.full(n, 0.5)
        v = np.full(n, 0.5)
        fx = self.f(u, v)
        trace = [fx]
        iters = 0
        box = lambda x: np.clip(x, 0.0, 1.0)
        cone = lambda x: _project_tau(x, self.order, self.u_max)
        while True:
            start = fx
            v, fx, k1 = self._ascend(lambda x: self.f(u, x), box, v, fx, 0.0, 1.0)
            u, fx, k2 = self._ascend(lambda x: self.f(x, v), cone, u, fx, 0.0, self.u_max)
            iters += 1
            trace.append(fx)
            if (k1 + k2 == 0 or (fx - start) <= precision * max(abs(start), 1e-300)
                    or iters >= 200):
                break
        return u, v, fx, iters, trace


def pgd_solve(prob: Problem, precision: float = 1e-2) -> SolverReport:
    """Best local optimum over all N! H-AP orderings.

    Within each ordering the WET durations are constrained to follow it; power
    fractions and durations are improved alternately until an alternation
    raises the objective by less than ``precision`` (relative).
    """
    n = prob.n_cells
    if n > PGD_MAX_CELLS:
        raise UnsupportedError(f"pgd_solve enumerates N! orderings; N={n} > {PGD_MAX_CELLS}")
    if not precision > 0:
        raise InvalidArgumentError("precision must be positive")
    t0 = time.perf_counter()
    best = None
    total_iters = 0
    for order in itertools.permutations(range(n)):
        solver = _OrderingSolver(prob, order)
        u, v, fx, iters, trace = solver.solve(precision)
        total_iters += iters
        if best is None or fx > best[2]:
            best = (u, v, fx, order, trace)
    u, v, _, order, trace = best
    tau = np.minimum(u * prob.T, prob.tau_max)
    p = v * prob.budget_powers(tau)
    return _report(prob, tau, p, order, total_iters, t0, trace)


def _grid_sum_rates(sched, gains, P_batch, P, sigma2, beta) -> np.ndarray:
    """Sum rate (nats per slot) for a batch of power vectors ``P_batch`` (M, N)."""
    b = sched.b
    h = gains.h
    off = ~np.eye(h.shape[0], dtype=bool)
    wet_interf = (1.0 - b) @ (beta * P * gains.g * off)  # (N+1, N)
    # WIT interference for every batch row and interval: (M, N+1, N)
    wit = np.einsum("mj,nj,ji->mni", P_batch, b, h * off)
    sinr = (np.diag(h) * P_batch)[:, None, :] / (sigma2 + wet_interf[None] + wit)
    w = sched.durations[:, None] * b
    return np.einsum("ni,mni->m", w, np.log1p(sinr))


def brute_force_oracle(prob: Problem, K: int, K_P: int | None = None) -> SolverReport:
    """Exact maximizer over the discrete (time, power) grid used by the agents."""
    n = prob.n_cells
    K_T = K
    K_P = K if K_P is None else K_P
    if K_T < 2 or K_P < 2:
        raise InvalidArgumentError("grid sizes must be >= 2")
    if n * (K_T * K_P) ** n > ORACLE_BUDGET:
        raise UnsupportedError(f"grid of N*K^(2N) = {n * (K_T * K_P) ** n:.3g} exceeds budget")
    t0 = time.perf_counter()
    tau_grid = np.arange(K_T) * prob.tau_max / (K_T - 1)
    frac = np.arange(K_P) / (K_P - 1)
    frac_combos = np.array(list(itertools.product(frac, repeat=n)))
    best_val = -math.inf
    best = None
    for kt in itertools.product(range(K_T), repeat=n):
        tau = tau_grid[list(kt)]
        sched = build_schedule(tau, prob.T, prob.eps_tau)
        E = harvested_energy(sched, prob.gains, prob.model, prob.P)
        pmax = E / (prob.T - tau)
        vals = _grid_sum_rates(sched, prob.gains, frac_combos * pmax, prob.P,
                               prob.sigma2, prob.beta)
        m = int(np.argmax(vals))
        if vals[m] > best_val:
            best_val = vals[m]
            best = (tau, frac_combos[m] * pmax, sched.mu)
    tau, p, mu = best
    return _report(prob, tau, p, mu, (K_T * K_P) ** n, t0)
