"""Quick built-in invariant checks, runnable without the test suite."""

from __future__ import annotations

import math

import numpy as np

from .agent import ActionSpaces, exchange_prices, realize_action
from .baselines import Problem, naive_policy
from .channel import ChannelModel, LinkGains, bessel_j0, circular_geometry
from .env import BUDGET_TOL, EhModel, build_schedule, harvested_energy, price_rewards, step
from .nn import DenseNet, log_prob_grad_seed

T = 0.02


def _j0_series():
    # first zero and a tabulated value
    return abs(bessel_j0(2.404825557695773)) < 1e-9 and abs(
        bessel_j0(1.0) - 0.7651976865579666) < 1e-12


def _partition(rng):
    for _ in range(200):
        n = int(rng.integers(1, 8))
        s = build_schedule(rng.uniform(0, 0.99 * T, n), T)
        if abs(math.fsum(s.durations) - T) > 1e-15 or np.any(s.durations < 0):
            return False
    return True


def _budget(rng):
    sp = ActionSpaces(20, 20, T)
    ch = ChannelModel(circular_geometry(3), 0.64, rng)
    for _ in range(200):
        gains = ch.advance()
        kt = rng.integers(20, size=3)
        tau = np.array([sp.tau_of(int(k)) for k in kt])
        E = harvested_energy(build_schedule(tau, T), gains, EhModel(), 1.0)
        p = np.array([realize_action(int(kt[i]), int(rng.integers(20)), E[i], sp)[1]
                      for i in range(3)])
        if np.any((T - tau) * p > E + BUDGET_TOL):
            return False
        step(gains, tau, p, EhModel(), 1.0, 1e-8, 1e-5, T)
    return True


def _gradients(rng):
    net = DenseNet([4, 6, 5], ["tanh", "softmax"], rng)
    x = rng.uniform(-1, 1, 4)
    k = 2
    net.forward(x)
    grads, _ = net.backward(log_prob_grad_seed(net.forward(x), k), logits=True)
    h = 1e-5
    for p, g in zip(net.params(), grads):
        flat, gf = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = math.log(net.predict(x)[k])
            flat[i] = old - h
            down = math.log(net.predict(x)[k])
            flat[i] = old
            num = (up - down) / (2 * h)
            if abs(num - gf[i]) > max(1e-4 * abs(num), 1e-8):
                return False
    return True


def _prices(rng):
    ch = ChannelModel(circular_geometry(4), 0.64, rng)
    gains = ch.gains
    tau = rng.uniform(0, 0.019, 4)
    E = harvested_energy(build_schedule(tau, T), gains, EhModel(), 1.0)
    out = step(gains, tau, 0.5 * E / (T - tau), EhModel(), 1.0, 1e-8, 1e-5, T)
    return np.array_equal(exchange_prices(out, 0), price_rewards(out.rates, out.rates_excl))


def _naive_closed_form(rng):
    prob = Problem(LinkGains(np.array([[1e-3]]), np.zeros((1, 1))), EhModel(), 1.0, 1e-8,
                   1e-5, T)
    return abs(naive_policy(prob).objective - 0.01 * math.log(51) / T) < 1e-12


CHECKS = {
    "bessel_j0 reference values": lambda rng: _j0_series(),
    "interval partition sums to T": _partition,
    "realized actions respect the EH budget": _budget,
    "log-policy gradient vs finite differences": _gradients,
    "price exchange equals central rewards": _prices,
    "single-cell naive closed form": _naive_closed_form,
}


def run(seed: int = 0, out=print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        passed = bool(check(np.random.default_rng(seed)))
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
