"""Central finite-difference gradient checks for toy networks."""

import numpy as np

from wpcn.nn import DenseNet, TwoHeadActorNet, log_prob_grad_seed

STEP = 1e-5
RTOL = 1e-4
ATOL = 1e-8


def numeric_grad(loss, params):
    out = []
    for p in params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + STEP
            up = loss()
            flat[k] = old - STEP
            down = loss()
            flat[k] = old
            gflat[k] = (up - down) / (2 * STEP)
        out.append(g)
    return out


def worst_violation(analytic, numeric):
    """Largest ``|a - n| / max(RTOL |n|, ATOL)``; at most 1 means pass."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(RTOL * np.abs(n), ATOL)
        worst = max(worst, float(err.max()))
    return worst


def toy_critic(rng):
    depth = int(rng.integers(1, 4))
    widths = [int(rng.integers(1, 9)) for _ in range(depth)] + [1]
    acts = ["tanh"] * (depth - 1) + ["linear"]
    net = DenseNet(widths, acts, rng)
    for b in net.biases:
        b[:] = rng.uniform(-0.5, 0.5, b.shape)
    return net


def critic_check(rng) -> float:
    """Squared TD loss ``(y - V(s))^2`` with the target held fixed."""
    net = toy_critic(rng)
    x = rng.uniform(-2, 2, net.n_in)
    y = float(rng.normal())

    def loss():
        return (y - float(net.predict(x)[0])) ** 2

    v = float(net.forward(x)[0])
    grads, _ = net.backward(np.array([-2.0 * (y - v)]))
    return worst_violation(grads, numeric_grad(loss, net.params()))


def toy_actor(rng):
    n_in = int(rng.integers(1, 9))
    trunk = [int(rng.integers(1, 9))]
    head = [int(rng.integers(1, 9))] if rng.random() < 0.5 else []
    k_t, k_p = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    net = TwoHeadActorNet(n_in, trunk, head, k_t, k_p, rng)
    for part in net.nets():
        for b in part.biases:
            b[:] = rng.uniform(-0.5, 0.5, b.shape)
    return net


def actor_check(rng) -> float:
    """``log pi(k_t, k_p | s)`` of the product of both heads."""
    net = toy_actor(rng)
    x = rng.uniform(-2, 2, net.n_in)
    kt, kp = int(rng.integers(net.k_time)), int(rng.integers(net.k_power))

    def loss():
        pt, pp = net.predict(x)
        return float(np.log(pt[kt]) + np.log(pp[kp]))

    pt, pp = net.forward(x)
    grads = net.backward(log_prob_grad_seed(pt, kt), log_prob_grad_seed(pp, kp))
    return worst_violation(grads, numeric_grad(loss, net.params()))
