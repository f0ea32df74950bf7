"""Loop-based reference for the slot physics, written without the schedule
machinery of ``wpcn.env``.

A slot is cut at every WET end time.  Inside each piece, cell ``i`` is in WIT
mode iff the piece's midpoint lies after ``tau[i]``.
"""

import math


def pieces(tau, T):
    cuts = sorted(set([0.0, T] + [float(t) for t in tau]))
    out = []
    for a, c in zip(cuts[:-1], cuts[1:]):
        if c > a:
            mid = 0.5 * (a + c)
            out.append((c - a, [mid > t for t in tau]))
    return out


def delta(kind, x, eta=0.5, a1=1.5e3, a2=3.3, a3=2.8e-3):
    if kind == "linear":
        return eta * x
    return a3 * (1 - math.exp(-a1 * x)) / (1 + math.exp(-a1 * x + a2))


def energies(h, tau, T, P, kind="linear"):
    n = len(tau)
    out = [0.0] * n
    for dur, wit in pieces(tau, T):
        for i in range(n):
            if wit[i]:
                continue
            for j in range(n):
                if not wit[j]:
                    out[i] += dur * delta(kind, P * h[i][j])
    return out


def user_rate(h, g, tau, p, T, P, sigma2, beta, i, skip=None):
    n = len(tau)
    total = 0.0
    for dur, wit in pieces(tau, T):
        if not wit[i]:
            continue
        noise = sigma2
        for j in range(n):
            if j == i or j == skip:
                continue
            if wit[j]:
                noise += h[j][i] * p[j]
            else:
                noise += beta * g[j][i] * P
        total += dur * math.log(1 + h[i][i] * p[i] / noise)
    return total


def slot(h, g, tau, p, T, P, sigma2, beta):
    """Rates, exclusion rates ``ex[j][i]`` and price rewards."""
    n = len(tau)
    R = [user_rate(h, g, tau, p, T, P, sigma2, beta, i) for i in range(n)]
    ex = [[R[j] if i == j else user_rate(h, g, tau, p, T, P, sigma2, beta, j, skip=i)
           for i in range(n)] for j in range(n)]
    r = [R[i] - sum(ex[j][i] - R[j] for j in range(n) if j != i) for i in range(n)]
    return R, ex, r
