"""Channel gains for the multi-cell network.

Small-scale fading follows a first-order complex Gauss-Markov recursion whose
correlation comes from Jakes' model, ``rho = J0(2*pi*f_d*T)``.  Large-scale
attenuation is a pure distance power law referenced to 1 m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "bessel_j0",
    "time_correlation",
    "dbm_to_watts",
    "db_to_linear",
    "FadingProcess",
    "init_fading",
    "evolve",
    "Geometry",
    "circular_geometry",
    "pathloss",
    "large_scale_gains",
    "LinkGains",
    "ChannelModel",
]

_SERIES_CUTOFF = 12.0


def _j0_series(x: float) -> float:
    q = -0.25 * x * x
    term = 1.0
    total = 1.0
    m = 0
    while True:
        m += 1
        term *= q / (m * m)
        total += term
        if abs(term) < 1e-17 * max(1.0, abs(total)) and m > 2:
            return total


def _j0_asymptotic(x: float) -> float:
    # Hankel expansion: a_k = prod_{l<=k} (2l-1)^2 / (k! 8^k)
    p = 0.0
    q = 0.0
    a = 1.0
    k = 0
    prev = math.inf
    while k < 60:
        term = a / x**k
        if term > prev:
            break
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2 == 0:
            p += sign * term
        else:
            q -= sign * term
        if term < 1e-17:
            break
        prev = term
        k += 1
        a *= (2 * k - 1) ** 2 / (8.0 * k)
    chi = x - 0.25 * math.pi
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


def bessel_j0(x: float) -> float:
    """Zeroth-order Bessel function of the first kind for ``x >= 0``."""
    x = float(x)
    if not math.isfinite(x):
        raise InvalidArgumentError(f"bessel_j0 needs a finite argument, got {x}")
    if x < 0:
        raise InvalidArgumentError(f"bessel_j0 needs x >= 0, got {x}")
    if x < _SERIES_CUTOFF:
        return _j0_series(x)
    return _j0_asymptotic(x)


def time_correlation(f_d: float, T: float) -> float:
    """Slot-to-slot fading correlation for Doppler ``f_d`` (Hz) and slot ``T`` (s)."""
    if not (math.isfinite(f_d) and f_d >= 0):
        raise InvalidArgumentError(f"Doppler frequency must be >= 0, got {f_d}")
    if not (math.isfinite(T) and T > 0):
        raise InvalidArgumentError(f"slot duration must be > 0, got {T}")
    if f_d == 0:
        return 1.0
    return bessel_j0(2.0 * math.pi * f_d * T)


def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class FadingProcess:
    """Complex small-scale coefficients.

    ``h[i, j]`` is user i -> H-AP j and ``g[i, j]`` is H-AP i -> H-AP j.
    """

    h: np.ndarray
    g: np.ndarray
    rho: float

    @property
    def n_cells(self) -> int:
        return self.h.shape[0]


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    z = rng.standard_normal((2, *shape))
    return (z[0] + 1j * z[1]) * math.sqrt(0.5)


def init_fading(n: int, rho: float, rng: np.random.Generator) -> FadingProcess:
    """Draw coefficients from the stationary CN(0, 1) law."""
    if n < 1:
        raise InvalidArgumentError("need at least one cell")
    return FadingProcess(_cn(rng, (n, n)), _cn(rng, (n, n)), float(rho))


def evolve(prev: FadingProcess, rho: float, rng: np.random.Generator) -> FadingProcess:
    if not (0.0 <= rho <= 1.0):
        raise InvalidArgumentError(f"rho must lie in [0, 1], got {rho}")
    if not (np.all(np.isfinite(prev.h)) and np.all(np.isfinite(prev.g))):
        raise InvalidArgumentError("fading coefficients must be finite")
    if rho == 1.0:
        return FadingProcess(prev.h.copy(), prev.g.copy(), rho)
    n = prev.n_cells
    e = _cn(rng, (2, n, n))
    s = math.sqrt(1.0 - rho * rho)
    return FadingProcess(rho * prev.h + s * e[0], rho * prev.g + s * e[1], rho)


@dataclass(frozen=True)
class Geometry:
    hap_positions: np.ndarray  # (N, 2) meters
    user_positions: np.ndarray  # (N, 2) meters
    pathloss_exponent: float = 3.0

    @property
    def n_cells(self) -> int:
        return self.hap_positions.shape[0]

    def user_hap_distances(self) -> np.ndarray:
        """``d[i, j]`` = distance from user i to H-AP j."""
        diff = self.user_positions[:, None, :] - self.hap_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def hap_hap_distances(self) -> np.ndarray:
        diff = self.hap_positions[:, None, :] - self.hap_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)


def circular_geometry(n: int, hap_user_distance: float = 10.0,
                      hap_spacing: float = 15.0,
                      pathloss_exponent: float = 3.0) -> Geometry:
    """H-APs on a regular polygon with the given side length, each user
    placed radially outward from its own H-AP."""
    if n < 1:
        raise InvalidArgumentError("need at least one cell")
    if n == 1:
        haps = np.zeros((1, 2))
        users = np.array([[hap_user_distance, 0.0]])
        return Geometry(haps, users, pathloss_exponent)
    radius = hap_spacing / (2.0 * math.sin(math.pi / n))
    angles = 2.0 * math.pi * np.arange(n) / n
    unit = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return Geometry(radius * unit, (radius + hap_user_distance) * unit, pathloss_exponent)


def pathloss(d, exponent: float = 3.0):
    """Power gain ``d**-exponent`` with unit gain at 1 m."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise InvalidArgumentError("distances must be finite and strictly positive")
    out = d ** (-exponent)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LinkGains:
    """Nonnegative power gains ``h[i, j]`` (user i -> H-AP j) and ``g[i, j]``
    (H-AP i -> H-AP j).  The diagonal of ``g`` is unused and kept at zero."""

    h: np.ndarray
    g: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.h.shape[0]

    def validate(self) -> None:
        for name, m in (("h", self.h), ("g", self.g)):
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise InvalidArgumentError(f"gain matrix {name} must be finite and >= 0")

    def permuted(self, perm) -> "LinkGains":
        perm = np.asarray(perm)
        return LinkGains(self.h[np.ix_(perm, perm)], self.g[np.ix_(perm, perm)])


def large_scale_gains(geom: Geometry) -> LinkGains:
    n = geom.n_cells
    h = pathloss(geom.user_hap_distances(), geom.pathloss_exponent)
    g = np.zeros((n, n))
    if n > 1:
        off = ~np.eye(n, dtype=bool)
        g[off] = pathloss(geom.hap_hap_distances()[off], geom.pathloss_exponent)
    return LinkGains(np.atleast_2d(h), g)


class ChannelModel:
    """Evolving composite gains for one simulation instance.

    The model owns its random stream; ``gains`` is immutable between calls to
    ``advance``.
    """

    def __init__(self, geom: Geometry, rho: float, rng: np.random.Generator):
        self.geom = geom
        self.rho = float(rho)
        self.rng = rng
        self.scale = large_scale_gains(geom)
        self.fading = init_fading(geom.n_cells, self.rho, rng)
        self._gains = self._compose()

    @property
    def n_cells(self) -> int:
        return self.geom.n_cells

    def _compose(self) -> LinkGains:
        g = self.scale.g * np.abs(self.fading.g) ** 2
        np.fill_diagonal(g, 0.0)
        return LinkGains(self.scale.h * np.abs(self.fading.h) ** 2, g)

    @property
    def gains(self) -> LinkGains:
        return self._gains

    def advance(self) -> LinkGains:
        self.fading = evolve(self.fading, self.rho, self.rng)
        self._gains = self._compose()
        return self._gains
