"""Small dense networks with hand-written backpropagation.

Everything runs on single samples in float64; there is no batching and no
optimizer state beyond plain SGD.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np
from scipy.linalg.blas import dger as _dger

from .errors import InvalidArgumentError, NumericError, StateError

__all__ = [
    "DenseNet",
    "TwoHeadActorNet",
    "softmax",
    "log_softmax",
    "sgd_step",
    "apply_factors",
    "log_prob_grad_seed",
    "save_net",
    "load_net",
]

ACTIVATIONS = ("linear", "tanh", "softmax")
_MAGIC = b"WPNN"


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    return z - (m + np.log(np.sum(np.exp(z - m))))


class DenseNet:
    """Feedforward stack of affine layers, each followed by an activation.

    ``widths`` lists layer sizes including the input; ``activations`` has one
    entry per affine layer.  Softmax is only allowed on the last layer.
    """

    def __init__(self, widths, activations, rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        widths = [int(w) for w in widths]
        activations = list(activations)
        if len(widths) < 2 or len(activations) != len(widths) - 1:
            raise InvalidArgumentError("need len(activations) == len(widths) - 1 >= 1")
        if any(w < 1 for w in widths):
            raise InvalidArgumentError("layer widths must be positive")
        for k, a in enumerate(activations):
            if a not in ACTIVATIONS:
                raise InvalidArgumentError(f"unknown activation {a!r}")
            if a == "softmax" and k != len(activations) - 1:
                raise InvalidArgumentError("softmax is only allowed as the output activation")
        self.widths = widths
        self.activations = activations
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            if rng is None:
                w = np.zeros((n_out, n_in))
            else:
                bound = 1.0 / np.sqrt(n_in)
                w = rng.uniform(-bound, bound, size=(n_out, n_in))
                if k == len(widths) - 2:
                    w *= out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))
        self._version = 0
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_in,):
            raise InvalidArgumentError(f"expected input of shape ({self.n_in},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("input contains non-finite values")
        return x

    def forward(self, x) -> np.ndarray:
        """Output for input ``x``; activations are cached for ``backward``."""
        a = self._check_input(x)
        acts = [a]
        z = a
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = w @ a + b
            if act == "tanh":
                a = np.tanh(z)
            elif act == "softmax":
                a = softmax(z)
            else:
                a = z
            acts.append(a)
        self._cache = (self._version, acts, z)
        return a

    def predict(self, x) -> np.ndarray:
        """Forward pass that leaves the cache untouched."""
        saved = self._cache
        try:
            return self.forward(x)
        finally:
            self._cache = saved

    @property
    def last_logits(self) -> np.ndarray:
        if self._cache is None:
            raise StateError("no forward pass cached")
        return self._cache[2]

    def backward_factors(self, grad_out, logits: bool = False):
        """Per-layer rank-one gradient factors.

        Returns ``(factors, grad_input)`` with ``factors[k] = (dz, a_in)``: the
        weight gradient of layer ``k`` is ``outer(dz, a_in)`` and its bias
        gradient is ``dz``.  With ``logits=True`` and a softmax output,
        ``grad_out`` is the gradient with respect to the pre-softmax logits.
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        version, acts, _ = self._cache
        if version != self._version:
            raise StateError("cached forward pass is stale: parameters changed since")
        g = np.asarray(grad_out, dtype=float)
        if g.shape != (self.n_out,):
            raise InvalidArgumentError(f"expected gradient of shape ({self.n_out},)")
        factors = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            act = self.activations[k]
            a_out = acts[k + 1]
            if act == "tanh":
                dz = g * (1.0 - a_out * a_out)
            elif act == "softmax" and not logits:
                dz = a_out * (g - np.dot(a_out, g))
            else:
                dz = g
            factors[k] = (dz, acts[k])
            g = self.weights[k].T @ dz
        return factors, g

    def backward(self, grad_out, logits: bool = False):
        """Parameter gradients of a scalar loss given d loss / d output.

        Returns ``(grads, grad_input)`` where ``grads`` is aligned with
        ``params()``.
        """
        factors, g = self.backward_factors(grad_out, logits)
        return _materialize(factors), g

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.weights, self.biases))

    def bump_version(self) -> None:
        self._version += 1

    def copy(self) -> "DenseNet":
        net = DenseNet(self.widths, self.activations)
        net.weights = [w.copy() for w in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net


def sgd_step(net, grads, lr: float, direction: str = "descent") -> None:
    """In-place ``params -= lr * grads`` (descent) or ``+=`` (ascent).

    Raises NumericError and leaves ``net`` untouched if any gradient entry is
    non-finite.
    """
    if direction not in ("ascent", "descent"):
        raise InvalidArgumentError(f"direction must be 'ascent' or 'descent', got {direction!r}")
    params = net.params()
    if len(grads) != len(params):
        raise InvalidArgumentError("gradient list does not match parameters")
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise InvalidArgumentError("gradient shape does not match parameter shape")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; update rejected")
    if lr == 0:
        return
    sign = lr if direction == "ascent" else -lr
    for p, g in zip(params, grads):
        p += sign * g
    net.bump_version()


def _materialize(factors) -> list[np.ndarray]:
    grads = []
    for dz, a in factors:
        grads.extend((np.outer(dz, a), dz))
    return grads


def apply_factors(net, factors, lr: float, direction: str = "descent") -> None:
    """``sgd_step`` for gradients given as rank-one factors, updated in place.

    Avoids materializing weight gradients; the result equals
    ``sgd_step(net, materialized grads, lr, direction)`` up to rounding.
    """
    if direction not in ("ascent", "descent"):
        raise InvalidArgumentError(f"direction must be 'ascent' or 'descent', got {direction!r}")
    layers = net.layers()
    if len(factors) != len(layers):
        raise InvalidArgumentError("gradient factors do not match layers")
    for dz, a in factors:
        if not (np.isfinite(np.sum(dz)) and np.isfinite(np.sum(a))):
            raise NumericError("non-finite gradient; update rejected")
    if lr == 0:
        return
    sign = lr if direction == "ascent" else -lr
    for (w, b), (dz, a) in zip(layers, factors):
        if w.flags.c_contiguous:
            _dger(sign, a, dz, a=w.T, overwrite_a=1)
        else:
            w += sign * np.outer(dz, a)
        b += sign * dz
    net.bump_version()


def log_prob_grad_seed(probs, index: int) -> np.ndarray:
    """d log(probs[index]) / d logits for a softmax output."""
    probs = np.asarray(probs, dtype=float)
    if not (0 <= index < probs.size):
        raise InvalidArgumentError(f"action index {index} out of range for {probs.size} outcomes")
    g = -probs.copy()
    g[index] += 1.0
    return g


class TwoHeadActorNet:
    """Shared tanh trunk feeding two softmax heads (time index, power index)."""

    def __init__(self, n_in: int, trunk_widths, head_widths, k_time: int, k_power: int,
                 rng: np.random.Generator | None = None, out_scale: float = 1.0):
        trunk_widths = list(trunk_widths)
        head_widths = list(head_widths)
        if not trunk_widths:
            raise InvalidArgumentError("actor trunk needs at least one hidden layer")
        self.trunk = DenseNet([n_in, *trunk_widths], ["tanh"] * len(trunk_widths), rng)
        feat = trunk_widths[-1]
        self.head_time = DenseNet([feat, *head_widths, k_time],
                                  ["tanh"] * len(head_widths) + ["softmax"], rng, out_scale)
        self.head_power = DenseNet([feat, *head_widths, k_power],
                                   ["tanh"] * len(head_widths) + ["softmax"], rng, out_scale)

    @classmethod
    def from_parts(cls, trunk: DenseNet, head_time: DenseNet, head_power: DenseNet):
        obj = cls.__new__(cls)
        obj.trunk, obj.head_time, obj.head_power = trunk, head_time, head_power
        return obj

    @property
    def n_in(self) -> int:
        return self.trunk.n_in

    @property
    def k_time(self) -> int:
        return self.head_time.n_out

    @property
    def k_power(self) -> int:
        return self.head_power.n_out

    def nets(self) -> tuple[DenseNet, DenseNet, DenseNet]:
        return self.trunk, self.head_time, self.head_power

    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets() for p in net.params()]

    def forward(self, x) -> tuple[np.ndarray, np.ndarray]:
        feat = self.trunk.forward(x)
        return self.head_time.forward(feat), self.head_power.forward(feat)

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        feat = self.trunk.predict(x)
        return self.head_time.predict(feat), self.head_power.predict(feat)

    def log_prob(self, k_time: int, k_power: int) -> float:
        """Joint log-probability of the cached forward pass, via log-sum-exp."""
        return float(log_softmax(self.head_time.last_logits)[k_time]
                     + log_softmax(self.head_power.last_logits)[k_power])

    def backward_factors(self, g_time, g_power, logits: bool = True):
        """Rank-one factors for trunk, time head and power head (in that order).

        By default the head gradients are taken with respect to the logits.
        """
        ft, xt = self.head_time.backward_factors(g_time, logits=logits)
        fp, xp = self.head_power.backward_factors(g_power, logits=logits)
        fr, _ = self.trunk.backward_factors(xt + xp)
        return fr + ft + fp

    def backward(self, g_time, g_power, logits: bool = True):
        return _materialize(self.backward_factors(g_time, g_power, logits))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [layer for net in self.nets() for layer in net.layers()]

    def bump_version(self) -> None:
        for net in self.nets():
            net.bump_version()

    def copy(self) -> "TwoHeadActorNet":
        return TwoHeadActorNet.from_parts(*(n.copy() for n in self.nets()))


def _write_dense(f: BinaryIO, net: DenseNet) -> None:
    L = len(net.weights)
    codes = [ACTIVATIONS.index(a) for a in net.activations]
    f.write(_MAGIC)
    f.write(struct.pack(f"<I{L + 1}I{L}I", L, *net.widths, *codes))
    for w, b in zip(net.weights, net.biases):
        f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_dense(f: BinaryIO) -> DenseNet:
    if f.read(4) != _MAGIC:
        raise InvalidArgumentError("not a network stream (bad magic)")
    (L,) = struct.unpack("<I", f.read(4))
    header = struct.unpack(f"<{2 * L + 1}I", f.read(4 * (2 * L + 1)))
    widths, codes = list(header[:L + 1]), header[L + 1:]
    net = DenseNet(widths, [ACTIVATIONS[c] for c in codes])
    for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = np.frombuffer(f.read(8 * n_in * n_out), dtype="<f8")
        b = np.frombuffer(f.read(8 * n_out), dtype="<f8")
        if w.size != n_in * n_out or b.size != n_out:
            raise InvalidArgumentError("truncated network stream")
        net.weights[k] = w.reshape(n_out, n_in).astype(float)
        net.biases[k] = b.astype(float)
    return net


def save_net(net, path) -> None:
    """Write a DenseNet or TwoHeadActorNet (trunk, time head, power head)."""
    parts = net.nets() if isinstance(net, TwoHeadActorNet) else (net,)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(parts)))
        for part in parts:
            _write_dense(f, part)


def load_net(path):
    with open(path, "rb") as f:
        (count,) = struct.unpack("<I", f.read(4))
        parts = [_read_dense(f) for _ in range(count)]
    if count == 1:
        return parts[0]
    if count == 3:
        return TwoHeadActorNet.from_parts(*parts)
    raise InvalidArgumentError(f"unexpected network count {count} in {path}")
