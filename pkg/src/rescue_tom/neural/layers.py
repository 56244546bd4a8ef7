"""Differentiable building blocks: Time2Vec, LSTM cell, hidden-state decay and
ODE flow, layer norm, causal multi-head attention and cross entropy.

Functions take and return :class:`Tensor` objects; parameters are looked up
by name in a :class:`ModelParams`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, concat

MASK_FILL = -1e9


@dataclass
class ModelParams:
    """Named parameter tensors plus per-parameter optimizer state."""
    tensors: dict[str, Tensor] = field(default_factory=dict)
    state: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    step: int = 0

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def uniform(self, name: str, shape: tuple, fan_in: int, rng: np.random.Generator) -> Tensor:
        bound = 1.0 / math.sqrt(fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape))

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: self.tensors[k].data for k in self.names()}

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.tensors.values())


# ---------------------------------------------------------------- time handling

def time2vec(t, w: Tensor, phi: Tensor) -> Tensor:
    """``[w0*t + phi0, sin(w1*t + phi1), ...]`` for scalar ``t``."""
    z = w * t + phi
    return concat([z[:1], z[1:].sin()])


def decay_hidden(h, dt: float, half_life: float = 60.0):
    """Scale ``h`` by ``2**(-dt/half_life)``; works on Tensors and arrays."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return h * (2.0 ** (-dt / half_life))


def ode_dynamics(h: Tensor, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor) -> Tensor:
    return (h @ W1 + b1).tanh() @ W2 + b2


def ode_evolve(h: Tensor, dt: float, W1: Tensor, b1: Tensor, W2: Tensor, b2: Tensor,
               steps: int = 5) -> Tensor:
    """Explicit Euler flow of dh/ds = g(h) over ``dt`` in ``steps`` equal steps."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if dt == 0:
        return h
    step = dt / steps
    for _ in range(steps):
        h = h + ode_dynamics(h, W1, b1, W2, b2) * step
        if not np.isfinite(h.data).all():
            raise FloatingPointError("ODE state became non-finite")
    return h


# ---------------------------------------------------------------- recurrent cell

def lstm_step(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step.  ``W`` maps ``concat(x, h)`` to the stacked i, f, o, g gates."""
    x, h, c = Tensor._wrap(x), Tensor._wrap(h), Tensor._wrap(c)
    H = h.shape[-1]
    if W.shape != (x.shape[-1] + H, 4 * H) or b.shape != (4 * H,) or c.shape[-1] != H:
        raise ValueError(f"dimension mismatch: x{x.shape} h{h.shape} c{c.shape} W{W.shape} b{b.shape}")
    z = concat([x, h]) @ W + b
    i = z[0:H].sigmoid()
    f = z[H:2 * H].sigmoid()
    o = z[2 * H:3 * H].sigmoid()
    g = z[3 * H:].tanh()
    c2 = f * c + i * g
    return o * c2.tanh(), c2


# ---------------------------------------------------------------- transformer parts

def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    d = x - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    return d / (var + eps) ** 0.5 * gain + bias


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: 0 on and below the diagonal, a large negative above."""
    return np.triu(np.full((n, n), MASK_FILL), k=1)


def multi_head_attention(x: Tensor, Wq: Tensor, bq: Tensor, Wk: Tensor, bk: Tensor,
                         Wv: Tensor, bv: Tensor, Wo: Tensor, bo: Tensor,
                         heads: int, mask: np.ndarray | None = None) -> Tensor:
    n, d = x.shape
    if d % heads:
        raise ValueError("model width must divide evenly into heads")
    hd = d // heads

    def split(t):  # (n, d) -> (heads, n, hd)
        return t.reshape(n, heads, hd).transpose(1, 0, 2)
    q, k, v = split(x @ Wq + bq), split(x @ Wk + bk), split(x @ Wv + bv)
    scores = (q @ k.transpose(0, 2, 1)) * (1.0 / math.sqrt(hd))
    if mask is not None:
        scores = scores + mask
    att = scores.softmax(axis=-1) @ v
    return att.transpose(1, 0, 2).reshape(n, d) @ Wo + bo


# ---------------------------------------------------------------- loss

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over rows (or the single row)."""
    lp = logits.log_softmax(axis=-1)
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if lp.data.ndim == 1:
        if labels.size != 1:
            raise ValueError("one label expected for 1-D logits")
        return -lp[int(labels[0])]
    if labels.shape[0] != lp.shape[0]:
        raise ValueError("label count does not match logits rows")
    k = lp.shape[-1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    return -(lp[np.arange(labels.size), labels].mean())


def cross_entropy_np(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss and analytic gradient ``softmax - onehot`` for one logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.size:
        raise ValueError("label out of range")
    z = z - z.max()
    lse = math.log(np.exp(z).sum())
    p = np.exp(z - lse)
    g = p.copy()
    g[label] -= 1.0
    return lse - z[label], g
