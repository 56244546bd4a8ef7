"""Central-difference gradient checks for the autograd engine and the layers.

Each case builds random float64 inputs from a seed and returns a scalar Tensor.
``check`` compares the backward pass with a finite-difference estimate on
(at most ``max_coords`` random coordinates of) every input.
"""
from __future__ import annotations

import numpy as np

from rescue_tom.neural import (Tensor, causal_mask, concat, cross_entropy, decay_hidden, layer_norm,
                               lstm_step, multi_head_attention, ode_evolve, stack, time2vec)
from rescue_tom.neural.layers import sinusoidal_positions


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = 0.1) -> float:
    """Max deviation over the larger gradient scale; the floor keeps gradients
    that are exactly zero in theory (e.g. the key bias under softmax) from
    turning rounding noise into a large ratio."""
    den = max(np.abs(a).max() + np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / den)


def check(fn, arrays, seed: int = 0, h: float = 1e-6, max_coords: int = 40) -> float:
    """Worst relative error between analytic and numeric gradients of ``fn``."""
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*ts)
    out.backward()
    rng = np.random.default_rng(seed + 991)
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = ts[k].grad if ts[k].grad is not None else np.zeros_like(a)
        flat = np.arange(a.size)
        if a.size > max_coords:
            flat = rng.choice(a.size, max_coords, replace=False)
        num, ana = [], []
        for j in flat:
            idx = np.unravel_index(j, a.shape)
            vals = []
            for sgn in (1.0, -1.0):
                b = [x.copy() for x in arrays]
                b[k][idx] += sgn * h
                vals.append(fn(*[Tensor(x) for x in b]).item())
            num.append((vals[0] - vals[1]) / (2 * h))
            ana.append(analytic[idx])
        worst = max(worst, relative_error(np.array(ana), np.array(num)))
    return worst


# ---------------------------------------------------------------- cases

def case_ops(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 4)), rng.uniform(0.5, 2.0, size=(4,))
    r = rng.normal(size=(4, 3))

    def fn(a, b):
        x = (a * b - a / b + b ** 1.5).exp().log() + a.sigmoid() * a.sin() + a.tanh()
        y = concat([x[:, :2], stack([b, b * 2.0])[:1, 2:].reshape(1, 2).T.reshape(2) * x[:, 2:]], axis=1)
        z = (y @ r).softmax(axis=-1) + (y.T.mean(axis=0)).log_softmax().sum()
        return (z * z).sum() - y.transpose().mean()
    return fn, [a, b], 1e-6


def case_time2vec(seed):
    rng = np.random.default_rng(seed)
    t = np.array(rng.uniform(0, 15))
    w, phi, r = rng.normal(size=5), rng.normal(size=5), rng.normal(size=5)
    return (lambda t, w, phi: (time2vec(t, w, phi) * r).sum()), [t, w, phi], 1e-6


def case_lstm(seed):
    rng = np.random.default_rng(seed)
    H, D = 16, 9
    x, h, c = rng.normal(size=D), rng.normal(size=H) * 0.5, rng.normal(size=H)
    W, b = rng.uniform(-0.2, 0.2, size=(D + H, 4 * H)), rng.uniform(-0.2, 0.2, size=4 * H)
    r1, r2 = rng.normal(size=H), rng.normal(size=H)

    def fn(x, h, c, W, b):
        h2, c2 = lstm_step(x, h, c, W, b)
        return (h2 * r1).sum() + (c2 * r2).sum()
    return fn, [x, h, c, W, b], 1e-6


def case_decay(seed):
    rng = np.random.default_rng(seed)
    h, r, dt = rng.normal(size=16), rng.normal(size=16), float(rng.uniform(0, 200))
    return (lambda h: (decay_hidden(h, dt) * r).sum()), [h], 1e-6


def case_ode(seed):
    rng = np.random.default_rng(seed)
    H = 16
    h = rng.normal(size=H)
    W1, b1 = rng.uniform(-0.25, 0.25, (H, H)), rng.uniform(-0.25, 0.25, H)
    W2, b2 = rng.uniform(-0.25, 0.25, (H, H)), rng.uniform(-0.25, 0.25, H)
    r, dt = rng.normal(size=H), float(rng.uniform(0.1, 3.0))
    return (lambda h, W1, b1, W2, b2: (ode_evolve(h, dt, W1, b1, W2, b2, 5) * r).sum()), \
        [h, W1, b1, W2, b2], 1e-3


def case_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits, labels = rng.normal(size=(4, 26)) * 2, rng.integers(0, 26, size=4)
    return (lambda z: cross_entropy(z, labels)), [logits], 1e-6


def case_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x, g, b, r = rng.normal(size=(5, 26)), rng.normal(size=26), rng.normal(size=26), rng.normal(size=(5, 26))
    return (lambda x, g, b: (layer_norm(x, g, b) * r).sum()), [x, g, b], 1e-6


def case_attention(seed):
    rng = np.random.default_rng(seed)
    n, d = 5, 26
    x = rng.normal(size=(n, d)) + sinusoidal_positions(n, d)
    ws = [rng.uniform(-0.2, 0.2, s) for _ in range(4) for s in ((d, d), (d,))]
    r, mask = rng.normal(size=(n, d)), causal_mask(n)
    return (lambda x, *w: (multi_head_attention(x, *w, heads=2, mask=mask) * r).sum()), [x] + ws, 1e-6


CASES = {"ops": case_ops, "time2vec": case_time2vec, "lstm_step": case_lstm, "decay": case_decay,
         "ode": case_ode, "cross_entropy": case_cross_entropy, "layer_norm": case_layer_norm,
         "attention": case_attention}


def run_case(name: str, seed: int) -> tuple[float, float]:
    fn, arrays, tol = CASES[name](seed)
    return check(fn, arrays, seed), tol
