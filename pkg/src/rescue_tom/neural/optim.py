"""AMSGrad with decoupled weight decay."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import ModelParams


class NonFiniteGradient(FloatingPointError):
    """Raised when a gradient contains NaN or inf; the step is not applied."""


@dataclass(frozen=True)
class AMSGradConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def optimizer_step(params: ModelParams, grads: dict[str, np.ndarray] | None = None,
                   config: AMSGradConfig = AMSGradConfig()) -> ModelParams:
    """Apply one AMSGrad update in place and return ``params``.

    ``grads`` defaults to each tensor's ``.grad`` (missing gradients count as
    zero).  All gradients are checked before any parameter moves.
    """
    if grads is None:
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                 for k, t in params.tensors.items()}
    for k, t in params.tensors.items():
        g = grads.get(k)
        if g is None:
            continue
        if g.shape != t.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {t.data.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    params.step += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** params.step
    bc2 = 1.0 - b2 ** params.step
    for k, t in params.tensors.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(t.data)
        st = params.state.get(k)
        if st is None:
            st = params.state[k] = {"m": np.zeros_like(t.data), "v": np.zeros_like(t.data),
                                    "vmax": np.zeros_like(t.data)}
        st["m"] = b1 * st["m"] + (1.0 - b1) * g
        st["v"] = b2 * st["v"] + (1.0 - b2) * g * g
        st["vmax"] = np.maximum(st["vmax"], st["v"])
        denom = np.sqrt(st["vmax"] / bc2) + config.eps
        t.data = t.data * (1.0 - config.learning_rate * config.weight_decay) \
            - config.learning_rate * (st["m"] / bc1) / denom
    return params
