"""Sequence models: three recurrent triage classifiers and a causal area transformer."""
from __future__ import annotations

import math

import numpy as np

from ..trajectory import TriageSequence
from .autograd import Tensor, concat, stack
from .layers import (ModelParams, causal_mask, decay_hidden, layer_norm, lstm_step,
                     multi_head_attention, ode_evolve, sinusoidal_positions, time2vec)

RNN_VARIANTS = ("time2vec", "decay", "ode")
XY_SCALE = 50.0  # meters per input unit


def triage_features(seq: TriageSequence) -> np.ndarray:
    """Per-element ``[x, y, yellow, completed]`` with positions scaled to ~unit range."""
    kind = np.array([k == "TriageComplete" for k in seq.kinds], dtype=np.float64)
    return np.column_stack([seq.xy / XY_SCALE, seq.severity.astype(np.float64), kind])


class TriageRNN:
    """LSTM over triage events; the variant decides how elapsed time enters.

    time2vec: a Time2Vec embedding of mission time (minutes) is appended to the input.
    decay: the hidden state is scaled by 2**(-dt/half_life) across each gap.
    ode: the hidden state follows a small tanh vector field across each gap
    (time measured in minutes, explicit Euler).
    """

    n_features = 4

    def __init__(self, variant: str = "time2vec", hidden: int = 16, t2v_dim: int = 4,
                 half_life: float = 60.0, ode_steps: int = 5, seed: int = 0,
                 zero_head: bool = False):
        if variant not in RNN_VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {RNN_VARIANTS}")
        self.variant, self.hidden, self.t2v_dim = variant, hidden, t2v_dim
        self.half_life, self.ode_steps, self.seed = half_life, ode_steps, seed
        rng = np.random.default_rng(seed)
        p = self.params = ModelParams()
        n_in = self.n_features + (t2v_dim + 1 if variant == "time2vec" else 0)
        H = hidden
        p.uniform("lstm.W", (n_in + H, 4 * H), n_in + H, rng)
        p.uniform("lstm.b", (4 * H,), n_in + H, rng)
        if variant == "time2vec":
            p.uniform("t2v.w", (t2v_dim + 1,), 1, rng)
            p.uniform("t2v.phi", (t2v_dim + 1,), 1, rng)
        if variant == "ode":
            p.uniform("ode.W1", (H, H), H, rng)
            p.uniform("ode.b1", (H,), H, rng)
            p.uniform("ode.W2", (H, H), H, rng)
            p.uniform("ode.b2", (H,), H, rng)
        if zero_head:
            p.add("head.W", np.zeros((H, 2)))
            p.add("head.b", np.zeros(2))
        else:
            p.uniform("head.W", (H, 2), H, rng)
            p.uniform("head.b", (2,), H, rng)

    def spec(self) -> dict:
        return {"kind": "triage_rnn", "variant": self.variant, "hidden": self.hidden,
                "t2v_dim": self.t2v_dim, "half_life": self.half_life,
                "ode_steps": self.ode_steps, "seed": self.seed}

    def forward(self, seq: TriageSequence) -> Tensor:
        """Logits of shape (n, 2): column 0 selective, column 1 opportunistic."""
        if seq.empty:
            raise ValueError("empty triage sequence")
        p = self.params
        feats = triage_features(seq)
        H = self.hidden
        h, c = Tensor(np.zeros(H)), Tensor(np.zeros(H))
        prev_t = float(seq.t[0])
        hs = []
        for k in range(len(seq)):
            t = float(seq.t[k])
            dt = max(t - prev_t, 0.0)
            prev_t = t
            x = Tensor(feats[k])
            if self.variant == "time2vec":
                x = concat([x, time2vec(t / 60.0, p["t2v.w"], p["t2v.phi"])])
            elif self.variant == "decay":
                h = decay_hidden(h, dt, self.half_life)
            else:
                h = ode_evolve(h, dt / 60.0, p["ode.W1"], p["ode.b1"], p["ode.W2"], p["ode.b2"],
                               self.ode_steps)
            h, c = lstm_step(x, h, c, p["lstm.W"], p["lstm.b"])
            hs.append(h)
        return stack(hs) @ p["head.W"] + p["head.b"]

    def predict_proba(self, seq: TriageSequence) -> np.ndarray:
        return self.forward(seq).softmax(axis=-1).data

    def predict(self, seq: TriageSequence) -> np.ndarray:
        """Class ids per element; exact ties go to 0 (selective)."""
        return np.argmax(self.predict_proba(seq), axis=1)


class AreaTransformer:
    """Causal encoder over area-id windows; logits score the next area."""

    def __init__(self, n_areas: int = 26, d_model: int = 26, heads: int = 2, ff: int = 8,
                 layers: int = 2, window: int = 5, seed: int = 0):
        if d_model % heads:
            raise ValueError("d_model must be divisible by heads")
        self.n_areas, self.d_model, self.heads = n_areas, d_model, heads
        self.ff, self.layers, self.window, self.seed = ff, layers, window, seed
        rng = np.random.default_rng(seed)
        p = self.params = ModelParams()
        d = d_model
        p.uniform("embed", (n_areas, d), d, rng)
        for l in range(layers):
            for m in ("q", "k", "v", "o"):
                p.uniform(f"l{l}.W{m}", (d, d), d, rng)
                p.uniform(f"l{l}.b{m}", (d,), d, rng)
            p.add(f"l{l}.ln1.g", np.ones(d))
            p.add(f"l{l}.ln1.b", np.zeros(d))
            p.uniform(f"l{l}.ff.W1", (d, ff), d, rng)
            p.uniform(f"l{l}.ff.b1", (ff,), d, rng)
            p.uniform(f"l{l}.ff.W2", (ff, d), ff, rng)
            p.uniform(f"l{l}.ff.b2", (d,), ff, rng)
            p.add(f"l{l}.ln2.g", np.ones(d))
            p.add(f"l{l}.ln2.b", np.zeros(d))
        p.uniform("head.W", (d, n_areas), d, rng)
        p.uniform("head.b", (n_areas,), d, rng)
        self._pos = sinusoidal_positions(window, d)
        self._masks = {n: causal_mask(n) for n in range(1, window + 1)}

    def spec(self) -> dict:
        return {"kind": "area_transformer", "n_areas": self.n_areas, "d_model": self.d_model,
                "heads": self.heads, "ff": self.ff, "layers": self.layers,
                "window": self.window, "seed": self.seed}

    def forward(self, ids) -> Tensor:
        """Logits of shape (n, n_areas) for a window of ``n <= window`` area ids."""
        ids = np.asarray(ids, dtype=int)
        n = ids.size
        if ids.ndim != 1 or not 1 <= n <= self.window:
            raise ValueError(f"expected 1..{self.window} area ids, got shape {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.n_areas:
            raise ValueError("area id out of range")
        p = self.params
        x = p["embed"][ids] * math.sqrt(self.d_model) + self._pos[:n]
        for l in range(self.layers):
            a = multi_head_attention(x, p[f"l{l}.Wq"], p[f"l{l}.bq"], p[f"l{l}.Wk"], p[f"l{l}.bk"],
                                     p[f"l{l}.Wv"], p[f"l{l}.bv"], p[f"l{l}.Wo"], p[f"l{l}.bo"],
                                     self.heads, self._masks[n])
            x = layer_norm(x + a, p[f"l{l}.ln1.g"], p[f"l{l}.ln1.b"])
            f = (x @ p[f"l{l}.ff.W1"] + p[f"l{l}.ff.b1"]).relu() @ p[f"l{l}.ff.W2"] + p[f"l{l}.ff.b2"]
            x = layer_norm(x + f, p[f"l{l}.ln2.g"], p[f"l{l}.ln2.b"])
        return x @ p["head.W"] + p["head.b"]

    def next_area_logits(self, prefix) -> np.ndarray:
        """Logits for the area following ``prefix`` (only the last window is used)."""
        prefix = list(prefix)
        if not prefix:
            raise ValueError("empty prefix")
        return self.forward(prefix[-self.window:]).data[-1]

    def predict_next(self, prefix) -> int:
        return int(np.argmax(self.next_area_logits(prefix)))


def build_model(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "triage_rnn":
        return TriageRNN(**spec)
    if kind == "area_transformer":
        return AreaTransformer(**spec)
    raise ValueError(f"unknown model kind {kind!r}")
