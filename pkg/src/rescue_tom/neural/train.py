"""Deterministic single-example training loops and checkpoint files."""
from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..io import atomic_write_bytes
from ..trajectory import TriageSequence
from .autograd import Tensor
from .layers import cross_entropy
from .models import AreaTransformer, TriageRNN, build_model
from .optim import AMSGradConfig, optimizer_step

CHECKPOINT_VERSION = 1
HEADER_KEY = "__header__"


class TrainingDiverged(FloatingPointError):
    """Raised when the loss becomes non-finite; carries the partial loss curve."""

    def __init__(self, msg: str, losses: list[float]):
        super().__init__(msg)
        self.losses = losses


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-5
    batch_size: int = 1
    decay_half_life: float = 60.0
    epochs: int = 10
    seed: int = 0
    hidden_size: int = 16
    ode_steps: int = 5
    t2v_dim: int = 4
    window: int = 5

    def __post_init__(self):
        if not self.learning_rate > 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")
        if self.epochs < 1 or self.ode_steps < 1 or self.window < 1 or self.hidden_size < 1:
            raise ValueError("epochs, ode_steps, window and hidden_size must be >= 1")
        if not self.decay_half_life > 0:
            raise ValueError("decay_half_life must be positive")

    @classmethod
    def from_doc(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**doc)

    def optimizer(self) -> AMSGradConfig:
        return AMSGradConfig(self.learning_rate, self.weight_decay)


@dataclass
class TrainResult:
    model: object
    losses: list[float] = field(default_factory=list)


def make_triage_model(variant: str, config: TrainConfig, **kw) -> TriageRNN:
    return TriageRNN(variant, hidden=config.hidden_size, t2v_dim=config.t2v_dim,
                     half_life=config.decay_half_life, ode_steps=config.ode_steps,
                     seed=config.seed, **kw)


def make_transformer(config: TrainConfig, n_areas: int = 26) -> AreaTransformer:
    return AreaTransformer(n_areas=n_areas, window=config.window, seed=config.seed)


def area_windows(seq, window: int = 5) -> list[tuple[np.ndarray, np.ndarray]]:
    """Consecutive (input, next-area target) windows covering a sequence."""
    seq = np.asarray(seq, dtype=int)
    out = []
    for i in range(0, len(seq) - 1, window):
        x = seq[i:i + window]
        y = seq[i + 1:i + 1 + window]
        out.append((x[:len(y)], y))
    return out


def _examples(model, dataset, config):
    if isinstance(model, TriageRNN):
        ex = [(s, s.label_ids()) for s in dataset if not s.empty]
    else:
        ex = [w for s in dataset for w in area_windows(s, model.window)]
    if not ex:
        raise ValueError("dataset has no usable examples")
    return ex


def _loss(model, x, y) -> Tensor:
    return cross_entropy(model.forward(x), y)


def train(model, dataset, config: TrainConfig = TrainConfig(), log=None) -> TrainResult:
    """Fit ``model`` with AMSGrad, one example per step, reshuffled each epoch.

    ``dataset`` is a list of labelled :class:`TriageSequence` for a
    :class:`TriageRNN`, or a list of area-id sequences for an
    :class:`AreaTransformer` (cut into windows of ``model.window``).
    Returns the mean loss of every epoch.
    """
    examples = _examples(model, dataset, config)
    rng = np.random.default_rng(config.seed)
    opt = config.optimizer()
    losses: list[float] = []
    for epoch in range(config.epochs):
        total = 0.0
        for j in rng.permutation(len(examples)):
            x, y = examples[j]
            model.params.zero_grad()
            loss = _loss(model, x, y)
            val = loss.item()
            if not math.isfinite(val):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch + 1}", losses)
            loss.backward()
            optimizer_step(model.params, None, opt)
            total += val
        losses.append(total / len(examples))
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs} loss {losses[-1]:.4f}")
    model.params.zero_grad()
    return TrainResult(model, losses)


def params_hash(model) -> str:
    h = hashlib.sha256()
    for k, a in model.params.arrays().items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- checkpoints

def checkpoint_bytes(model, config: TrainConfig, extra: dict | None = None) -> bytes:
    arrays = model.params.arrays()
    header = {"version": CHECKPOINT_VERSION, "model": model.spec(), "train_config": asdict(config),
              "params": {k: list(a.shape) for k, a in arrays.items()}, "extra": extra or {}}
    buf = io.BytesIO()
    np.savez(buf, **{HEADER_KEY: np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8)},
             **arrays)
    return buf.getvalue()


def save_checkpoint(path, model, config: TrainConfig, extra: dict | None = None) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model, config, extra))


def load_checkpoint(path):
    """Return ``(model, train_config, header)``; parameters are restored bit-exactly."""
    with np.load(path, allow_pickle=False) as z:
        if HEADER_KEY not in z.files:
            raise ValueError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(z[HEADER_KEY].tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
        model = build_model(header["model"])
        expected = set(model.params.names())
        stored = set(z.files) - {HEADER_KEY}
        if stored != expected:
            raise ValueError(f"{path}: parameter names do not match the model")
        for k in expected:
            a = z[k]
            if list(a.shape) != list(model.params[k].shape):
                raise ValueError(f"{path}: shape mismatch for {k}")
            model.params[k].data = np.array(a, dtype=np.float64)
    return model, TrainConfig.from_doc(header["train_config"]), header
