"""From-scratch numpy sequence models for triage strategy and next-area prediction."""
from .autograd import Tensor, concat, stack
from .layers import (ModelParams, causal_mask, cross_entropy, cross_entropy_np, decay_hidden,
                     layer_norm, lstm_step, multi_head_attention, ode_evolve,
                     sinusoidal_positions, time2vec)
from .models import RNN_VARIANTS, AreaTransformer, TriageRNN, build_model, triage_features
from .optim import AMSGradConfig, NonFiniteGradient, optimizer_step
from .train import (TrainConfig, TrainingDiverged, TrainResult, area_windows, load_checkpoint,
                    make_transformer, make_triage_model, params_hash, save_checkpoint, train)

__all__ = [
    "Tensor", "concat", "stack", "ModelParams", "causal_mask", "cross_entropy", "cross_entropy_np",
    "decay_hidden", "layer_norm", "lstm_step", "multi_head_attention", "ode_evolve",
    "sinusoidal_positions", "time2vec", "RNN_VARIANTS", "AreaTransformer", "TriageRNN",
    "build_model", "triage_features", "AMSGradConfig", "NonFiniteGradient", "optimizer_step",
    "TrainConfig", "TrainingDiverged", "TrainResult", "area_windows", "load_checkpoint",
    "make_transformer", "make_triage_model", "params_hash", "save_checkpoint", "train",
]
