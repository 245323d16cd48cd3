from .checkpoint import decode, encode, load_checkpoint, save_checkpoint
from .model import (DEFAULT_ARCH, DEFAULT_PARAM_COUNT, Architecture, EarlyExitPolicy, backward,
                    count_macs, expected_macs, forward, init_params, loss, loss_and_grads,
                    predict, predict_early_exit)
from .training import AdamState, Metrics, adam_step, evaluate, metrics_from_predictions, train_local

__all__ = [
    "AdamState", "Architecture", "DEFAULT_ARCH", "DEFAULT_PARAM_COUNT", "EarlyExitPolicy",
    "Metrics", "adam_step", "backward", "count_macs", "decode", "encode", "evaluate",
    "expected_macs", "forward", "init_params", "load_checkpoint", "loss", "loss_and_grads",
    "metrics_from_predictions", "predict", "predict_early_exit", "save_checkpoint", "train_local",
]
