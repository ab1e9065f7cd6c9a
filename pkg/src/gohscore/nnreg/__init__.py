"""Compact VGG-style regression networks in plain numpy."""
from .network import NetSpec, Regressor, mse_loss, normalize_hu
from .training import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    predict_levels,
    predict_raw,
    predict_scores,
    save_checkpoint,
    train,
    write_loss_log,
)

__all__ = [
    "NetSpec", "Regressor", "TrainConfig", "evaluate", "load_checkpoint", "mse_loss",
    "normalize_hu", "predict_levels", "predict_raw", "predict_scores", "save_checkpoint",
    "train", "write_loss_log",
]
