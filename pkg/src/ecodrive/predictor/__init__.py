"""Target-velocity forecasting: features, GRU encoder-decoder, training, baseline."""

from .features import (FEATURES, OUT_OF_RANGE_DISTANCE, Normalizer, WindowPair, make_windows,
                       own_distance_to_light, stack_windows, target_distance_to_light,
                       trajectory_features)
from .forecast import TargetForecast, constant_velocity_forecast, rmse
from .gru import (GruEdModel, gru_cell_step, init_model, load_model, loss_and_grads, predict,
                  predict_batch, save_model)
from .training import TrainConfig, TrainLog, grad_check, train

__all__ = [
    "FEATURES", "OUT_OF_RANGE_DISTANCE", "Normalizer", "WindowPair", "make_windows",
    "own_distance_to_light", "stack_windows", "target_distance_to_light", "trajectory_features",
    "TargetForecast", "constant_velocity_forecast", "rmse", "GruEdModel", "gru_cell_step",
    "init_model", "load_model", "loss_and_grads", "predict", "predict_batch", "save_model",
    "TrainConfig", "TrainLog", "grad_check", "train",
]
