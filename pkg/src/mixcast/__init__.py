"""Forecasting sparse multivariate time series with a dynamic Gaussian mixture."""
from .dataset import ForecastTask, MtsSample, load_long_csv, synthesize
from .evalcast import evaluate, forecast, imputation_eval, robustness_sweep, score
from .trainer import (ModelParams, TrainConfig, checkpoint_load, checkpoint_save, elbo,
                      exact_log_marginal, train)

__version__ = "0.1.0"

__all__ = [
    "ForecastTask", "ModelParams", "MtsSample", "TrainConfig", "checkpoint_load",
    "checkpoint_save", "elbo", "evaluate", "exact_log_marginal", "forecast",
    "imputation_eval", "load_long_csv", "robustness_sweep", "score", "synthesize", "train",
]
