"""Spatio-temporal attention traffic forecaster with rotary phases and a spectral node embedding."""

from .data import TrafficSeries, load_series, prepare, save_series, synth_generate
from .errors import ConfigError, DataError, NumericalError
from .graph import RoadGraph, load_adjacency_csv, spectral_basis
from .model import Forecaster, ModelConfig, load_checkpoint, parameter_count, save_checkpoint
from .train import TrainConfig, compute_metrics, evaluate, train_loop

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Forecaster",
    "ModelConfig",
    "NumericalError",
    "RoadGraph",
    "TrafficSeries",
    "TrainConfig",
    "compute_metrics",
    "evaluate",
    "load_adjacency_csv",
    "load_checkpoint",
    "load_series",
    "parameter_count",
    "prepare",
    "save_checkpoint",
    "save_series",
    "spectral_basis",
    "synth_generate",
    "train_loop",
]
