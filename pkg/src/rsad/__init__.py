"""Residual-based anomaly detection for multivariate time series.

An LSTM encoder/decoder reconstructs sliding windows, an MLP predicts future
steps from the encodings of both the window and its reconstruction, and
windows are flagged by thresholding the weighted sum of the three residual
norms.
"""

from .data import AnomalySpec, SeriesSet, SynthSpec, WindowSample, synth_generate
from .detection import Metrics, ScoreVector
from .estimator import RsadDetector
from .model import ModelConfig, ModelParams, init_params
from .training import LossBreakdown, LossWeights, TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "AnomalySpec",
    "LossBreakdown",
    "LossWeights",
    "Metrics",
    "ModelConfig",
    "ModelParams",
    "RsadDetector",
    "ScoreVector",
    "SeriesSet",
    "SynthSpec",
    "TrainConfig",
    "WindowSample",
    "fit",
    "init_params",
    "synth_generate",
    "__version__",
]
