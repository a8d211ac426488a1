"""Scikit-learn style front end for the residual-based detector."""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import data as data_mod
from . import detection, model as model_mod, training
from .data import SeriesSet
from .model import ModelConfig
from .training import LossWeights, TrainConfig


def check_series(X, min_length: int = 2) -> np.ndarray:
    """Validate a time-major series array of shape (n_timestamps, n_channels)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array (n_timestamps, n_channels), got shape {X.shape}")
    if X.shape[0] < min_length or X.shape[1] < 1:
        raise ValueError(f"series too small: shape {X.shape}, need at least {min_length} rows")
    if not np.all(np.isfinite(X)):
        raise ValueError("series contains NaN or infinite values")
    return X


def check_labels(y, n_timestamps: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n_timestamps,):
        raise ValueError(f"labels must have shape ({n_timestamps},), got {y.shape}")
    return y.astype(bool)


class RsadDetector(BaseEstimator):
    """Window-level anomaly detector built on reconstruction and multi-step
    prediction residuals.

    An LSTM encoder summarizes each sliding window, an LSTM decoder
    reconstructs the window from that summary, and an MLP predicts the next
    ``horizon`` steps from the encodings of both the window and its
    reconstruction. Training minimizes the weighted sum of the three residual
    norms on normal data; at detection time the same weighted sum is the
    anomaly score and windows scoring strictly above the fitted threshold are
    flagged.

    Parameters
    ----------
    window : int, default=64
        Sliding-window length in time steps.
    horizon : int, default=8
        Number of future steps the predictor is trained against. Scoring a
        window therefore needs ``horizon`` observed steps after it.
    hidden : int, default=32
        LSTM hidden width for both encoder and decoder.
    mlp_hidden : tuple of int, default=(32,)
        Hidden-layer widths of the predictor MLP.
    alpha, beta, gamma : float, default=1.0
        Weights of the reconstruction and the two prediction residuals in
        both the training objective and the scalar anomaly score.
    stride : int, default=8
        Window stride used for training windows.
    eval_stride : int, default=1
        Window stride used for scoring and threshold selection.
    val_fraction : float, default=0.2
        Trailing fraction of each segment held out for early stopping and
        threshold selection.
    learning_rate : float, default=1e-3
    epochs : int, default=50
    batch_size : int, default=64
    patience : int, default=10
        Early-stopping patience in epochs on the validation loss.
    clip_norm : float, default=5.0
        Global gradient-norm clip.
    threshold_mode : {"best_f1", "percentile"}, default="best_f1"
        How the detection threshold is chosen on the validation windows.
        ``best_f1`` needs anomalous validation windows and falls back to the
        percentile rule (with a warning) when there are none.
    percentile : float, default=99.0
        Percentile of normal validation scores used by the fallback rule.
    score_mode : {"weighted", "max"}, default="weighted"
        Scalar collapse of the residual triple.
    reverse_reconstruction : bool, default=True
        Emit decoder output last-step-first and flip it back, the usual
        recurrent-autoencoder convention.
    random_state : int, default=0
        Seed for weight initialization and batch shuffling.

    Attributes
    ----------
    model_ : ModelParams
        Trained weights.
    threshold_ : float
        Fitted detection threshold on the scalar score.
    history_ : list of EpochStats
        Per-epoch training/validation loss breakdowns.
    norm_stats_ : NormStats
        Per-channel training statistics applied to every input.

    Examples
    --------
    >>> from rsad import RsadDetector, SynthSpec, synth_generate
    >>> series = synth_generate(SynthSpec(m=4, t=4000), seed=0)
    >>> det = RsadDetector(window=32, horizon=4, epochs=5).fit(series.x.T)
    >>> flags = det.predict(series.x.T)
    """

    def __init__(
        self,
        window: int = 64,
        horizon: int = 8,
        hidden: int = 32,
        mlp_hidden: tuple = (32,),
        alpha: float = 1.0,
        beta: float = 1.0,
        gamma: float = 1.0,
        stride: int = 8,
        eval_stride: int = 1,
        val_fraction: float = 0.2,
        learning_rate: float = 1e-3,
        epochs: int = 50,
        batch_size: int = 64,
        patience: int = 10,
        clip_norm: float = 5.0,
        threshold_mode: str = "best_f1",
        percentile: float = 99.0,
        score_mode: str = "weighted",
        reverse_reconstruction: bool = True,
        random_state: int = 0,
    ):
        self.window = window
        self.horizon = horizon
        self.hidden = hidden
        self.mlp_hidden = mlp_hidden
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.stride = stride
        self.eval_stride = eval_stride
        self.val_fraction = val_fraction
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.clip_norm = clip_norm
        self.threshold_mode = threshold_mode
        self.percentile = percentile
        self.score_mode = score_mode
        self.reverse_reconstruction = reverse_reconstruction
        self.random_state = random_state

    def _weights(self) -> LossWeights:
        return LossWeights(alpha=self.alpha, beta=self.beta, gamma=self.gamma)

    def _series_set(self, X, y=None) -> SeriesSet:
        X = check_series(X, min_length=self.window + self.horizon)
        labels = (
            check_labels(y, X.shape[0]) if y is not None else np.zeros(X.shape[0], dtype=bool)
        )
        return SeriesSet(x=X.T, labels=labels, segment_bounds=[(0, X.shape[0])])

    @staticmethod
    def _chrono_split(series: SeriesSet, val_fraction: float):
        train_ranges, val_ranges = [], []
        for s, e in series.segment_bounds:
            cut = s + int((e - s) * (1.0 - val_fraction))
            if cut > s:
                train_ranges.append((s, cut))
            if e > cut:
                val_ranges.append((cut, e))

        def build(ranges):
            cols = np.concatenate([series.x[:, a:b] for a, b in ranges], axis=1)
            labs = np.concatenate([series.labels[a:b] for a, b in ranges])
            bounds, off = [], 0
            for a, b in ranges:
                bounds.append((off, off + b - a))
                off += b - a
            return SeriesSet(x=cols, labels=labs, segment_bounds=bounds)

        if not train_ranges or not val_ranges:
            raise ValueError(
                f"val_fraction={val_fraction} leaves an empty train or validation portion"
            )
        return build(train_ranges), build(val_ranges)

    def fit(self, X, y=None):
        """Fit on a time-major series, training on its normal windows only.

        Parameters
        ----------
        X : array-like of shape (n_timestamps, n_channels)
        y : array-like of shape (n_timestamps,), optional
            Boolean/0-1 per-timestamp anomaly labels. Windows touching a
            labelled timestamp are excluded from training and inform
            threshold selection; without labels all windows are treated as
            normal and the percentile threshold rule applies.

        Returns
        -------
        self
        """
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.threshold_mode not in ("best_f1", "percentile"):
            raise ValueError(f"unknown threshold_mode {self.threshold_mode!r}")
        series = self._series_set(X, y)
        train_set, val_set = self._chrono_split(series, self.val_fraction)

        stats = data_mod.fit_normalize(train_set)
        train_set = data_mod.apply_normalize(train_set, stats)
        val_set = data_mod.apply_normalize(val_set, stats)

        train_windows = data_mod.normal_only(
            data_mod.make_windows(train_set, self.window, self.horizon, self.stride)
        )
        if not train_windows:
            raise ValueError("no normal training windows remain after label filtering")
        val_windows = data_mod.make_windows(val_set, self.window, self.horizon, self.eval_stride)

        config = ModelConfig(
            m=series.m,
            w=self.window,
            h=self.horizon,
            d=self.hidden,
            mlp_hidden=tuple(self.mlp_hidden),
            reverse_reconstruction=self.reverse_reconstruction,
        )
        init_seed, shuffle_seed = (
            int(s.generate_state(1)[0]) for s in np.random.SeedSequence(self.random_state).spawn(2)
        )
        params = model_mod.init_params(config, np.random.default_rng(init_seed))
        weights = self._weights()
        train_config = TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=shuffle_seed,
            patience=self.patience,
            clip_norm=self.clip_norm,
        )
        val_loss_windows = data_mod.normal_only(val_windows) or val_windows
        params, history = training.fit(
            params, train_windows, val_loss_windows, weights, train_config
        )

        val_scores = detection.scalarize_all(
            detection.score_windows(params, val_windows), weights, self.score_mode
        )
        val_labels = np.array([w.label for w in val_windows], dtype=bool)
        mode = self.threshold_mode
        if mode == "best_f1" and not val_labels.any():
            warnings.warn(
                "no anomalous validation windows; falling back to percentile threshold",
                stacklevel=2,
            )
            mode = "percentile"
        self.threshold_ = detection.select_threshold(
            val_scores, val_labels, mode=mode, percentile=self.percentile
        )
        self.model_ = params
        self.config_ = config
        self.weights_ = weights
        self.norm_stats_ = stats
        self.history_ = history
        self.n_features_in_ = series.m
        return self

    def _eval_windows(self, X, y=None):
        check_is_fitted(self, "model_")
        series = self._series_set(X, y)
        if series.m != self.n_features_in_:
            raise ValueError(
                f"X has {series.m} channels but the detector was fitted with "
                f"{self.n_features_in_}"
            )
        series = data_mod.apply_normalize(series, self.norm_stats_)
        return data_mod.make_windows(series, self.window, self.horizon, self.eval_stride)

    def score_vectors(self, X) -> list[detection.ScoreVector]:
        """Residual triples for every window of ``X`` at ``eval_stride``."""
        windows = self._eval_windows(X)
        return detection.score_windows(self.model_, windows)

    def anomaly_scores(self, X) -> np.ndarray:
        """Scalar anomaly score per window; higher means more anomalous."""
        return detection.scalarize_all(self.score_vectors(X), self.weights_, self.score_mode)

    def decision_function(self, X) -> np.ndarray:
        """Signed score margin: positive values are flagged anomalous."""
        return self.anomaly_scores(X) - self.threshold_

    def predict(self, X) -> np.ndarray:
        """0/1 anomaly flag per window (1 = anomalous)."""
        return detection.classify(self.anomaly_scores(X), self.threshold_).astype(int)

    def window_labels(self, X, y) -> np.ndarray:
        """Ground-truth window labels aligned with `predict` output."""
        check_is_fitted(self, "model_")
        windows = self._eval_windows(X, y)
        return np.array([w.label for w in windows], dtype=bool)

    def evaluate(self, X, y) -> detection.Metrics:
        """Window-level precision/recall/F1 of `predict` against labels."""
        return detection.evaluate(self.predict(X).astype(bool), self.window_labels(X, y))

    def score(self, X, y) -> float:
        """F1 on window labels, for scikit-learn model selection."""
        return self.evaluate(X, y).f1
