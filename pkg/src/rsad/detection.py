"""Window scoring, threshold selection, classification, and evaluation.

Each window yields a score vector of three residual norms (reconstruction and
the two multi-step predictions); the vector collapses to a scalar with the
same weights as the training objective, and windows scoring strictly above a
threshold are flagged anomalous. Evaluation is window-level precision, recall
and F1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as model_mod
from .data import WindowSample, stack_windows
from .model import ModelParams
from .training import LossWeights


class ThresholdError(ValueError):
    """Raised when a threshold mode cannot be applied to the given labels."""


@dataclass(frozen=True)
class ScoreVector:
    """Per-window residual norms plus the window's origin timestamp index."""

    rec: float
    p1: float
    p2: float
    origin_index: int


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float


def score_window(params: ModelParams, sample: WindowSample) -> ScoreVector:
    """Score one window; it must be normalized with the training stats."""
    rec, p1, p2 = model_mod.batch_residuals(params, sample.x[None], sample.x_f[None])
    return ScoreVector(
        rec=float(rec[0]), p1=float(p1[0]), p2=float(p2[0]), origin_index=sample.origin_index
    )


def score_windows(params: ModelParams, samples: Sequence[WindowSample],
                  batch_size: int = 256) -> list[ScoreVector]:
    """Batched scoring; order and values match per-window `score_window`."""
    out: list[ScoreVector] = []
    if not samples:
        return out
    xs, xfs = stack_windows(samples)
    for start in range(0, len(samples), batch_size):
        rec, p1, p2 = model_mod.batch_residuals(
            params, xs[start : start + batch_size], xfs[start : start + batch_size]
        )
        for k in range(rec.shape[0]):
            out.append(
                ScoreVector(
                    rec=float(rec[k]),
                    p1=float(p1[k]),
                    p2=float(p2[k]),
                    origin_index=samples[start + k].origin_index,
                )
            )
    return out


def scalarize(score: ScoreVector, weights: LossWeights, mode: str = "weighted") -> float:
    """Collapse a score vector to a scalar.

    ``weighted`` reuses the training-objective weights so score and loss
    agree; ``max`` takes the largest component instead.
    """
    if mode == "weighted":
        return weights.alpha * score.rec + weights.beta * score.p1 + weights.gamma * score.p2
    if mode == "max":
        return max(score.rec, score.p1, score.p2)
    raise ValueError(f"unknown scalarize mode {mode!r}")


def scalarize_all(scores: Sequence[ScoreVector], weights: LossWeights,
                  mode: str = "weighted") -> np.ndarray:
    return np.array([scalarize(s, weights, mode) for s in scores], dtype=np.float64)


def classify(scores, tau: float) -> np.ndarray:
    """Strictly-greater comparison: a score exactly at the threshold is normal."""
    return np.asarray(scores, dtype=np.float64) > tau


def evaluate(predicted, truth) -> Metrics:
    """Window-level confusion counts with zero-division conventions.

    Precision and recall are 0 when their denominator is 0, and F1 is 0 when
    precision + recall is 0.
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape or predicted.ndim != 1:
        raise ValueError(
            f"predicted and truth must be equal-length 1-D arrays, "
            f"got {predicted.shape} and {truth.shape}"
        )
    if predicted.size == 0:
        raise ValueError("cannot evaluate empty label arrays")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(tp=tp, fp=fp, fn=fn, tn=tn, precision=precision, recall=recall, f1=f1)


def threshold_candidates(scores) -> np.ndarray:
    """Midpoints between consecutive distinct sorted scores plus +-inf
    sentinels; together these realize every achievable classification."""
    distinct = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([-np.inf], mids, [np.inf]))


def threshold_sweep(scores, labels) -> list[tuple[float, Metrics]]:
    """Metrics at every candidate threshold, for trade-off inspection."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    return [(float(tau), evaluate(classify(scores, tau), labels))
            for tau in threshold_candidates(scores)]


def select_threshold(scores, labels, mode: str = "best_f1", percentile: float = 99.0) -> float:
    """Pick the detection threshold from validation scores.

    ``best_f1`` maximizes F1 over all candidate thresholds (ties resolve to
    the lowest threshold) and requires at least one positive label.
    ``percentile`` takes the given percentile of the *normal* validation
    scores and works without anomalies.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ThresholdError(
            f"need equal-length nonempty scores and labels, got {scores.shape}, {labels.shape}"
        )
    if mode == "best_f1":
        if not labels.any():
            raise ThresholdError(
                "best_f1 threshold selection needs at least one anomalous validation "
                "window; use percentile mode instead"
            )
        best_tau = -np.inf
        best_f1 = -1.0
        for tau in threshold_candidates(scores):
            f1 = evaluate(classify(scores, tau), labels).f1
            if f1 > best_f1:
                best_f1 = f1
                best_tau = float(tau)
        return best_tau
    if mode == "percentile":
        normal = scores[~labels]
        if normal.size == 0:
            raise ThresholdError("percentile mode needs at least one normal validation window")
        if not (0.0 <= percentile <= 100.0):
            raise ThresholdError(f"percentile must be in [0, 100], got {percentile}")
        return float(np.percentile(normal, percentile))
    raise ThresholdError(f"unknown threshold mode {mode!r}")


def write_scores_csv(path, scores: Sequence[ScoreVector], scalars, labels, predicted) -> None:
    """Per-window score table: origin_index,rec,p1,p2,scalar,label,predicted."""
    scalars = np.asarray(scalars, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    predicted = np.asarray(predicted, dtype=bool)
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("origin_index,rec,p1,p2,scalar,label,predicted\n")
        for sv, s, lab, pred in zip(scores, scalars, labels, predicted):
            fh.write(
                f"{sv.origin_index},{sv.rec!r},{sv.p1!r},{sv.p2!r},"
                f"{float(s)!r},{int(lab)},{int(pred)}\n"
            )


def write_metrics(path, metrics: Metrics, tau: float) -> None:
    """Key=value metrics file including the threshold that produced them."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(f"tau={float(tau)!r}\n")
        fh.write(f"tp={metrics.tp}\n")
        fh.write(f"fp={metrics.fp}\n")
        fh.write(f"fn={metrics.fn}\n")
        fh.write(f"tn={metrics.tn}\n")
        fh.write(f"precision={metrics.precision!r}\n")
        fh.write(f"recall={metrics.recall!r}\n")
        fh.write(f"f1={metrics.f1!r}\n")
