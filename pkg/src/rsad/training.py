"""Composite residual objective, mini-batch training loop, and checkpoint
persistence.

The per-window loss is ``alpha * rec + beta * p1 + gamma * p2`` over the three
residual norms; a batch optimizes the mean of its per-window losses with
adaptive-moment updates and global-norm gradient clipping.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import model as model_mod
from .data import NormStats, WindowSample, stack_windows
from .model import DivergenceError, ModelConfig, ModelParams, copy_params, param_blocks
from .numerics import residual_norm

CHECKPOINT_MAGIC = b"RSAD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LossWeights:
    """Relative influence of the reconstruction and prediction residuals."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be non-negative, got {vals}")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decays must lie in (0, 1)")
        if self.eps <= 0 or self.clip_norm <= 0 or self.patience < 1:
            raise ValueError("eps, clip_norm and patience must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    """Residual components and the weighted total they combine into."""

    rec: float
    p1: float
    p2: float
    total: float

    @classmethod
    def combine(cls, rec: float, p1: float, p2: float, weights: LossWeights):
        total = weights.alpha * rec + weights.beta * p1 + weights.gamma * p2
        return cls(rec=float(rec), p1=float(p1), p2=float(p2), total=float(total))


class TrainingDivergenceError(DivergenceError):
    """Training produced a non-finite loss; carries epoch/batch diagnostics."""

    def __init__(self, epoch: int, batch: int, detail: str):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"divergence at epoch {epoch}, batch {batch}: {detail}")


def loss(x, x_r, x_f, x_f_hat1, x_f_hat2, weights: LossWeights) -> LossBreakdown:
    """Evaluate the three residual norms and their weighted total."""
    return LossBreakdown.combine(
        rec=residual_norm(x, x_r),
        p1=residual_norm(x_f, x_f_hat1),
        p2=residual_norm(x_f, x_f_hat2),
        weights=weights,
    )


@dataclass
class EpochStats:
    epoch: int
    train: LossBreakdown
    val: LossBreakdown | None


class AdamOptimizer:
    """Adaptive-moment updates over the model's named parameter blocks."""

    def __init__(self, params: ModelParams, config: TrainConfig):
        self.config = config
        self.step_count = 0
        self.moment1 = {name: np.zeros_like(arr) for name, arr in param_blocks(params)}
        self.moment2 = {name: np.zeros_like(arr) for name, arr in param_blocks(params)}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.step_count += 1
        bias1 = 1.0 - cfg.beta1**self.step_count
        bias2 = 1.0 - cfg.beta2**self.step_count
        for name, arr in param_blocks(params):
            g = grads[name]
            m = self.moment1[name]
            v = self.moment2[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            arr -= cfg.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all blocks in place so the global norm is at most ``max_norm``.

    Returns the pre-clipping global norm.
    """
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return float(total)


def _mean_breakdown(rec_sum, p1_sum, p2_sum, n, weights) -> LossBreakdown:
    return LossBreakdown.combine(rec_sum / n, p1_sum / n, p2_sum / n, weights)


def evaluate_loss(params: ModelParams, windows: Sequence[WindowSample], weights: LossWeights,
                  batch_size: int = 256) -> LossBreakdown:
    """Mean loss breakdown over a window set, forward passes only."""
    xs, xfs = stack_windows(windows)
    rec_sum = p1_sum = p2_sum = 0.0
    for start in range(0, len(windows), batch_size):
        rec, p1, p2 = model_mod.batch_residuals(
            params, xs[start : start + batch_size], xfs[start : start + batch_size]
        )
        rec_sum += float(rec.sum())
        p1_sum += float(p1.sum())
        p2_sum += float(p2.sum())
    return _mean_breakdown(rec_sum, p1_sum, p2_sum, len(windows), weights)


def fit(
    params: ModelParams,
    train_windows: Sequence[WindowSample],
    val_windows: Sequence[WindowSample],
    weights: LossWeights,
    config: TrainConfig,
) -> tuple[ModelParams, list[EpochStats]]:
    """Train with seeded shuffled mini-batches and early stopping.

    Validation total loss is tracked after every epoch; when it stops
    improving for ``patience`` epochs, training stops and the best-validation
    parameters are restored. With an empty validation set all epochs run and
    the final parameters are kept. Same seed and data give bit-identical
    history.
    """
    if not train_windows:
        raise ValueError("training window set is empty")
    xs, xfs = stack_windows(train_windows)
    n = xs.shape[0]
    rng = np.random.default_rng(config.seed)
    optimizer = AdamOptimizer(params, config)
    history: list[EpochStats] = []
    best_val = np.inf
    best_params = None
    stale = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        rec_sum = p1_sum = p2_sum = 0.0
        for batch_idx, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            try:
                grads, rec, p1, p2 = model_mod.batch_backward(
                    params, xs[idx], xfs[idx], weights, reduce="mean"
                )
            except DivergenceError as err:
                raise TrainingDivergenceError(epoch, batch_idx, str(err)) from err
            rec_sum += float(rec.sum())
            p1_sum += float(p1.sum())
            p2_sum += float(p2.sum())
            clip_gradients(grads, config.clip_norm)
            optimizer.step(params, grads)

        train_stats = _mean_breakdown(rec_sum, p1_sum, p2_sum, n, weights)
        if not np.isfinite(train_stats.total):
            raise TrainingDivergenceError(epoch, -1, "non-finite epoch training loss")
        val_stats = evaluate_loss(params, val_windows, weights) if val_windows else None
        history.append(EpochStats(epoch=epoch, train=train_stats, val=val_stats))

        if val_stats is not None:
            if val_stats.total < best_val:
                best_val = val_stats.total
                best_params = copy_params(params)
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if best_params is not None:
        params = best_params
    return params, history


def write_history_csv(path, history: Sequence[EpochStats]) -> None:
    """Per-epoch training components and validation total, one row per epoch."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("epoch,train_rec,train_p1,train_p2,train_total,val_total\n")
        for rec in history:
            val_total = repr(rec.val.total) if rec.val is not None else ""
            fh.write(
                f"{rec.epoch},{rec.train.rec!r},{rec.train.p1!r},"
                f"{rec.train.p2!r},{rec.train.total!r},{val_total}\n"
            )


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------


class CheckpointError(ValueError):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    """Magic bytes missing or trailing garbage present."""


class CheckpointVersionError(CheckpointError):
    """The file declares an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ended before the declared payload."""


class CheckpointShapeError(CheckpointError):
    """A stored matrix does not match the shape implied by the config."""


def _expected_blocks(config: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    m, d = config.m, config.d
    blocks = [
        ("encoder.w_gates", (4 * d, d + m)),
        ("encoder.b_gates", (4 * d, 1)),
        ("decoder.w_gates", (4 * d, d + m)),
        ("decoder.b_gates", (4 * d, 1)),
        ("decoder.readout", (m, d)),
        ("decoder.readout_bias", (m, 1)),
    ]
    dims = [d, *config.mlp_hidden, m * config.h]
    for i in range(len(dims) - 1):
        blocks.append((f"predictor.w{i}", (dims[i + 1], dims[i])))
        blocks.append((f"predictor.b{i}", (dims[i + 1], 1)))
    return blocks


def save_checkpoint(params: ModelParams, weights: LossWeights, norm_stats: NormStats, path) -> None:
    """Write the little-endian binary checkpoint.

    Layout: magic ``RSAD``, version u32, config (m, w, h, d as u32, reversal
    flag u8, hidden-layer count u32 plus widths), loss weights as three f64,
    channel count u32 with per-channel mean/std f64 arrays, then every
    parameter block as (rows u32, cols u32, row-major f64 payload) in the
    fixed `param_blocks` order.
    """
    cfg = params.config
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<IIII", cfg.m, cfg.w, cfg.h, cfg.d)
    buf += struct.pack("<B", 1 if cfg.reverse_reconstruction else 0)
    buf += struct.pack("<I", len(cfg.mlp_hidden))
    for width in cfg.mlp_hidden:
        buf += struct.pack("<I", width)
    buf += struct.pack("<ddd", weights.alpha, weights.beta, weights.gamma)
    buf += struct.pack("<I", cfg.m)
    buf += np.ascontiguousarray(norm_stats.mean, dtype="<f8").tobytes()
    buf += np.ascontiguousarray(norm_stats.std, dtype="<f8").tobytes()
    for _, arr in param_blocks(params):
        rows, cols = arr.shape
        buf += struct.pack("<II", rows, cols)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f64s(self, count: int, what: str) -> np.ndarray:
        raw = self.take(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def done(self) -> bool:
        return self.pos == len(self.data)


def load_checkpoint(path) -> tuple[ModelParams, LossWeights, NormStats]:
    """Read a checkpoint back; the round trip is bit-exact."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"bad magic bytes {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    m = reader.u32("config.m")
    w = reader.u32("config.w")
    h = reader.u32("config.h")
    d = reader.u32("config.d")
    reverse = reader.take(1, "config.reverse_reconstruction")[0]
    if reverse not in (0, 1):
        raise CheckpointFormatError(f"reversal flag must be 0 or 1, got {reverse}")
    n_hidden = reader.u32("config.mlp_hidden count")
    hidden = tuple(reader.u32(f"config.mlp_hidden[{i}]") for i in range(n_hidden))
    try:
        config = ModelConfig(m=m, w=w, h=h, d=d, mlp_hidden=hidden,
                             reverse_reconstruction=bool(reverse))
    except ValueError as err:
        raise CheckpointFormatError(f"invalid stored config: {err}") from err
    alpha, beta, gamma = struct.unpack("<ddd", reader.take(24, "loss weights"))
    weights = LossWeights(alpha=alpha, beta=beta, gamma=gamma)
    n_channels = reader.u32("norm stats channel count")
    if n_channels != m:
        raise CheckpointShapeError(
            f"norm stats carry {n_channels} channels but config declares m={m}"
        )
    stats = NormStats(
        mean=reader.f64s(m, "norm stats mean"),
        std=reader.f64s(m, "norm stats std"),
    )

    arrays: dict[str, np.ndarray] = {}
    for name, expected in _expected_blocks(config):
        rows = reader.u32(f"{name} rows")
        cols = reader.u32(f"{name} cols")
        if (rows, cols) != expected:
            raise CheckpointShapeError(
                f"block {name}: stored shape ({rows}, {cols}) does not match "
                f"expected {expected}"
            )
        arrays[name] = reader.f64s(rows * cols, name).reshape(rows, cols)
    if not reader.done():
        raise CheckpointFormatError(
            f"{len(reader.data) - reader.pos} trailing bytes after final block"
        )

    n_layers = len(config.mlp_hidden) + 1
    params = ModelParams(
        encoder=model_mod.LstmParams(arrays["encoder.w_gates"], arrays["encoder.b_gates"]),
        decoder=model_mod.LstmParams(arrays["decoder.w_gates"], arrays["decoder.b_gates"]),
        readout=arrays["decoder.readout"],
        readout_bias=arrays["decoder.readout_bias"],
        mlp_weights=[arrays[f"predictor.w{i}"] for i in range(n_layers)],
        mlp_biases=[arrays[f"predictor.b{i}"] for i in range(n_layers)],
        config=config,
    )
    return params, weights, stats
