"""Window model: LSTM encoder, LSTM decoder with linear readout, and an MLP
multi-step predictor, with analytic gradients for the composite residual loss.

Shapes follow the channels-first convention: a window is ``(m, w)`` with one
column per time step. All public forward operations also accept a trailing
batch axis internally; the batched entry points (`forward_full_batch`,
`batch_backward`) stack windows as ``(n_windows, m, w)``.

The loss driving `backward_full` is

    total = alpha * ||x - x_r|| + beta * ||x_f - p1_hat|| + gamma * ||x_f - p2_hat||

where ``x_r`` is the decoder reconstruction, ``p1_hat`` the prediction from the
encoding of ``x``, and ``p2_hat`` the prediction from the encoding of ``x_r``.
Gradients flow through the whole composition, including the second encoder
pass over the reconstruction; the encoder parameters are shared between both
passes. Norms are Frobenius norms; at an exactly zero residual the zero
subgradient is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .numerics import ShapeError, as_mat


class DivergenceError(FloatingPointError):
    """A forward or backward pass produced non-finite values."""


@dataclass(frozen=True)
class ModelConfig:
    """Shape configuration: channels, window length, horizon, hidden width.

    ``mlp_hidden`` lists the predictor's hidden-layer widths (may be empty for
    a single affine map). ``reverse_reconstruction`` controls whether decoder
    output columns are emitted last-step-first and flipped back into input
    order, the usual recurrent-autoencoder convention.
    """

    m: int
    w: int
    h: int
    d: int
    mlp_hidden: tuple[int, ...] = (32,)
    reverse_reconstruction: bool = True

    def __post_init__(self):
        object.__setattr__(self, "mlp_hidden", tuple(int(v) for v in self.mlp_hidden))
        for name in ("m", "w", "h", "d"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"ModelConfig.{name} must be a positive integer, got {v!r}")
        if any(v < 1 for v in self.mlp_hidden):
            raise ValueError("ModelConfig.mlp_hidden widths must be positive")


@dataclass
class LstmParams:
    """Stacked gate weights, rows ordered [input, forget, cell, output].

    ``w_gates`` is ``(4d, d + input_dim)`` and acts on the concatenation
    ``[hidden; x]``; ``b_gates`` is ``(4d, 1)``.
    """

    w_gates: np.ndarray
    b_gates: np.ndarray


@dataclass
class LstmState:
    hidden: np.ndarray  # (d, batch)
    cell: np.ndarray  # (d, batch)


@dataclass
class ModelParams:
    """All learnable weights plus the shape configuration."""

    encoder: LstmParams
    decoder: LstmParams
    readout: np.ndarray  # (m, d)
    readout_bias: np.ndarray  # (m, 1)
    mlp_weights: list[np.ndarray] = field(default_factory=list)
    mlp_biases: list[np.ndarray] = field(default_factory=list)
    config: ModelConfig = None


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per matrix.

    Forget-gate biases start at +1.0 so cells retain state early in training;
    all other biases start at zero.
    """

    def uniform(rows, cols, fan_in):
        k = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-k, k, size=(rows, cols))

    def lstm(input_dim):
        w = uniform(4 * config.d, config.d + input_dim, config.d + input_dim)
        b = np.zeros((4 * config.d, 1))
        b[config.d : 2 * config.d] = 1.0
        return LstmParams(w_gates=w, b_gates=b)

    dims = [config.d, *config.mlp_hidden, config.m * config.h]
    mlp_w = [uniform(dims[i + 1], dims[i], dims[i]) for i in range(len(dims) - 1)]
    mlp_b = [np.zeros((dims[i + 1], 1)) for i in range(len(dims) - 1)]
    return ModelParams(
        encoder=lstm(config.m),
        decoder=lstm(config.m),
        readout=uniform(config.m, config.d, config.d),
        readout_bias=np.zeros((config.m, 1)),
        mlp_weights=mlp_w,
        mlp_biases=mlp_b,
        config=config,
    )


def param_blocks(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Named parameter blocks in a fixed, checkpoint-stable order."""
    blocks = [
        ("encoder.w_gates", params.encoder.w_gates),
        ("encoder.b_gates", params.encoder.b_gates),
        ("decoder.w_gates", params.decoder.w_gates),
        ("decoder.b_gates", params.decoder.b_gates),
        ("decoder.readout", params.readout),
        ("decoder.readout_bias", params.readout_bias),
    ]
    for i, (w, b) in enumerate(zip(params.mlp_weights, params.mlp_biases)):
        blocks.append((f"predictor.w{i}", w))
        blocks.append((f"predictor.b{i}", b))
    return blocks


def count_params(params: ModelParams) -> int:
    return sum(arr.size for _, arr in param_blocks(params))


def copy_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        encoder=LstmParams(params.encoder.w_gates.copy(), params.encoder.b_gates.copy()),
        decoder=LstmParams(params.decoder.w_gates.copy(), params.decoder.b_gates.copy()),
        readout=params.readout.copy(),
        readout_bias=params.readout_bias.copy(),
        mlp_weights=[w.copy() for w in params.mlp_weights],
        mlp_biases=[b.copy() for b in params.mlp_biases],
        config=params.config,
    )


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in param_blocks(params)}


def zero_state(d: int, batch: int = 1) -> LstmState:
    return LstmState(hidden=np.zeros((d, batch)), cell=np.zeros((d, batch)))


def lstm_step(params: LstmParams, state: LstmState, x_t: np.ndarray) -> LstmState:
    """One cell update: gates from ``w_gates @ [hidden; x] + b_gates``.

    Accepts any number of batch columns; the bias broadcasts across them.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    d = state.hidden.shape[0]
    expected_in = params.w_gates.shape[1] - d
    if x_t.shape[0] != expected_in or x_t.shape[1:] != state.hidden.shape[1:]:
        raise ShapeError(
            f"lstm_step: input shape {x_t.shape} incompatible with state "
            f"{state.hidden.shape} and gate matrix {params.w_gates.shape}"
        )
    z = params.w_gates @ np.concatenate([state.hidden, x_t], axis=0) + params.b_gates
    i = expit(z[:d])
    f = expit(z[d : 2 * d])
    g = np.tanh(z[2 * d : 3 * d])
    o = expit(z[3 * d :])
    c = f * state.cell + i * g
    return LstmState(hidden=o * np.tanh(c), cell=c)


def _lstm_forward(params: LstmParams, inputs: np.ndarray, h0: np.ndarray, c0: np.ndarray):
    """Run the cell over time-major inputs ``(t, input_dim, batch)``.

    Returns the hidden sequence ``(t, d, batch)`` and the per-step cache needed
    by `_lstm_backward`.
    """
    steps = inputs.shape[0]
    d = h0.shape[0]
    batch = h0.shape[1]
    hs = np.empty((steps, d, batch))
    cache = []
    h, c = h0, c0
    for t in range(steps):
        hx = np.concatenate([h, inputs[t]], axis=0)
        z = params.w_gates @ hx + params.b_gates
        i = expit(z[:d])
        f = expit(z[d : 2 * d])
        g = np.tanh(z[2 * d : 3 * d])
        o = expit(z[3 * d :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        cache.append((hx, i, f, g, o, c_prev, tc))
    return hs, (h, c), cache


def _lstm_backward(params: LstmParams, cache, d_hs, d_h_last, d_c_last):
    """Backpropagation through time for one `_lstm_forward` run.

    ``d_hs`` carries per-step gradients on the hidden outputs (or None);
    ``d_h_last``/``d_c_last`` are extra gradients on the final state. Returns
    gate-weight and bias gradients, input gradients, and gradients with
    respect to the initial state.
    """
    steps = len(cache)
    d = params.b_gates.shape[0] // 4
    input_dim = params.w_gates.shape[1] - d
    batch = cache[0][0].shape[1]
    dw = np.zeros_like(params.w_gates)
    db = np.zeros_like(params.b_gates)
    d_inputs = np.empty((steps, input_dim, batch))
    dh_next = d_h_last if d_h_last is not None else np.zeros((d, batch))
    dc_next = d_c_last if d_c_last is not None else np.zeros((d, batch))
    for t in range(steps - 1, -1, -1):
        hx, i, f, g, o, c_prev, tc = cache[t]
        dh = dh_next if d_hs is None else dh_next + d_hs[t]
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
            axis=0,
        )
        dw += dz @ hx.T
        db += dz.sum(axis=1, keepdims=True)
        dhx = params.w_gates.T @ dz
        dh_next = dhx[:d]
        d_inputs[t] = dhx[d:]
    return dw, db, d_inputs, dh_next, dc_next


def _mlp_forward(weights, biases, x):
    """Affine + tanh hidden layers, linear output. ``x`` is ``(in, batch)``."""
    acts = [x]
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.tanh(w @ a + b)
        acts.append(a)
    out = weights[-1] @ a + biases[-1]
    return out, acts


def _mlp_backward(weights, acts, d_out):
    layers = len(weights)
    dws = [None] * layers
    dbs = [None] * layers
    dz = d_out
    for l in range(layers - 1, -1, -1):
        dws[l] = dz @ acts[l].T
        dbs[l] = dz.sum(axis=1, keepdims=True)
        da = weights[l].T @ dz
        if l > 0:
            y = acts[l]
            dz = da * (1.0 - y * y)
    return dws, dbs, da


def _check_window(params: ModelParams, x: np.ndarray, what: str = "window") -> np.ndarray:
    x = as_mat(x, what)
    cfg = params.config
    if x.shape != (cfg.m, cfg.w):
        raise ShapeError(f"{what} shape {x.shape} does not match config ({cfg.m}, {cfg.w})")
    return x


def encode(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, LstmState]:
    """Encode one window from a zero initial state.

    Returns the full hidden sequence ``(d, w)`` and the final state.
    """
    x = _check_window(params, x)
    inputs = np.ascontiguousarray(x.T)[:, :, None]  # (w, m, 1)
    hs, (h, c), _ = _lstm_forward(
        params.encoder, inputs, *_zero_hc(params.config.d, 1)
    )
    return np.ascontiguousarray(hs[:, :, 0].T), LstmState(hidden=h, cell=c)


def _zero_hc(d, batch):
    return np.zeros((d, batch)), np.zeros((d, batch))


def decode(params: ModelParams, final: LstmState) -> np.ndarray:
    """Reconstruct a window from the encoder's final state.

    The decoder starts from that state, is driven by zero inputs for ``w``
    steps, and each hidden vector passes through the affine readout. With
    ``reverse_reconstruction`` the columns are emitted last-first and flipped
    back so the output aligns with the input window.
    """
    cfg = params.config
    batch = final.hidden.shape[1]
    zeros_in = np.zeros((cfg.w, cfg.m, batch))
    hd, _, _ = _lstm_forward(params.decoder, zeros_in, final.hidden, final.cell)
    y = np.einsum("md,tdb->tmb", params.readout, hd) + params.readout_bias[None, :, :]
    if cfg.reverse_reconstruction:
        y = y[::-1]
    x_r = np.ascontiguousarray(y.transpose(2, 1, 0))  # (batch, m, w)
    return x_r[0] if batch == 1 else x_r


def predict(params: ModelParams, final: LstmState) -> np.ndarray:
    """Predict the next ``h`` steps from the final encoder hidden vector.

    The MLP's flat output is laid out time-major: the first ``m`` entries form
    the first future column.
    """
    cfg = params.config
    batch = final.hidden.shape[1]
    out, _ = _mlp_forward(params.mlp_weights, params.mlp_biases, final.hidden)
    x_f_hat = out.reshape(cfg.h, cfg.m, batch).transpose(2, 1, 0)
    return np.ascontiguousarray(x_f_hat[0]) if batch == 1 else np.ascontiguousarray(x_f_hat)


def forward_full(params: ModelParams, x: np.ndarray):
    """Full pass for one window: reconstruction plus both predictions.

    The same encoder weights run twice, once over ``x`` and once over the
    reconstruction.
    """
    x = _check_window(params, x)
    x_r, x_f_hat1, x_f_hat2, _ = _forward_core(params, x[None])
    return x_r[0], x_f_hat1[0], x_f_hat2[0]


def forward_full_batch(params: ModelParams, xs: np.ndarray):
    """Batched `forward_full` over windows stacked as ``(n, m, w)``."""
    xs = _check_batch(params, xs)
    x_r, x_f_hat1, x_f_hat2, _ = _forward_core(params, xs)
    return x_r, x_f_hat1, x_f_hat2


def _check_batch(params: ModelParams, xs: np.ndarray, what: str = "windows") -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    cfg = params.config
    if xs.ndim != 3 or xs.shape[1:] != (cfg.m, cfg.w):
        raise ShapeError(f"{what} must have shape (n, {cfg.m}, {cfg.w}), got {xs.shape}")
    return xs


def _forward_core(params: ModelParams, xs: np.ndarray):
    """Shared forward pass retaining every intermediate needed for backward."""
    cfg = params.config
    batch = xs.shape[0]
    x_tm = np.ascontiguousarray(xs.transpose(2, 1, 0))  # (w, m, batch)

    hs1, (h1, c1), cache1 = _lstm_forward(params.encoder, x_tm, *_zero_hc(cfg.d, batch))

    zeros_in = np.zeros((cfg.w, cfg.m, batch))
    hd, _, cache_d = _lstm_forward(params.decoder, zeros_in, h1, c1)
    y = np.einsum("md,tdb->tmb", params.readout, hd) + params.readout_bias[None, :, :]
    xr_tm = y[::-1] if cfg.reverse_reconstruction else y
    x_r = np.ascontiguousarray(xr_tm.transpose(2, 1, 0))

    hs2, (h2, c2), cache2 = _lstm_forward(
        params.encoder, np.ascontiguousarray(xr_tm), *_zero_hc(cfg.d, batch)
    )

    out1, acts1 = _mlp_forward(params.mlp_weights, params.mlp_biases, h1)
    out2, acts2 = _mlp_forward(params.mlp_weights, params.mlp_biases, h2)
    x_f_hat1 = np.ascontiguousarray(out1.reshape(cfg.h, cfg.m, batch).transpose(2, 1, 0))
    x_f_hat2 = np.ascontiguousarray(out2.reshape(cfg.h, cfg.m, batch).transpose(2, 1, 0))

    cache = {
        "cache1": cache1,
        "cache_d": cache_d,
        "cache2": cache2,
        "hd": hd,
        "acts1": acts1,
        "acts2": acts2,
    }
    return x_r, x_f_hat1, x_f_hat2, cache


def batch_residuals(params: ModelParams, xs: np.ndarray, xfs: np.ndarray):
    """Per-window residual norms (rec, p1, p2), each shaped ``(n,)``."""
    xs = _check_batch(params, xs)
    xfs = _check_futures(params, xfs, xs.shape[0])
    x_r, x_f_hat1, x_f_hat2, _ = _forward_core(params, xs)
    rec = np.sqrt(((xs - x_r) ** 2).sum(axis=(1, 2)))
    p1 = np.sqrt(((xfs - x_f_hat1) ** 2).sum(axis=(1, 2)))
    p2 = np.sqrt(((xfs - x_f_hat2) ** 2).sum(axis=(1, 2)))
    return rec, p1, p2


def _check_futures(params: ModelParams, xfs: np.ndarray, n: int) -> np.ndarray:
    xfs = np.asarray(xfs, dtype=np.float64)
    cfg = params.config
    if xfs.shape != (n, cfg.m, cfg.h):
        raise ShapeError(f"future targets must have shape ({n}, {cfg.m}, {cfg.h}), got {xfs.shape}")
    return xfs


def _norm_seed(diff: np.ndarray, norms: np.ndarray, coeff: float) -> np.ndarray:
    """Gradient seed ``coeff * diff / norm`` per window, zero where norm is zero."""
    inv = np.where(norms > 0.0, 1.0 / np.where(norms > 0.0, norms, 1.0), 0.0)
    return coeff * diff * inv[:, None, None]


def backward_full(params: ModelParams, x: np.ndarray, x_f: np.ndarray, weights):
    """Analytic gradients of the weighted residual loss for one window.

    ``weights`` supplies ``alpha``, ``beta``, ``gamma``. Returns a dict of
    gradients keyed like `param_blocks` plus the (rec, p1, p2) residual norms.
    """
    x = _check_window(params, x)
    x_f = as_mat(x_f, "x_f")
    cfg = params.config
    if x_f.shape != (cfg.m, cfg.h):
        raise ShapeError(f"x_f shape {x_f.shape} does not match config ({cfg.m}, {cfg.h})")
    grads, rec, p1, p2 = batch_backward(params, x[None], x_f[None], weights, reduce="sum")
    return grads, (float(rec[0]), float(p1[0]), float(p2[0]))


def batch_backward(params: ModelParams, xs: np.ndarray, xfs: np.ndarray, weights, reduce="mean"):
    """Gradients of the batch loss (mean or sum of per-window losses).

    Returns ``(grads, rec, p1, p2)`` where the residual arrays are per-window
    norms. Raises `DivergenceError` if any residual or gradient turns
    non-finite.
    """
    xs = _check_batch(params, xs)
    xfs = _check_futures(params, xfs, xs.shape[0])
    if reduce not in ("mean", "sum"):
        raise ValueError(f"reduce must be 'mean' or 'sum', got {reduce!r}")
    cfg = params.config
    batch = xs.shape[0]
    alpha, beta, gamma = float(weights.alpha), float(weights.beta), float(weights.gamma)
    scale = 1.0 / batch if reduce == "mean" else 1.0

    x_r, x_f_hat1, x_f_hat2, cache = _forward_core(params, xs)
    rec = np.sqrt(((xs - x_r) ** 2).sum(axis=(1, 2)))
    p1 = np.sqrt(((xfs - x_f_hat1) ** 2).sum(axis=(1, 2)))
    p2 = np.sqrt(((xfs - x_f_hat2) ** 2).sum(axis=(1, 2)))
    for name, arr in (("rec", rec), ("p1", p1), ("p2", p2)):
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(f"non-finite {name} residual in forward pass")

    grads = zero_grads(params)

    # prediction heads
    d_xf1 = _norm_seed(x_f_hat1 - xfs, p1, scale * beta)
    d_xf2 = _norm_seed(x_f_hat2 - xfs, p2, scale * gamma)
    d_out1 = d_xf1.transpose(2, 1, 0).reshape(cfg.h * cfg.m, batch)
    d_out2 = d_xf2.transpose(2, 1, 0).reshape(cfg.h * cfg.m, batch)
    dws1, dbs1, d_h1_mlp = _mlp_backward(params.mlp_weights, cache["acts1"], d_out1)
    dws2, dbs2, d_h2 = _mlp_backward(params.mlp_weights, cache["acts2"], d_out2)
    for i in range(len(params.mlp_weights)):
        grads[f"predictor.w{i}"] += dws1[i] + dws2[i]
        grads[f"predictor.b{i}"] += dbs1[i] + dbs2[i]

    # second encoder pass: only its final hidden vector feeds the predictor
    dw_e2, db_e2, d_xr_tm, _, _ = _lstm_backward(
        params.encoder, cache["cache2"], None, d_h2, None
    )
    grads["encoder.w_gates"] += dw_e2
    grads["encoder.b_gates"] += db_e2

    # reconstruction residual contributes directly to x_r
    d_xr_rec = _norm_seed(x_r - xs, rec, scale * alpha)
    d_xr_tm = d_xr_tm + d_xr_rec.transpose(2, 1, 0)

    # through the readout into the decoder
    d_y = d_xr_tm[::-1] if cfg.reverse_reconstruction else d_xr_tm
    hd = cache["hd"]
    grads["decoder.readout"] += np.einsum("tmb,tdb->md", d_y, hd)
    grads["decoder.readout_bias"] += d_y.sum(axis=(0, 2))[:, None]
    d_hd = np.einsum("md,tmb->tdb", params.readout, d_y)
    dw_d, db_d, _, d_h0_dec, d_c0_dec = _lstm_backward(
        params.decoder, cache["cache_d"], d_hd, None, None
    )
    grads["decoder.w_gates"] += dw_d
    grads["decoder.b_gates"] += db_d

    # first encoder pass: gradient arrives on the final state from the
    # predictor head and from the decoder's initial state
    dw_e1, db_e1, _, _, _ = _lstm_backward(
        params.encoder, cache["cache1"], None, d_h1_mlp + d_h0_dec, d_c0_dec
    )
    grads["encoder.w_gates"] += dw_e1
    grads["encoder.b_gates"] += db_e1

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in block {name}")
    return grads, rec, p1, p2
