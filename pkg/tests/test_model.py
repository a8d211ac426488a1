import numpy as np
import pytest

from rsad.model import (
    LstmParams,
    LstmState,
    ModelConfig,
    backward_full,
    batch_backward,
    batch_residuals,
    copy_params,
    count_params,
    decode,
    encode,
    forward_full,
    init_params,
    lstm_step,
    param_blocks,
    predict,
    zero_state,
)
from rsad.numerics import ShapeError, finite_diff_grad, max_relative_error
from rsad.training import LossWeights, loss

from conftest import random_window


def scalar_sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def params_bytes(params):
    return b"".join(arr.tobytes() for _, arr in param_blocks(params))


# ---------------------------------------------------------------------------
# lstm_step
# ---------------------------------------------------------------------------


def test_lstm_step_all_zero_inputs_give_zero_state():
    params = LstmParams(w_gates=np.zeros((8, 5)), b_gates=np.zeros((8, 1)))
    state = zero_state(2)
    new = lstm_step(params, state, np.array([[0.7], [-1.3], [0.1]]))
    # candidate tanh(0) = 0 forces the cell to zero regardless of the input
    assert np.array_equal(new.cell, np.zeros((2, 1)))
    assert np.array_equal(new.hidden, np.zeros((2, 1)))


def test_lstm_step_saturated_gates_preserve_cell():
    d = 3
    b = np.zeros((4 * d, 1))
    b[d : 2 * d] = 50.0  # forget gate wide open
    b[:d] = -50.0  # input gate shut
    params = LstmParams(w_gates=np.zeros((4 * d, d + 2)), b_gates=b)
    cell = np.array([[0.3], [-0.8], [1.5]])
    state = LstmState(hidden=np.zeros((d, 1)), cell=cell.copy())
    new = lstm_step(params, state, np.ones((2, 1)))
    assert np.max(np.abs(new.cell - cell)) < 1e-15


def test_lstm_step_matches_scalar_oracle():
    # two-unit cell with one input, checked value by value against the gate
    # equations computed with plain floats
    rng = np.random.default_rng(10)
    d = 2
    w = rng.normal(size=(4 * d, d + 1))
    b = rng.normal(size=(4 * d, 1))
    h0 = rng.normal(size=(d, 1))
    c0 = rng.normal(size=(d, 1))
    x = rng.normal(size=(1, 1))

    hx = [h0[0, 0], h0[1, 0], x[0, 0]]
    expected_h, expected_c = [], []
    for unit in range(d):
        zi = sum(w[unit, k] * hx[k] for k in range(3)) + b[unit, 0]
        zf = sum(w[d + unit, k] * hx[k] for k in range(3)) + b[d + unit, 0]
        zg = sum(w[2 * d + unit, k] * hx[k] for k in range(3)) + b[2 * d + unit, 0]
        zo = sum(w[3 * d + unit, k] * hx[k] for k in range(3)) + b[3 * d + unit, 0]
        c_new = scalar_sigmoid(zf) * c0[unit, 0] + scalar_sigmoid(zi) * np.tanh(zg)
        expected_c.append(c_new)
        expected_h.append(scalar_sigmoid(zo) * np.tanh(c_new))

    new = lstm_step(LstmParams(w, b), LstmState(h0, c0), x)
    assert np.allclose(new.cell[:, 0], expected_c, atol=1e-14)
    assert np.allclose(new.hidden[:, 0], expected_h, atol=1e-14)


def test_lstm_step_shape_mismatch():
    params = LstmParams(w_gates=np.zeros((8, 5)), b_gates=np.zeros((8, 1)))
    with pytest.raises(ShapeError):
        lstm_step(params, zero_state(2), np.zeros((4, 1)))


# ---------------------------------------------------------------------------
# encode / decode / predict
# ---------------------------------------------------------------------------


def test_encode_single_step_window_reduces_to_lstm_step():
    config = ModelConfig(m=2, w=1, h=1, d=3, mlp_hidden=())
    params = init_params(config, np.random.default_rng(11))
    x = np.array([[0.4], [-0.9]])
    hidden_seq, final = encode(params, x)
    direct = lstm_step(params.encoder, zero_state(3), x)
    assert np.array_equal(hidden_seq, direct.hidden)
    assert np.array_equal(final.hidden, direct.hidden)
    assert np.array_equal(final.cell, direct.cell)


def test_encode_zero_params_gives_zero_hidden_sequence(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(12))
    params.encoder.w_gates[...] = 0.0
    params.encoder.b_gates[...] = 0.0
    x = np.random.default_rng(13).normal(size=(3, 8))
    hidden_seq, final = encode(params, x)
    assert np.array_equal(hidden_seq, np.zeros((5, 8)))
    assert np.array_equal(final.cell, np.zeros((5, 1)))


def test_encode_equals_chained_steps():
    config = ModelConfig(m=2, w=3, h=1, d=2, mlp_hidden=())
    params = init_params(config, np.random.default_rng(14))
    x = np.random.default_rng(15).normal(size=(2, 3))
    hidden_seq, final = encode(params, x)
    state = zero_state(2)
    for t in range(3):
        state = lstm_step(params.encoder, state, x[:, t : t + 1])
        assert np.allclose(hidden_seq[:, t : t + 1], state.hidden, atol=1e-15)
    assert np.allclose(final.hidden, state.hidden, atol=1e-15)
    assert np.allclose(final.cell, state.cell, atol=1e-15)


def test_encode_rejects_wrong_shape(tiny_model):
    with pytest.raises(ShapeError):
        encode(tiny_model, np.zeros((3, 9)))


def test_decode_zero_readout_emits_bias_columns(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(16))
    params.readout[...] = 0.0
    params.readout_bias[...] = np.array([[0.5], [-1.0], [2.0]])
    _, final = encode(params, np.random.default_rng(17).normal(size=(3, 8)))
    x_r = decode(params, final)
    assert x_r.shape == (3, 8)
    assert np.array_equal(x_r, np.tile(params.readout_bias, (1, 8)))


def test_decode_matches_scalar_two_step_oracle():
    config = ModelConfig(m=1, w=2, h=1, d=1, mlp_hidden=(), reverse_reconstruction=True)
    rng = np.random.default_rng(18)
    params = init_params(config, rng)
    h0 = rng.normal(size=(1, 1))
    c0 = rng.normal(size=(1, 1))

    w = params.decoder.w_gates
    b = params.decoder.b_gates
    r = params.readout[0, 0]
    rb = params.readout_bias[0, 0]

    def step(h, c):
        zi = w[0, 0] * h + b[0, 0]  # zero input: only the hidden column acts
        zf = w[1, 0] * h + b[1, 0]
        zg = w[2, 0] * h + b[2, 0]
        zo = w[3, 0] * h + b[3, 0]
        c_new = scalar_sigmoid(zf) * c + scalar_sigmoid(zi) * np.tanh(zg)
        return scalar_sigmoid(zo) * np.tanh(c_new), c_new

    h1, c1 = step(h0[0, 0], c0[0, 0])
    h2, _ = step(h1, c1)
    y1 = r * h1 + rb
    y2 = r * h2 + rb

    x_r = decode(params, LstmState(hidden=h0, cell=c0))
    # reversed emission: the first decoder step produces the last column
    assert np.allclose(x_r, [[y2, y1]], atol=1e-14)


def test_decode_without_reversal_keeps_emission_order():
    rng = np.random.default_rng(19)
    base = ModelConfig(m=2, w=4, h=1, d=3, mlp_hidden=())
    flipped = ModelConfig(m=2, w=4, h=1, d=3, mlp_hidden=(), reverse_reconstruction=False)
    params = init_params(base, rng)
    params_flat = copy_params(params)
    params_flat.config = flipped
    _, final = encode(params, rng.normal(size=(2, 4)))
    assert np.array_equal(decode(params, final), decode(params_flat, final)[:, ::-1])


def test_decode_shape_contract():
    for m, w, d in ((1, 2, 1), (4, 7, 3), (2, 16, 5)):
        config = ModelConfig(m=m, w=w, h=1, d=d, mlp_hidden=(2,))
        params = init_params(config, np.random.default_rng(20))
        _, final = encode(params, np.random.default_rng(21).normal(size=(m, w)))
        assert decode(params, final).shape == (m, w)


def test_predict_zero_weights_returns_reshaped_bias(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(22))
    for wmat in params.mlp_weights:
        wmat[...] = 0.0
    bias = np.arange(6.0)[:, None]  # m*h = 6
    params.mlp_biases[-1][...] = bias
    _, final = encode(params, np.random.default_rng(23).normal(size=(3, 8)))
    x_f_hat = predict(params, final)
    # time-major layout: first m entries form the first future column
    assert np.array_equal(x_f_hat, bias.reshape(2, 3).T)


def test_predict_no_hidden_layers_is_single_affine():
    config = ModelConfig(m=2, w=3, h=2, d=3, mlp_hidden=())
    params = init_params(config, np.random.default_rng(24))
    _, final = encode(params, np.random.default_rng(25).normal(size=(2, 3)))
    out = params.mlp_weights[0] @ final.hidden + params.mlp_biases[0]
    expected = np.stack([out[0:2, 0], out[2:4, 0]], axis=1)
    assert np.allclose(predict(params, final), expected, atol=1e-15)


def test_predict_one_hidden_layer_matches_affine_tanh_oracle():
    config = ModelConfig(m=2, w=3, h=3, d=4, mlp_hidden=(5,))
    params = init_params(config, np.random.default_rng(26))
    _, final = encode(params, np.random.default_rng(27).normal(size=(2, 3)))
    hidden = np.tanh(params.mlp_weights[0] @ final.hidden + params.mlp_biases[0])
    out = (params.mlp_weights[1] @ hidden + params.mlp_biases[1])[:, 0]
    expected = np.column_stack([out[0:2], out[2:4], out[4:6]])
    assert np.allclose(predict(params, final), expected, atol=1e-14)


# ---------------------------------------------------------------------------
# forward_full
# ---------------------------------------------------------------------------


def test_forward_full_is_composition_of_parts(tiny_model):
    rng = np.random.default_rng(28)
    x = rng.normal(size=(3, 8))
    x_r, x_f_hat1, x_f_hat2 = forward_full(tiny_model, x)
    _, final1 = encode(tiny_model, x)
    assert np.allclose(x_r, decode(tiny_model, final1), atol=1e-15)
    assert np.allclose(x_f_hat1, predict(tiny_model, final1), atol=1e-15)
    _, final2 = encode(tiny_model, x_r)
    assert np.allclose(x_f_hat2, predict(tiny_model, final2), atol=1e-15)


def test_forward_full_zero_params_outputs_bias_constants(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(29))
    for _, arr in param_blocks(params):
        arr[...] = 0.0
    params.readout_bias[...] = np.array([[1.0], [2.0], [3.0]])
    x = np.random.default_rng(30).normal(size=(3, 8))
    x_r, x_f_hat1, x_f_hat2 = forward_full(params, x)
    assert np.array_equal(x_r, np.tile(params.readout_bias, (1, 8)))
    assert np.array_equal(x_f_hat1, np.zeros((3, 2)))
    assert np.array_equal(x_f_hat2, np.zeros((3, 2)))


def test_forward_full_identical_reconstruction_gives_identical_predictions(tiny_config):
    # zero readout makes x_r a constant column; feeding that same constant
    # window in means both encoder passes see identical input
    params = init_params(tiny_config, np.random.default_rng(31))
    params.readout[...] = 0.0
    params.readout_bias[...] = np.array([[0.3], [-0.2], [0.9]])
    x = np.tile(params.readout_bias, (1, 8))
    x_r, x_f_hat1, x_f_hat2 = forward_full(params, x)
    assert np.array_equal(x_r, x)
    assert np.array_equal(x_f_hat1, x_f_hat2)


def test_forward_full_output_shapes():
    for m, w, h, d in ((1, 2, 1, 1), (3, 8, 2, 5), (2, 5, 4, 3)):
        config = ModelConfig(m=m, w=w, h=h, d=d, mlp_hidden=(3,))
        params = init_params(config, np.random.default_rng(32))
        x = np.random.default_rng(33).normal(size=(m, w))
        x_r, x_f_hat1, x_f_hat2 = forward_full(params, x)
        assert x_r.shape == (m, w)
        assert x_f_hat1.shape == (m, h)
        assert x_f_hat2.shape == (m, h)


def test_forward_is_pure_and_deterministic(tiny_model):
    rng = np.random.default_rng(34)
    x = rng.normal(size=(3, 8))
    before = params_bytes(tiny_model)
    first = forward_full(tiny_model, x)
    second = forward_full(tiny_model, x)
    assert params_bytes(tiny_model) == before
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# backward_full
# ---------------------------------------------------------------------------


def test_backward_zero_weights_give_zero_gradients(tiny_model):
    # all-zero loss weights are rejected by LossWeights, so emulate with a
    # plain namespace carrying zeros
    class Weights:
        alpha = beta = gamma = 0.0

    rng = np.random.default_rng(35)
    x, x_f = random_window(tiny_model.config, rng)
    grads, _ = backward_full(tiny_model, x, x_f, Weights())
    for name, g in grads.items():
        assert np.array_equal(g, np.zeros_like(g)), name


def test_backward_prediction_only_leaves_decoder_untouched(tiny_model):
    rng = np.random.default_rng(36)
    x, x_f = random_window(tiny_model.config, rng)
    grads, _ = backward_full(tiny_model, x, x_f, LossWeights(alpha=0.0, beta=1.0, gamma=0.0))
    for name in ("decoder.w_gates", "decoder.b_gates", "decoder.readout", "decoder.readout_bias"):
        assert np.array_equal(grads[name], np.zeros_like(grads[name])), name
    assert np.any(grads["encoder.w_gates"] != 0.0)
    assert np.any(grads["predictor.w0"] != 0.0)


def test_backward_matches_finite_differences(tiny_config, unit_weights):
    rng = np.random.default_rng(37)
    params = init_params(tiny_config, rng)
    x, x_f = random_window(tiny_config, rng)
    grads, _ = backward_full(params, x, x_f, unit_weights)

    def total(values, arr):
        backup = arr.copy()
        arr[...] = values
        try:
            x_r, xf1, xf2 = forward_full(params, x)
            return loss(x, x_r, x_f, xf1, xf2, unit_weights).total
        finally:
            arr[...] = backup

    for name, arr in param_blocks(params):
        numeric = finite_diff_grad(lambda v, a=arr: total(v, a), arr, h=1e-5)
        assert max_relative_error(grads[name], numeric) < 1e-4, name


def test_backward_unequal_weights_match_finite_differences(tiny_config):
    weights = LossWeights(alpha=0.7, beta=0.2, gamma=1.9)
    rng = np.random.default_rng(38)
    params = init_params(tiny_config, rng)
    x, x_f = random_window(tiny_config, rng)
    grads, _ = backward_full(params, x, x_f, weights)

    for name, arr in param_blocks(params):

        def total(values, arr=arr):
            backup = arr.copy()
            arr[...] = values
            try:
                x_r, xf1, xf2 = forward_full(params, x)
                return loss(x, x_r, x_f, xf1, xf2, weights).total
            finally:
                arr[...] = backup

        numeric = finite_diff_grad(total, arr, h=1e-5)
        assert max_relative_error(grads[name], numeric) < 1e-4, name


def test_batch_backward_agrees_with_serial_sum(tiny_model, unit_weights):
    rng = np.random.default_rng(39)
    xs = rng.normal(size=(6, 3, 8))
    xfs = rng.normal(size=(6, 3, 2))
    batch_grads, rec, p1, p2 = batch_backward(tiny_model, xs, xfs, unit_weights, reduce="sum")
    serial = {name: np.zeros_like(arr) for name, arr in param_blocks(tiny_model)}
    for k in range(6):
        g, (r, q1, q2) = backward_full(tiny_model, xs[k], xfs[k], unit_weights)
        for name in serial:
            serial[name] += g[name]
        assert abs(r - rec[k]) < 1e-12
        assert abs(q1 - p1[k]) < 1e-12
        assert abs(q2 - p2[k]) < 1e-12
    for name in serial:
        scale = max(1.0, float(np.max(np.abs(serial[name]))))
        assert np.max(np.abs(serial[name] - batch_grads[name])) < 1e-9 * scale, name


def test_batch_residuals_match_loss_components(tiny_model, unit_weights):
    rng = np.random.default_rng(40)
    x, x_f = random_window(tiny_model.config, rng)
    rec, p1, p2 = batch_residuals(tiny_model, x[None], x_f[None])
    x_r, xf1, xf2 = forward_full(tiny_model, x)
    breakdown = loss(x, x_r, x_f, xf1, xf2, unit_weights)
    assert rec[0] == pytest.approx(breakdown.rec, abs=1e-12)
    assert p1[0] == pytest.approx(breakdown.p1, abs=1e-12)
    assert p2[0] == pytest.approx(breakdown.p2, abs=1e-12)


def test_init_params_seeded_and_forget_bias():
    config = ModelConfig(m=4, w=6, h=3, d=8, mlp_hidden=(5, 4))
    a = init_params(config, np.random.default_rng(7))
    b = init_params(config, np.random.default_rng(7))
    assert params_bytes(a) == params_bytes(b)
    assert np.array_equal(a.encoder.b_gates[8:16], np.ones((8, 1)))
    assert np.array_equal(a.encoder.b_gates[:8], np.zeros((8, 1)))
    assert count_params(a) == sum(arr.size for _, arr in param_blocks(a))
