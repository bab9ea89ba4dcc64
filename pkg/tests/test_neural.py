"""Unit tests for the encoder/decoder networks and the trainer."""

import numpy as np
import pytest

from dermalight import neural, space
from dermalight.errors import DomainError
from dermalight.neural import (LossBreakdown, Mlp, TrainConfig, adam_init,
                               adam_step, backprop, decoder_dims,
                               decoder_forward, encoder_dims, encoder_forward,
                               init_mlp, loss, train)


def _zero_mlp(dims):
    return Mlp([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
               [np.zeros(b) for b in dims[1:]])


def _tiny_nets(rng):
    return (init_mlp([3, 8, 8, 5], rng), init_mlp([5, 8, 8, 3], rng))


def test_architecture_dims():
    assert encoder_dims() == [3, 70, 70, 5]
    assert decoder_dims() == [5, 70, 70, 3]
    assert encoder_dims(50) == [3, 50, 50, 5]


def test_train_config_validation():
    cfg = TrainConfig()
    assert cfg.learning_rate == 1e-4
    assert cfg.batch_size == 4096
    assert cfg.epochs == 400
    assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.999, 1e-8)
    with pytest.raises(DomainError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(DomainError):
        TrainConfig(epochs=-1)


def test_zero_weights_give_logistic_midpoint():
    enc = _zero_mlp(encoder_dims())
    dec = _zero_mlp(decoder_dims())
    np.testing.assert_allclose(encoder_forward(enc, np.array([0.2, 0.3, 0.4])),
                               0.5)
    np.testing.assert_allclose(decoder_forward(dec, np.full(5, 0.7)), 0.5)


def test_outputs_stay_in_the_open_unit_interval(rng):
    enc, dec = _tiny_nets(rng)
    rgb = rng.random((100, 3)) * 10.0 - 5.0  # even wild inputs stay bounded
    u = encoder_forward(enc, rgb)
    assert np.all(u > 0.0) and np.all(u < 1.0)
    out = decoder_forward(dec, rng.random((100, 5)))
    assert np.all(out > 0.0) and np.all(out < 1.0)


def test_forward_is_deterministic_and_batched(rng):
    enc, _ = _tiny_nets(rng)
    rgb = rng.random((4, 3))
    batch = encoder_forward(enc, rgb)
    singles = np.array([encoder_forward(enc, row) for row in rgb])
    np.testing.assert_allclose(batch, singles, rtol=1e-15)


def test_non_finite_weights_rejected(rng):
    enc, _ = _tiny_nets(rng)
    enc.weights[1][0, 0] = np.nan
    with pytest.raises(DomainError):
        encoder_forward(enc, np.array([0.1, 0.2, 0.3]))


def test_decoder_lipschitz_bound(rng):
    _, dec = _tiny_nets(rng)
    # oracle: sigmoid and rectifier are 1- and 1/4-Lipschitz, so the product
    # of spectral norms bounds the network's Lipschitz constant.
    bound = 0.25 * np.prod([np.linalg.norm(w, 2) for w in dec.weights])
    u = rng.random((50, 5))
    delta = 1e-3 * rng.standard_normal((50, 5))
    diff = np.linalg.norm(decoder_forward(dec, u + delta)
                          - decoder_forward(dec, u), axis=1)
    assert np.all(diff <= bound * np.linalg.norm(delta, axis=1) + 1e-12)


def test_loss_perfect_predictions(rng):
    # A decoder fixture that cannot be perfect (sigmoid never hits the
    # target exactly) is avoided by checking the identity on constructed
    # outputs instead: zero-loss via matching targets to actual outputs.
    enc, dec = _tiny_nets(rng)
    rgb = rng.random((6, 3))
    u = encoder_forward(enc, rgb)
    # Records whose u is exactly the encoder's answer: L_param vanishes.
    assert loss(u, rgb, enc, dec).param == pytest.approx(0.0, abs=1e-12)
    # Records whose albedo is exactly the decoder's answer: L_albedo and
    # the cycle term vanish when the encoder reproduces u from it.
    rgb_dec = decoder_forward(dec, u)
    assert loss(u, rgb_dec, enc, dec).albedo == pytest.approx(0.0, abs=1e-12)


def test_loss_arithmetic_fixtures():
    # Encoder off by exactly 0.1 per coordinate -> L_param = 0.01.
    enc = _zero_mlp(encoder_dims())  # outputs 0.5 everywhere
    dec = _zero_mlp(decoder_dims())
    u = np.full((1, 5), 0.4)
    rgb = np.full((1, 3), 0.3)  # decoder outputs 0.5 -> off by 0.2
    breakdown = loss(u, rgb, enc, dec)
    assert breakdown.param == pytest.approx(0.01, abs=1e-12)
    assert breakdown.albedo == pytest.approx(0.2, abs=1e-12)
    assert breakdown.cycle == pytest.approx(0.2, abs=1e-12)


def test_loss_decomposition_identity(rng):
    enc, dec = _tiny_nets(rng)
    u = rng.random((10, 5))
    rgb = rng.random((10, 3))
    breakdown = loss(u, rgb, enc, dec)
    assert breakdown.total == breakdown.param + breakdown.albedo + breakdown.cycle
    assert breakdown.param >= 0 and breakdown.albedo >= 0 and breakdown.cycle >= 0


def test_backprop_matches_finite_differences(rng):
    # oracle: central differences at h = 1e-5 on every parameter of the
    # small pair; covers all three loss terms at once.
    enc, dec = _tiny_nets(rng)
    u = rng.random((32, 5))
    rgb = rng.random((32, 3))
    _, (enc_dw, enc_db), (dec_dw, dec_db) = backprop(u, rgb, enc, dec)
    h = 1e-5
    for mlp, grads_w, grads_b in ((enc, enc_dw, enc_db), (dec, dec_dw, dec_db)):
        for layer in range(3):
            for arr, grad in ((mlp.weights[layer], grads_w[layer]),
                              (mlp.biases[layer], grads_b[layer])):
                flat = arr.reshape(-1)
                gflat = grad.reshape(-1)
                for k in range(flat.size):
                    orig = flat[k]
                    flat[k] = orig + h
                    up = loss(u, rgb, enc, dec).total
                    flat[k] = orig - h
                    down = loss(u, rgb, enc, dec).total
                    flat[k] = orig
                    numeric = (up - down) / (2 * h)
                    denom = max(abs(numeric), abs(gflat[k]), 1e-8)
                    assert abs(numeric - gflat[k]) / denom < 1e-4


def test_backprop_gradients_scale_with_batch_fraction(rng):
    # Mean-based losses: grad of a half batch is not the half-sum, but the
    # full-batch gradient equals the average of the sub-batch gradients.
    enc, dec = _tiny_nets(rng)
    u = rng.random((8, 5))
    rgb = rng.random((8, 3))
    _, (gw_full, _), _ = backprop(u, rgb, enc, dec)
    _, (gw_a, _), _ = backprop(u[:4], rgb[:4], enc, dec)
    _, (gw_b, _), _ = backprop(u[4:], rgb[4:], enc, dec)
    for full, a, b in zip(gw_full, gw_a, gw_b):
        np.testing.assert_allclose(full, 0.5 * (a + b), rtol=1e-10, atol=1e-14)


def test_adam_first_step_oracle():
    # oracle: with m = (1-b1)g, v = (1-b2)g^2 and bias correction, the first
    # update is -lr * g / (|g| + eps).
    mlp = Mlp([np.array([[1.0]])], [np.array([0.5])])
    cfg = TrainConfig(learning_rate=1e-4)
    state = adam_init(mlp)
    g = 0.37
    adam_step(mlp, ([np.array([[g]])], [np.array([0.0])]), state, cfg)
    expected = 1.0 - 1e-4 * g / (abs(g) + 1e-8)
    assert mlp.weights[0][0, 0] == pytest.approx(expected, rel=1e-12)
    assert mlp.biases[0][0] == 0.5  # zero gradient leaves the bias alone
    assert state.step == 1


def test_adam_zero_gradient_is_identity():
    mlp = Mlp([np.full((2, 2), 3.0)], [np.zeros(2)])
    state = adam_init(mlp)
    adam_step(mlp, ([np.zeros((2, 2))], [np.zeros(2)]), state, TrainConfig())
    np.testing.assert_array_equal(mlp.weights[0], 3.0)


def _toy_dataset(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.random((n, 5))
    albedo = np.clip(np.column_stack([
        0.5 * u[:, 0] + 0.1, 0.4 * u[:, 1] + 0.1, 0.3 * u[:, 2] + 0.1]),
        0.0, 1.0)
    split = np.zeros(n, dtype=np.uint8)
    split[int(0.8 * n):] = space.VAL_SPLIT
    return space.Dataset(u=u, p=space.warp_array(u), albedo=albedo,
                         split=split)


def test_train_smoke_and_history():
    result = train(_toy_dataset(), TrainConfig(epochs=2, batch_size=256))
    assert len(result.history) == 2
    for entry in result.history:
        assert isinstance(entry["train"], LossBreakdown)
        assert isinstance(entry["val"], LossBreakdown)
    assert result.best_encoder.dims == [3, 70, 70, 5]
    assert result.config.epochs == 2


def test_training_reduces_the_loss():
    result = train(_toy_dataset(4000),
                   TrainConfig(epochs=20, batch_size=512, learning_rate=1e-3))
    assert result.history[19]["train"].total < result.history[0]["train"].total


def test_training_is_seeded_deterministic():
    cfg = TrainConfig(epochs=2, batch_size=256, seed=7)
    a = train(_toy_dataset(), cfg)
    b = train(_toy_dataset(), cfg)
    for wa, wb in zip(a.encoder.weights, b.encoder.weights):
        np.testing.assert_array_equal(wa, wb)
    for wa, wb in zip(a.decoder.weights, b.decoder.weights):
        np.testing.assert_array_equal(wa, wb)


def test_train_requires_both_splits():
    ds = _toy_dataset()
    ds.split[:] = space.TRAIN_SPLIT
    with pytest.raises(DomainError):
        train(ds, TrainConfig(epochs=1))


def test_history_csv_export(tmp_path):
    result = train(_toy_dataset(), TrainConfig(epochs=3, batch_size=256))
    path = tmp_path / "history.csv"
    neural.history_to_csv(path, result.history)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (3, 9)
    assert rows[0, 0] == 0
    # total column equals the sum of the three components
    np.testing.assert_allclose(rows[:, 4], rows[:, 1:4].sum(axis=1), rtol=1e-9)
