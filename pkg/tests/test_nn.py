import numpy as np
import pytest

from vbid.errors import FeatureMismatch, InvalidConfig, NonFiniteLoss, ShapeMismatch
from vbid.market import FeatureFrame, SyntheticConfig, generate_synthetic_market
from vbid.nn.forecast import (
    QuantityModel,
    fit_quantity_model,
    fit_spread_model,
    load_model,
    predict_net_virtual_quantity,
    predict_spread,
)
from vbid.nn.layers import LSTM, MLP, build_network, gradient_check
from vbid.nn.training import NnHyperparams, Windows, train
from vbid.scaling import FeatureStats, sigmoid_scale


def test_table_preset():
    assert NnHyperparams.preset("pjm", "mlp").hidden_units == (128, 64, 32)
    with pytest.raises(InvalidConfig):
        NnHyperparams(dropout_rate=1.0)
    with pytest.raises(InvalidConfig):
        NnHyperparams(hidden_units=())


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_mlp(seed):
    rng = np.random.default_rng(seed)
    net = MLP(6, (16, 8), rng=rng)
    X = rng.normal(size=(32, 6))
    y = rng.uniform(0.05, 0.95, 32)
    assert gradient_check(net, X, y, n_params=200, seed=seed) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_gradient_check_lstm(seed):
    rng = np.random.default_rng(seed)
    net = LSTM(3, (6, 5, 4), rng=rng)
    X = rng.normal(size=(8, 4, 3))
    y = rng.uniform(0.05, 0.95, 8)
    assert net.n_params >= 200
    assert gradient_check(net, X, y, n_params=200, seed=seed) < 1e-4


def test_gradient_check_single_unit():
    rng = np.random.default_rng(3)
    net = MLP(2, (1,), rng=rng)
    assert gradient_check(net, rng.normal(size=(1, 2)), np.array([0.3])) < 1e-6


def test_zero_network_bias_gradient():
    net = MLP(3, (4,))
    net.set_flat(np.zeros(net.n_params))
    X = np.zeros((1, 3))
    _, grads = net.loss_and_grad(X, np.array([0.2]))
    # output 0.5: d/db (0.5 - 0.2)^2 = 2 * 0.3 * 0.25
    assert grads["bout"][0] == pytest.approx(0.15, rel=1e-14)
    assert gradient_check(net, X, np.array([0.2])) < 1e-6


def test_gradient_check_epsilon_bounds():
    with pytest.raises(InvalidConfig):
        gradient_check(MLP(2, (2,)), np.zeros((1, 2)), np.array([0.5]), epsilon=1e-3)


def test_outputs_in_unit_interval():
    rng = np.random.default_rng(0)
    for net, X in [(MLP(4, (8, 4), rng=rng), rng.normal(0, 50, (100, 4))),
                   (LSTM(4, (4, 4), rng=rng), rng.normal(0, 50, (20, 5, 4)))]:
        out = net.predict_raw(X)
        assert np.all((out > 0) & (out < 1))
        np.testing.assert_array_equal(out, net.predict_raw(X))


def test_lstm_only_looks_back():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 3))
    w = Windows(X, 6)
    net = LSTM(3, (4, 4), rng=rng)
    base = net.predict_raw(w.take(np.arange(50)))
    X2 = X.copy()
    X2[30:] += 10.0
    moved = net.predict_raw(Windows(X2, 6).take(np.arange(50)))
    np.testing.assert_array_equal(base[:30], moved[:30])
    assert np.all(base[30:36] != moved[30:36])


def _toy(seed=0, n=500):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = sigmoid_scale(X @ np.array([10.0, -5.0, 3.0]) + 2.0, 10.0)
    return X, y


def test_toy_training_converges():
    X, y = _toy()
    hp = NnHyperparams(hidden_units=(16,), dropout_rate=0.0, learning_rate=1e-2, batch_size=32, epochs=200,
                       patience=200, val_fraction=0.0)
    _, hist = train("mlp", X, y, hp)
    assert hist.train_loss[-1] < 0.01 * hist.train_loss[0]
    assert len(hist.train_loss) <= 201


def test_training_deterministic():
    X, y = _toy(1, 200)
    hp = NnHyperparams(hidden_units=(8, 4), dropout_rate=0.2, batch_size=16, epochs=5)
    a, _ = train("mlp", X, y, hp)
    b, _ = train("mlp", X, y, hp)
    np.testing.assert_array_equal(a.flat(), b.flat())


def test_train_rejects_bad_targets():
    X, y = _toy(2, 50)
    hp = NnHyperparams(hidden_units=(4,), epochs=1)
    with pytest.raises(ShapeMismatch):
        train("mlp", X, y * 10, hp)
    with pytest.raises(ShapeMismatch):
        train("mlp", X[:10], y, hp)
    with pytest.raises(NonFiniteLoss):
        bad = X.copy()
        bad[0, 0] = np.nan
        train("mlp", bad, y, hp)


def _frame(n, names, values):
    hours = np.datetime64("2024-01-01T00") + np.arange(n) * np.timedelta64(1, "h")
    return FeatureFrame(hours, names, values)


def test_raw_midpoint_maps_to_zero():
    ff = _frame(4, ("a",), np.arange(4.0)[:, None])
    net = MLP(1, (2,))
    net.set_flat(np.zeros(net.n_params))
    stats = FeatureStats(("a",), np.zeros(1), np.ones(1), np.ones(1, bool))
    model = QuantityModel("mlp", NnHyperparams(hidden_units=(2,)), ("a",), stats, 1000.0, {"market": net})
    out = predict_net_virtual_quantity(model, ff)
    np.testing.assert_array_equal(out.values, 0.0)


@pytest.fixture(scope="module")
def small_market():
    return generate_synthetic_market(SyntheticConfig(n_days=120), seed=4)


FAST = NnHyperparams(hidden_units=(32, 16), dropout_rate=0.0, learning_rate=3e-3, batch_size=256, epochs=40,
                     patience=5)


def test_spread_sign_accuracy(small_market):
    ds = small_market
    cut = len(ds.panel.hours) - 30 * 24
    train_ds, test_ds = ds.select(np.arange(cut)), ds.select(np.arange(cut, len(ds.panel.hours)))
    model = fit_spread_model(train_ds.panel, train_ds.features, FAST)
    fc = predict_spread(model, test_ds.features)
    actual = test_ds.panel.spread
    assert np.mean(np.sign(fc.values) == np.sign(actual)) > 0.6


def test_quantity_r2():
    rng = np.random.default_rng(5)
    n = 3000
    load = rng.normal(1000, 150, n)
    y = 0.2 * (load - 1000) + 5 + rng.normal(0, 5, n)
    ff = _frame(n, ("load_forecast",), load[:, None])

    class Vb:
        hours = ff.hours
        net = y

    hp = NnHyperparams(hidden_units=(8,), dropout_rate=0.0, learning_rate=1e-2, batch_size=64, epochs=60)
    # train on the first 2/3 and score the rest
    tr = np.arange(2000)
    te = np.arange(2000, n)
    Vb.hours, Vb.net = ff.hours[tr], y[tr]
    model = fit_quantity_model(Vb, ff.select(tr), hp, theta_quantity=100.0)
    pred = predict_net_virtual_quantity(model, ff.select(te)).values
    r2 = 1 - np.sum((pred - y[te]) ** 2) / np.sum((y[te] - y[te].mean()) ** 2)
    assert r2 > 0.8


def test_constant_target():
    n = 400
    rng = np.random.default_rng(6)
    ff = _frame(n, ("x",), rng.normal(size=(n, 1)))

    class Vb:
        hours = ff.hours
        net = np.full(n, 40.0)

    hp = NnHyperparams(hidden_units=(4,), dropout_rate=0.0, learning_rate=3e-2, batch_size=512, epochs=3000,
                       patience=3000)
    pred = predict_net_virtual_quantity(fit_quantity_model(Vb, ff, hp, theta_quantity=100.0), ff).values
    assert np.all(np.abs(pred - 40.0) <= 0.4)


def test_lstm_beats_mlp_on_ramps():
    rng = np.random.default_rng(7)
    n = 3000
    x = np.cumsum(rng.normal(size=n))
    x = (x - x.mean()) / x.std()
    target = np.zeros(n)
    target[3:] = x[3:] - x[:-3]
    y = sigmoid_scale(8.0 * target, 10.0)
    hp = NnHyperparams(hidden_units=(8, 8), dropout_rate=0.0, learning_rate=1e-2, batch_size=64, epochs=30,
                       lookback=4, patience=30)
    F = x[:, None]
    tr, te = np.arange(2400), np.arange(2400, n)
    mlp, _ = train("mlp", F[tr], y[tr], hp)
    lstm, _ = train("lstm", Windows(F, 4, tr), y[tr], hp)
    mse_mlp = np.mean((mlp.predict_raw(F[te]) - y[te]) ** 2)
    mse_lstm = np.mean((lstm.predict_raw(Windows(F, 4, te).take(np.arange(len(te)))) - y[te]) ** 2)
    assert mse_lstm <= mse_mlp


def test_bundle_round_trip_and_feature_check(small_market, tmp_path):
    ds = small_market.select(np.arange(24 * 20))
    hp = NnHyperparams(hidden_units=(4, 4), dropout_rate=0.2, batch_size=128, epochs=2, lookback=6)
    for kind in ("mlp", "lstm"):
        model = fit_spread_model(ds.panel, ds.features, hp, kind=kind)
        path = tmp_path / f"{kind}.npz"
        model.save(path)
        back = load_model(path)
        np.testing.assert_array_equal(predict_spread(back, ds.features).values,
                                      predict_spread(model, ds.features).values)
    bad = FeatureFrame(ds.features.hours, ds.features.names[::-1], ds.features.values)
    with pytest.raises(FeatureMismatch):
        predict_spread(back, bad)
