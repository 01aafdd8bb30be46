"""Feed-forward and recurrent regressors with explicit backpropagation.

Both networks use tanh hidden units and a single sigmoid output, and are
trained on mean squared error against targets already squashed into (0, 1).
Parameters live in an ordered ``dict`` of float64 arrays so that optimisers
and the finite-difference checker can treat them uniformly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ShapeMismatch, InvalidConfig


def _uniform(rng, fan_in, shape):
    lim = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-lim, lim, shape)


def _dropout_mask(rng, shape, rate):
    if rate <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


class Network:
    kind = None

    def __init__(self, n_inputs, hidden_units, dropout=0.0):
        if not hidden_units:
            raise InvalidConfig("hidden_units must be nonempty")
        if not 0.0 <= dropout < 1.0:
            raise InvalidConfig("dropout rate must lie in [0, 1)")
        self.n_inputs = int(n_inputs)
        self.hidden_units = tuple(int(h) for h in hidden_units)
        self.dropout = float(dropout)
        self.params = {}

    # subclasses implement _forward(X, rng) -> (out, cache) and _backward(cache, dz) -> grads

    def predict_raw(self, X):
        return self._forward(X, None)[0]

    def loss(self, X, y):
        out = self.predict_raw(X)
        return float(np.mean((out - y) ** 2))

    def loss_and_grad(self, X, y, rng=None):
        """MSE and its parameter gradients; ``rng`` switches dropout on."""
        out, cache = self._forward(X, rng)
        diff = out - y
        loss = float(np.mean(diff ** 2))
        dz = (2.0 / diff.size) * diff * out * (1.0 - out)
        return loss, self._backward(cache, dz)

    def _fc_forward(self, h, first, rng, cache):
        for li in range(first, len(self.hidden_units)):
            h = np.tanh(h @ self.params[f"W{li}"] + self.params[f"b{li}"])
            mask = _dropout_mask(rng, h.shape, self.dropout)
            cache.append((h, mask))
            if mask is not None:
                h = h * mask
        z = h @ self.params["Wout"] + self.params["bout"]
        out = expit(z[:, 0])
        return h, out

    def _fc_backward(self, hin, first, cache, dz, grads):
        """Backprop through the dense stack; returns dL/d(input of the stack)."""
        hs = [hin] + [c[0] * c[1] if c[1] is not None else c[0] for c in cache]
        dz = dz[:, None]
        grads["Wout"] = hs[-1].T @ dz
        grads["bout"] = dz.sum(axis=0)
        dh = dz @ self.params["Wout"].T
        for k in range(len(cache) - 1, -1, -1):
            li = first + k
            h, mask = cache[k]
            if mask is not None:
                dh = dh * mask
            da = dh * (1.0 - h * h)
            grads[f"W{li}"] = hs[k].T @ da
            grads[f"b{li}"] = da.sum(axis=0)
            dh = da @ self.params[f"W{li}"].T
        return dh

    # flat parameter views for optimisers and gradient checks
    def flat(self):
        return np.concatenate([p.ravel() for p in self.params.values()])

    def set_flat(self, vec):
        i = 0
        for k, p in self.params.items():
            self.params[k] = vec[i:i + p.size].reshape(p.shape).copy()
            i += p.size

    @property
    def n_params(self):
        return sum(p.size for p in self.params.values())

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


class MLP(Network):
    kind = "mlp"

    def __init__(self, n_inputs, hidden_units, dropout=0.0, rng=None):
        super().__init__(n_inputs, hidden_units, dropout)
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = (self.n_inputs,) + self.hidden_units
        for li in range(len(self.hidden_units)):
            self.params[f"W{li}"] = _uniform(rng, sizes[li], (sizes[li], sizes[li + 1]))
            self.params[f"b{li}"] = np.zeros(sizes[li + 1])
        self.params["Wout"] = _uniform(rng, sizes[-1], (sizes[-1], 1))
        self.params["bout"] = np.zeros(1)

    def _forward(self, X, rng):
        X = np.asarray(X, dtype=self.params["Wout"].dtype)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ShapeMismatch(f"MLP expects (n, {self.n_inputs}) inputs, got {X.shape}")
        cache = []
        _, out = self._fc_forward(X, 0, rng, cache)
        return out, (X, cache)

    def _backward(self, cache, dz):
        X, fc = cache
        grads = {}
        self._fc_backward(X, 0, fc, dz, grads)
        return {k: grads[k] for k in self.params}


def lstm_forward(X, Wx, Wh, b):
    """Run one LSTM layer over ``X`` of shape (batch, steps, inputs).

    Gate blocks in the packed weights are ordered input, forget, output,
    candidate.
    """
    B, L, _ = X.shape
    H = Wh.shape[0]
    xw = X @ Wx + b
    dt = xw.dtype
    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    hs = np.empty((B, L, H), dtype=dt)
    cs = np.empty((B, L, H), dtype=dt)
    gates = np.empty((B, L, 4 * H), dtype=dt)
    tcs = np.empty((B, L, H), dtype=dt)
    for t in range(L):
        a = xw[:, t] + h @ Wh
        i = expit(a[:, :H])
        f = expit(a[:, H:2 * H])
        o = expit(a[:, 2 * H:3 * H])
        g = np.tanh(a[:, 3 * H:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t], cs[:, t], tcs[:, t] = h, c, tc
        gates[:, t] = np.concatenate([i, f, o, g], axis=1)
    return hs, (X, hs, cs, gates, tcs)


def lstm_backward(dhs, cache, Wx, Wh):
    X, hs, cs, gates, tcs = cache
    B, L, H = hs.shape
    dxw = np.empty((B, L, 4 * H))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        i, f, o, g = (gates[:, t, k * H:(k + 1) * H] for k in range(4))
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
        dh = dhs[:, t] + dh_next
        tc = tcs[:, t]
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da = np.concatenate([dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                             dh * tc * o * (1.0 - o), dc * i * (1.0 - g * g)], axis=1)
        dWh += h_prev.T @ da
        dh_next = da @ Wh.T
        dc_next = dc * f
        dxw[:, t] = da
    D = X.shape[2]
    dWx = X.reshape(-1, D).T @ dxw.reshape(-1, 4 * H)
    db = dxw.sum(axis=(0, 1))
    dX = dxw @ Wx.T
    return dX, dWx, dWh, db


class LSTM(Network):
    """Two stacked LSTM layers followed by dense tanh layers.

    ``hidden_units[0]`` and ``hidden_units[1]`` are the recurrent widths; the
    first layer feeds its whole sequence to the second, which hands only its
    last hidden state to the dense stack built from the remaining widths.
    """

    kind = "lstm"

    def __init__(self, n_inputs, hidden_units, dropout=0.0, rng=None):
        super().__init__(n_inputs, hidden_units, dropout)
        if len(self.hidden_units) < 2:
            raise InvalidConfig("LSTM needs at least two hidden widths (two recurrent layers)")
        rng = rng if rng is not None else np.random.default_rng(0)
        H1, H2 = self.hidden_units[:2]
        for li, (D, H) in enumerate(((self.n_inputs, H1), (H1, H2))):
            self.params[f"Wx{li}"] = _uniform(rng, D + H, (D, 4 * H))
            self.params[f"Wh{li}"] = _uniform(rng, D + H, (H, 4 * H))
            self.params[f"bl{li}"] = np.zeros(4 * H)
        sizes = self.hidden_units[1:]
        for k in range(1, len(sizes)):
            li = k + 1
            self.params[f"W{li}"] = _uniform(rng, sizes[k - 1], (sizes[k - 1], sizes[k]))
            self.params[f"b{li}"] = np.zeros(sizes[k])
        self.params["Wout"] = _uniform(rng, sizes[-1], (sizes[-1], 1))
        self.params["bout"] = np.zeros(1)

    def _forward(self, X, rng):
        X = np.asarray(X, dtype=self.params["Wout"].dtype)
        if X.ndim != 3 or X.shape[2] != self.n_inputs:
            raise ShapeMismatch(f"LSTM expects (n, steps, {self.n_inputs}) inputs, got {X.shape}")
        p = self.params
        hs1, c1 = lstm_forward(X, p["Wx0"], p["Wh0"], p["bl0"])
        hs2, c2 = lstm_forward(hs1, p["Wx1"], p["Wh1"], p["bl1"])
        last = hs2[:, -1]
        mask = _dropout_mask(rng, last.shape, self.dropout)
        h = last * mask if mask is not None else last
        fc = []
        _, out = self._fc_forward(h, 2, rng, fc)
        return out, (c1, c2, mask, h, fc)

    def _backward(self, cache, dz):
        c1, c2, mask, h, fc = cache
        p = self.params
        grads = {}
        dlast = self._fc_backward(h, 2, fc, dz, grads)
        if mask is not None:
            dlast = dlast * mask
        dhs2 = np.zeros_like(c2[1])
        dhs2[:, -1] = dlast
        dhs1, grads["Wx1"], grads["Wh1"], grads["bl1"] = lstm_backward(dhs2, c2, p["Wx1"], p["Wh1"])
        _, grads["Wx0"], grads["Wh0"], grads["bl0"] = lstm_backward(dhs1, c1, p["Wx0"], p["Wh0"])
        return {k: grads[k] for k in self.params}


NETWORKS = {"mlp": MLP, "lstm": LSTM}


def build_network(kind, n_inputs, hidden_units, dropout=0.0, rng=None):
    try:
        cls = NETWORKS[kind]
    except KeyError:
        raise InvalidConfig(f"unknown model kind {kind!r}; expected one of {sorted(NETWORKS)}") from None
    return cls(n_inputs, hidden_units, dropout, rng)


def gradient_check(net, X, y, epsilon=1e-5, n_params=200, seed=0):
    """Largest relative error between backprop and central differences.

    Dropout is off for both.  ``n_params`` parameters are drawn at random
    (all of them if the network is smaller).  The finite differences are
    evaluated in extended precision (``np.longdouble``) so that their
    rounding error stays far below the tolerance even for gradients of
    order 1e-10.  Relative error is ``|a - n| / max(|a|, |n|)`` with the
    denominator floored at 1e-15.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise InvalidConfig("epsilon must lie in [1e-6, 1e-4]")
    _, grads = net.loss_and_grad(X, y, rng=None)
    analytic = np.concatenate([grads[k].ravel() for k in net.params])
    saved = net.copy_params()
    rng = np.random.default_rng(seed)
    n_total = analytic.size
    idx = np.arange(n_total) if n_total <= n_params else rng.choice(n_total, n_params, replace=False)
    Xl = np.asarray(X, dtype=np.longdouble)
    yl = np.asarray(y, dtype=np.longdouble)
    net.params = {k: v.astype(np.longdouble) for k, v in saved.items()}
    theta = net.flat()
    eps = np.longdouble(epsilon)
    worst = 0.0
    try:
        for j in idx:
            orig = theta[j]
            theta[j] = orig + eps
            net.set_flat(theta)
            up = _loss_ext(net, Xl, yl)
            theta[j] = orig - eps
            net.set_flat(theta)
            down = _loss_ext(net, Xl, yl)
            theta[j] = orig
            numeric = float((up - down) / (2 * eps))
            a = float(analytic[j])
            denom = max(abs(a), abs(numeric), 1e-15)
            worst = max(worst, abs(a - numeric) / denom)
    finally:
        net.params = saved
    return worst


def _loss_ext(net, X, y):
    out = net._forward(X, None)[0]
    return np.mean((out - y) ** 2)
