"""Mini-batch training with Adam, inverted dropout and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import InvalidConfig, NonFiniteLoss, ShapeMismatch, EmptyDataset
from .layers import build_network

log = logging.getLogger(__name__)

# architecture presets per market and model kind
PRESETS = {
    ("pjm", "mlp"): (128, 64, 32),
    ("caiso", "mlp"): (128, 64, 32),
    ("isone", "mlp"): (64, 32),
    ("pjm", "lstm"): (64, 128, 128, 64, 32),
    ("caiso", "lstm"): (64, 128, 128, 64, 32),
    ("isone", "lstm"): (32, 64, 64, 32),
}


@dataclass(frozen=True)
class NnHyperparams:
    hidden_units: tuple = (128, 64, 32)
    dropout_rate: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 2048
    epochs: int = 200
    seed: int = 0
    lookback: int = 24
    patience: int = 10
    val_fraction: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "hidden_units", tuple(int(h) for h in self.hidden_units))
        if not self.hidden_units or min(self.hidden_units) < 1:
            raise InvalidConfig("hidden_units must be a nonempty list of positive widths")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        for name in ("batch_size", "epochs", "lookback", "patience"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if not 0.0 <= self.val_fraction < 0.5:
            raise InvalidConfig("val_fraction must lie in [0, 0.5)")

    @classmethod
    def preset(cls, market, kind, **overrides):
        try:
            units = PRESETS[(market.lower(), kind)]
        except KeyError:
            raise InvalidConfig(f"no preset for market={market!r} kind={kind!r}") from None
        return cls(hidden_units=units, **overrides)

    def to_dict(self):
        d = asdict(self)
        d["hidden_units"] = list(self.hidden_units)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Windows:
    """Lazily materialised lookback windows over an hourly feature matrix.

    Sample ``s`` is the block ``X[rows[s]-L+1 : rows[s]+1]`` (rows before the
    start repeat the first row), with ``static[s]`` appended to every step.
    Only the batch being trained on is ever built.
    """

    def __init__(self, X, lookback, rows=None, static=None):
        self.X = np.asarray(X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ShapeMismatch("Windows needs a 2-D (hours, features) matrix")
        self.lookback = int(lookback)
        self.rows = np.arange(len(self.X)) if rows is None else np.asarray(rows, dtype=np.int64)
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= len(self.X)):
            raise ShapeMismatch("window rows out of range")
        self.static = None if static is None else np.asarray(static, dtype=np.float64)
        if self.static is not None and len(self.static) != len(self.rows):
            raise ShapeMismatch("static features must have one row per sample")
        self._offsets = np.arange(-self.lookback + 1, 1)

    def __len__(self):
        return len(self.rows)

    @property
    def n_features(self):
        return self.X.shape[1] + (0 if self.static is None else self.static.shape[1])

    def take(self, idx):
        idx = np.asarray(idx)
        t = np.maximum(self.rows[idx][:, None] + self._offsets, 0)
        block = self.X[t]
        if self.static is None:
            return block
        st = np.broadcast_to(self.static[idx][:, None, :], block.shape[:2] + (self.static.shape[1],))
        return np.concatenate([block, st], axis=2)


def _take(inputs, idx):
    return inputs.take(idx) if isinstance(inputs, Windows) else inputs[idx]


def _n_features(inputs):
    return inputs.n_features if isinstance(inputs, Windows) else inputs.shape[1]


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)   # index 0 is the untrained network
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False


def _full_loss(net, inputs, y, idx, chunk=8192):
    total = 0.0
    for s in range(0, len(idx), chunk):
        b = idx[s:s + chunk]
        out = net.predict_raw(_take(inputs, b))
        total += float(np.sum((out - y[b]) ** 2))
    return total / max(len(idx), 1)


def train(kind, inputs, targets, hp):
    """Fit a fresh network of ``kind`` to sigmoid-scaled ``targets``.

    ``inputs`` is a (samples, features) array for ``mlp`` or a
    :class:`Windows` for ``lstm``.  The trailing ``hp.val_fraction`` of
    samples is held out for early stopping; the parameters with the best
    validation loss are kept.  Returns ``(network, history)``.
    """
    y = np.asarray(targets, dtype=np.float64)
    n = len(y)
    if n == 0:
        raise EmptyDataset("no training samples")
    if len(inputs) != n:
        raise ShapeMismatch(f"{len(inputs)} inputs for {n} targets")
    if kind == "lstm" and not isinstance(inputs, Windows):
        raise ShapeMismatch("lstm training needs a Windows input")
    if kind == "mlp":
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2:
            raise ShapeMismatch("mlp inputs must be 2-D")
    if np.any(~((y > 0) & (y < 1))):
        raise ShapeMismatch("targets must be sigmoid-scaled into (0, 1)")

    init_rng = np.random.default_rng([hp.seed, 0])
    shuffle_rng = np.random.default_rng([hp.seed, 1])
    drop_rng = np.random.default_rng([hp.seed, 2])
    net = build_network(kind, _n_features(inputs), hp.hidden_units, hp.dropout_rate, init_rng)

    n_val = int(n * hp.val_fraction) if n >= 20 else 0
    tr_idx = np.arange(n - n_val)
    va_idx = np.arange(n - n_val, n)
    opt = Adam(net.params, hp.learning_rate)
    hist = TrainHistory()
    hist.train_loss.append(_full_loss(net, inputs, y, tr_idx))
    best_val = _full_loss(net, inputs, y, va_idx) if n_val else hist.train_loss[0]
    hist.val_loss.append(best_val)
    best = net.copy_params()
    stale = 0
    for epoch in range(1, hp.epochs + 1):
        perm = shuffle_rng.permutation(tr_idx)
        for s in range(0, len(perm), hp.batch_size):
            b = np.sort(perm[s:s + hp.batch_size])
            loss, grads = net.loss_and_grad(_take(inputs, b), y[b], rng=drop_rng if hp.dropout_rate > 0 else None)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch offset {s}")
            opt.step(net.params, grads)
        tl = _full_loss(net, inputs, y, tr_idx)
        vl = _full_loss(net, inputs, y, va_idx) if n_val else tl
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise NonFiniteLoss(f"non-finite loss after epoch {epoch}: train={tl} val={vl}")
        hist.train_loss.append(tl)
        hist.val_loss.append(vl)
        if vl < best_val:
            best_val, best, stale, hist.best_epoch = vl, net.copy_params(), 0, epoch
        else:
            stale += 1
            if stale >= hp.patience:
                hist.stopped_early = True
                break
    net.params = best
    log.debug("trained %s: %d epochs, best epoch %d, val %.3g", kind, len(hist.train_loss) - 1,
              hist.best_epoch, best_val)
    return net, hist
