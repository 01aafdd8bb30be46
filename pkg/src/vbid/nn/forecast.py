"""Spread and net-virtual-quantity forecasters built on the raw networks.

A spread model is shared across nodes by default: each sample is one
(hour, node) pair and the node enters as a one-hot block appended to the
hourly features.  ``mode="per_node"`` trains one network per node instead.
Targets are squashed with the per-node sigmoid scale before training and
unsquashed on prediction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import FeatureMismatch, InvalidConfig, ParseError, ShapeMismatch
from ..market import FeatureFrame, SpreadPanel, VirtualQuantities, format_hour
from ..scaling import (
    THETA_QUANTITY_FACTOR,
    FeatureStats,
    ScalingConfig,
    sigmoid_scale,
    sigmoid_unscale,
    theta_from_spreads,
    zscore_fit_apply,
)
from .layers import build_network
from .training import NnHyperparams, Windows, train

BUNDLE_FORMAT = "vbid-model/1"
DEFAULT_THETA = 20.0
_RAW_EPS = 2.0 ** -53


@dataclass(frozen=True, eq=False)
class ForecastSeries:
    """Unscaled forecasts; ``values`` is (hours,) or (nodes, hours)."""

    hours: np.ndarray
    values: np.ndarray
    nodes: tuple | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        want = (len(self.hours),) if self.nodes is None else (len(self.nodes), len(self.hours))
        if v.shape != want:
            raise ShapeMismatch(f"forecast values must be {want}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("forecast contains non-finite values")
        object.__setattr__(self, "values", v)

    def records(self):
        if self.nodes is None:
            for h, v in zip(self.hours, self.values):
                yield format_hour(h), float(v)
        else:
            for t, h in enumerate(self.hours):
                for i, n in enumerate(self.nodes):
                    yield format_hour(h), n, float(self.values[i, t])


def _unscale_raw(raw, theta):
    # a saturated sigmoid rounds to exactly 0 or 1; pull it back inside (0, 1)
    return sigmoid_unscale(np.clip(raw, _RAW_EPS, 1.0 - _RAW_EPS), theta)


def _hour_positions(frame, hours):
    if hours is None:
        return np.arange(len(frame.hours))
    pos = np.searchsorted(frame.hours, hours)
    hours = np.asarray(hours, dtype="datetime64[s]")
    if np.any(pos >= len(frame.hours)) or not np.array_equal(frame.hours[np.minimum(pos, len(frame.hours) - 1)], hours):
        raise ShapeMismatch("requested hours are not all present in the feature frame")
    return pos


class _Model:
    """Shared plumbing: feature checks, input assembly, bundle I/O."""

    role = None

    def __init__(self, kind, hp, feature_names, feature_stats, networks):
        self.kind = kind
        self.hp = hp
        self.feature_names = tuple(feature_names)
        self.feature_stats = feature_stats
        self.networks = networks

    def _features(self, frame):
        if frame.names != self.feature_names:
            missing = set(self.feature_names) - set(frame.names)
            extra = set(frame.names) - set(self.feature_names)
            raise FeatureMismatch(f"feature set differs from training (missing {sorted(missing)}, extra {sorted(extra)})")
        return self.feature_stats.transform(frame.values)

    def _inputs(self, F, rows, static=None):
        if self.kind == "lstm":
            return Windows(F, self.hp.lookback, rows, static)
        X = F[rows]
        return X if static is None else np.concatenate([X, static], axis=1)

    def _meta(self):
        return {"format": BUNDLE_FORMAT, "role": self.role, "kind": self.kind, "hp": self.hp.to_dict(),
                "feature_names": list(self.feature_names), "feature_stats": self.feature_stats.to_dict(),
                "networks": {k: {"n_inputs": net.n_inputs, "order": list(net.params)} for k, net in self.networks.items()}}

    def save(self, path):
        arrays = {"meta": np.array(json.dumps(self._meta(), sort_keys=True))}
        for key, net in self.networks.items():
            for name, arr in net.params.items():
                arrays[f"{key}/{name}"] = arr
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        return path


def _load_networks(meta, data, hp):
    nets = {}
    for key, spec in meta["networks"].items():
        net = build_network(meta["kind"], spec["n_inputs"], hp.hidden_units, hp.dropout_rate)
        params = {}
        for name in spec["order"]:
            arr = data[f"{key}/{name}"]
            if arr.shape != net.params[name].shape:
                raise ParseError(f"parameter {key}/{name} has shape {arr.shape}, expected {net.params[name].shape}")
            params[name] = arr
        net.params = params
        nets[key] = net
    return nets


class SpreadModel(_Model):
    role = "spread"

    def __init__(self, kind, hp, feature_names, scaling, nodes, networks, mode="shared"):
        super().__init__(kind, hp, feature_names, scaling.feature_stats, networks)
        self.scaling = scaling
        self.nodes = tuple(nodes)
        self.mode = mode

    def _meta(self):
        meta = super()._meta()
        meta.update(scaling=self.scaling.to_dict(), nodes=list(self.nodes), mode=self.mode)
        return meta

    def raw(self, frame, hours=None):
        """Raw network outputs in (0, 1), shape (nodes, hours)."""
        F = self._features(frame)
        rows = _hour_positions(frame, hours)
        N, T = len(self.nodes), len(rows)
        if self.mode == "shared":
            static = np.tile(np.eye(N), (T, 1))
            out = _predict(self.networks["shared"], self._inputs(F, np.repeat(rows, N), static))
            return out.reshape(T, N).T
        return np.stack([_predict(self.networks[n], self._inputs(F, rows)) for n in self.nodes])

    def theta(self):
        return np.array([self.scaling.theta_spread[n] for n in self.nodes])


class QuantityModel(_Model):
    role = "quantity"

    def __init__(self, kind, hp, feature_names, feature_stats, theta_quantity, networks):
        super().__init__(kind, hp, feature_names, feature_stats, networks)
        if not theta_quantity > 0:
            raise InvalidConfig("theta_quantity must be > 0")
        self.theta_quantity = float(theta_quantity)

    def _meta(self):
        meta = super()._meta()
        meta["theta_quantity"] = self.theta_quantity
        return meta

    def raw(self, frame, hours=None):
        F = self._features(frame)
        rows = _hour_positions(frame, hours)
        return _predict(self.networks["market"], self._inputs(F, rows))


def _predict(net, inputs, chunk=8192):
    n = len(inputs)
    out = np.empty(n)
    for s in range(0, n, chunk):
        idx = np.arange(s, min(s + chunk, n))
        out[idx] = net.predict_raw(inputs.take(idx) if isinstance(inputs, Windows) else inputs[idx])
    return out


def fit_spread_model(panel: SpreadPanel, features: FeatureFrame, hp: NnHyperparams, kind="mlp",
                     theta=None, mode="shared", theta_quantity=None):
    """Train a spread forecaster on every hour of ``panel``.

    ``theta`` maps node -> sigmoid scale; nodes not in the map get the
    clamped standard deviation of their training spreads.
    """
    if not np.array_equal(panel.hours, features.hours):
        raise ShapeMismatch("panel and features must cover the same hours")
    if mode not in ("shared", "per_node"):
        raise InvalidConfig(f"unknown spread model mode {mode!r}")
    fitted = theta_from_spreads(panel.spread)
    theta_map = {n: float((theta or {}).get(n, fitted[i])) for i, n in enumerate(panel.nodes)}
    if theta_quantity is None:
        theta_quantity = THETA_QUANTITY_FACTOR * max(theta_map.values())
    stats, F = zscore_fit_apply(features.values, features.names)
    scaling = ScalingConfig(theta_map, theta_quantity, stats)
    th = np.array([theta_map[n] for n in panel.nodes])
    Y = sigmoid_scale(panel.spread, th[:, None])          # (nodes, hours)
    N, T = Y.shape
    model = SpreadModel(kind, hp, features.names, scaling, panel.nodes, {}, mode)
    rows = np.arange(T)
    if mode == "shared":
        inputs = model._inputs(F, np.repeat(rows, N), np.tile(np.eye(N), (T, 1)))
        model.networks["shared"], model.history = train(kind, inputs, Y.T.ravel(), hp)
    else:
        model.history = {}
        for i, n in enumerate(panel.nodes):
            model.networks[n], model.history[n] = train(kind, model._inputs(F, rows), Y[i], hp)
    return model


def fit_quantity_model(vbids: VirtualQuantities, features: FeatureFrame, hp: NnHyperparams, kind="mlp",
                       theta_quantity=None):
    """Train the market-wide net virtual quantity forecaster.

    ``theta_quantity`` defaults to fifty times the default spread scale.
    """
    if not np.array_equal(vbids.hours, features.hours):
        raise ShapeMismatch("vbids and features must cover the same hours")
    if theta_quantity is None:
        theta_quantity = THETA_QUANTITY_FACTOR * DEFAULT_THETA
    stats, F = zscore_fit_apply(features.values, features.names)
    model = QuantityModel(kind, hp, features.names, stats, theta_quantity, {})
    y = sigmoid_scale(vbids.net, model.theta_quantity)
    model.networks["market"], model.history = train(kind, model._inputs(F, np.arange(len(y))), y, hp)
    return model


def predict_spread(model: SpreadModel, features: FeatureFrame, hours=None) -> ForecastSeries:
    """Nodal spread forecasts ($/MWh) for ``hours`` (default: every row of ``features``).

    LSTM windows look back only within ``features``; pass enough history.
    """
    raw = model.raw(features, hours)
    vals = _unscale_raw(raw, model.theta()[:, None])
    hrs = features.hours if hours is None else np.asarray(hours, dtype="datetime64[s]")
    return ForecastSeries(hrs, vals, model.nodes)


def predict_net_virtual_quantity(model: QuantityModel, features: FeatureFrame, hours=None) -> ForecastSeries:
    raw = model.raw(features, hours)
    hrs = features.hours if hours is None else np.asarray(hours, dtype="datetime64[s]")
    return ForecastSeries(hrs, np.atleast_1d(_unscale_raw(raw, model.theta_quantity)))


def load_model(path):
    """Load a bundle written by ``model.save``; predictions are bit-identical."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != BUNDLE_FORMAT:
                raise ParseError(f"unsupported model bundle format {meta.get('format')!r}")
            hp = NnHyperparams.from_dict(meta["hp"])
            nets = _load_networks(meta, data, hp)
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"cannot read model bundle {path}: {exc}") from None
    stats = FeatureStats.from_dict(meta["feature_stats"])
    if meta["role"] == "spread":
        scaling = ScalingConfig.from_dict(meta["scaling"])
        return SpreadModel(meta["kind"], hp, meta["feature_names"], scaling, meta["nodes"], nets, meta["mode"])
    if meta["role"] == "quantity":
        return QuantityModel(meta["kind"], hp, meta["feature_names"], stats, meta["theta_quantity"], nets)
    raise ParseError(f"unknown model role {meta['role']!r}")
