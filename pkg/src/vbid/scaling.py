"""Target squashing and feature standardisation shared by the forecasters."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import NonPositiveTheta, OutOfRange, ShapeMismatch, InvalidConfig

# one-hot hour and node indicators bypass z-scoring
PASSTHROUGH = re.compile(r"^(hour|node)_")

THETA_MIN = 10.0
THETA_MAX = 40.0
THETA_QUANTITY_FACTOR = 50.0


def _check_theta(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(~(theta > 0)):
        raise NonPositiveTheta(f"theta must be > 0, got {theta}")
    return theta


def sigmoid_scale(x, theta):
    """``1 / (1 + exp(-x / theta))``, elementwise."""
    theta = _check_theta(theta)
    out = expit(np.asarray(x, dtype=np.float64) / theta)
    return float(out) if np.ndim(out) == 0 else out


def sigmoid_unscale(y, theta):
    """Inverse of :func:`sigmoid_scale`; ``y`` must lie strictly in (0, 1)."""
    theta = _check_theta(theta)
    y = np.asarray(y, dtype=np.float64)
    if np.any(~((y > 0) & (y < 1))):
        raise OutOfRange("sigmoid_unscale needs 0 < y < 1")
    out = theta * (np.log(y) - np.log1p(-y))
    return float(out) if np.ndim(out) == 0 else out


def theta_from_spreads(spreads, lo=THETA_MIN, hi=THETA_MAX):
    """Per-node scale: training-spread standard deviation clamped to [lo, hi]."""
    s = np.asarray(spreads, dtype=np.float64)
    return np.clip(s.std(axis=-1), lo, hi)


@dataclass(frozen=True)
class FeatureStats:
    names: tuple
    mean: np.ndarray
    std: np.ndarray
    scaled: np.ndarray              # bool per feature: False for passthrough columns
    zero_variance: tuple = ()

    def transform(self, values, names=None):
        if names is not None and tuple(names) != self.names:
            raise ShapeMismatch("feature names differ from the fitted set")
        values = np.asarray(values, dtype=np.float64)
        if values.shape[-1] != len(self.names):
            raise ShapeMismatch(f"expected {len(self.names)} features, got {values.shape[-1]}")
        return np.where(self.scaled, (values - self.mean) / self.std, values)

    def to_dict(self):
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist(),
                "scaled": self.scaled.tolist(), "zero_variance": list(self.zero_variance)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   np.array(d["scaled"], dtype=bool), tuple(d["zero_variance"]))


def zscore_fit_apply(values, names, passthrough=PASSTHROUGH):
    """Fit per-feature mean/std on ``values`` (rows are samples) and apply it.

    Columns whose names match ``passthrough`` are left untouched.  A constant
    column is centred and kept with ``std = 1``; its name is reported in
    ``stats.zero_variance``.
    """
    values = np.asarray(values, dtype=np.float64)
    names = tuple(names)
    if values.ndim != 2 or values.shape[1] != len(names):
        raise ShapeMismatch("values must be (n_samples, n_features) matching names")
    if values.shape[0] < 2:
        raise ShapeMismatch("need at least 2 samples to fit feature statistics")
    scaled = np.array([passthrough.match(n) is None for n in names], dtype=bool)
    mean = np.where(scaled, values.mean(axis=0), 0.0)
    std = values.std(axis=0)
    flat = scaled & ~(std > 0)
    std = np.where(scaled & ~flat, std, 1.0)
    stats = FeatureStats(names, mean, std, scaled, tuple(n for n, f in zip(names, flat) if f))
    return stats, stats.transform(values)


@dataclass(frozen=True)
class ScalingConfig:
    """Sigmoid scales for spreads (per node) and net quantity, plus feature stats."""

    theta_spread: dict
    theta_quantity: float
    feature_stats: FeatureStats | None = None

    def __post_init__(self):
        if not self.theta_spread:
            raise InvalidConfig("theta_spread needs at least one node")
        for node, th in self.theta_spread.items():
            if not th > 0:
                raise NonPositiveTheta(f"theta for {node} must be > 0")
        if not self.theta_quantity > max(self.theta_spread.values()):
            raise InvalidConfig("theta_quantity must exceed every spread theta")

    def to_dict(self):
        return {"theta_spread": {k: float(v) for k, v in self.theta_spread.items()},
                "theta_quantity": float(self.theta_quantity),
                "feature_stats": None if self.feature_stats is None else self.feature_stats.to_dict()}

    @classmethod
    def from_dict(cls, d):
        fs = d.get("feature_stats")
        return cls(dict(d["theta_spread"]), float(d["theta_quantity"]),
                   None if fs is None else FeatureStats.from_dict(fs))
