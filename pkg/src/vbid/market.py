"""Two-settlement market data: LMP panels, features, cleared virtual volumes.

Prices are ingested as exact fixed-point decimals.  A panel keeps the DA and
RT prices as integer multiples of ``1 / price_scale`` so that the identity
``spread + rt == da`` holds exactly for every cell; the float matrices are
derived views.

CSV layouts::

    lmp.csv       hour,node_id,da_lmp,rt_lmp
    features.csv  hour,<feature_1>,...,<feature_K>
    vbids.csv     hour,inc_cleared_mwh,dec_cleared_mwh

``hour`` is always ``YYYY-MM-DDTHH:00:00Z`` (UTC, whole hours).
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    InvalidConfig,
    MissingCell,
    NoReferenceNode,
    ParseError,
    ShapeMismatch,
)

HOUR_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:00:00Z$")
MAX_DECIMALS = 8

DEFAULT_PRICE_FLOOR = -150.0
DEFAULT_PRICE_CAP = 1000.0


def parse_hour(text):
    text = text.strip()
    if not HOUR_RE.match(text):
        raise ParseError(f"bad hour stamp {text!r}; expected YYYY-MM-DDTHH:00:00Z")
    try:
        return np.datetime64(text[:-1], "s")
    except ValueError:
        raise ParseError(f"bad hour stamp {text!r}") from None


def format_hour(stamp):
    return str(np.datetime64(stamp, "s")) + "Z"


def _readonly(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LmpRecord:
    node_id: str
    hour: np.datetime64
    da_lmp: float
    rt_lmp: float

    def __post_init__(self):
        if not (math.isfinite(self.da_lmp) and math.isfinite(self.rt_lmp)):
            raise ParseError(f"non-finite price for {self.node_id} at {self.hour}")
        h = np.datetime64(self.hour, "s")
        if h != h.astype("datetime64[h]"):
            raise ParseError(f"hour {self.hour} is not aligned to a whole hour")

    @property
    def spread(self):
        return self.da_lmp - self.rt_lmp


@dataclass(frozen=True)
class CostSchedule:
    """Per-MWh trading costs and collateral for INC and DEC lots."""

    gamma_inc: float = 0.0
    gamma_dec: float = 0.0
    prox_inc: float = 1.0
    prox_dec: float = 1.0

    def __post_init__(self):
        for name in ("gamma_inc", "gamma_dec", "prox_inc", "prox_dec"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise InvalidConfig(f"{name} must be a finite value >= 0, got {v}")


@dataclass(frozen=True)
class BidPriceConvention:
    """INC offers at the floor and DEC bids at the cap always clear."""

    price_floor: float = DEFAULT_PRICE_FLOOR
    price_cap: float = DEFAULT_PRICE_CAP

    def __post_init__(self):
        if not self.price_floor < self.price_cap:
            raise InvalidConfig("price_floor must be below price_cap")

    def inc_clears(self, da_lmp):
        return self.price_floor <= da_lmp

    def dec_clears(self, da_lmp):
        return self.price_cap >= da_lmp


@dataclass(frozen=True, eq=False)
class SpreadPanel:
    """Dense node x hour panel of DA/RT prices and their spreads."""

    nodes: tuple
    hours: np.ndarray
    da_units: np.ndarray
    rt_units: np.ndarray
    price_scale: int
    ref_node_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(str(n) for n in self.nodes))
        object.__setattr__(self, "hours", _readonly(np.asarray(self.hours, dtype="datetime64[s]")))
        da = _readonly(np.asarray(self.da_units, dtype=np.int64))
        rt = _readonly(np.asarray(self.rt_units, dtype=np.int64))
        shape = (len(self.nodes), len(self.hours))
        if da.shape != shape or rt.shape != shape:
            raise ShapeMismatch(f"price matrices must have shape {shape}, got {da.shape} and {rt.shape}")
        if not 0 <= self.ref_node_index < len(self.nodes):
            raise NoReferenceNode(f"reference index {self.ref_node_index} out of range")
        object.__setattr__(self, "da_units", da)
        object.__setattr__(self, "rt_units", rt)
        object.__setattr__(self, "_cache", {})

    def _view(self, key, units):
        if key not in self._cache:
            self._cache[key] = _readonly(units.astype(np.float64) / self.price_scale)
        return self._cache[key]

    @property
    def da(self):
        return self._view("da", self.da_units)

    @property
    def rt(self):
        return self._view("rt", self.rt_units)

    @property
    def spread_units(self):
        if "su" not in self._cache:
            self._cache["su"] = _readonly(self.da_units - self.rt_units)
        return self._cache["su"]

    @property
    def spread(self):
        return self._view("spread", self.spread_units)

    @property
    def ref_node(self):
        return self.nodes[self.ref_node_index]

    @property
    def ref_spread(self):
        return self.spread[self.ref_node_index]

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_hours(self):
        return len(self.hours)

    def node_index(self, node_id):
        try:
            return self.nodes.index(node_id)
        except ValueError:
            raise NoReferenceNode(f"node {node_id!r} not in panel") from None

    def select(self, mask):
        mask = np.asarray(mask)
        return SpreadPanel(self.nodes, self.hours[mask], self.da_units[:, mask],
                           self.rt_units[:, mask], self.price_scale, self.ref_node_index)

    def records(self):
        """Rows in (hour, node) order."""
        for t, h in enumerate(self.hours):
            for i, n in enumerate(self.nodes):
                yield LmpRecord(n, h, float(self.da[i, t]), float(self.rt[i, t]))

    def __eq__(self, other):
        if not isinstance(other, SpreadPanel):
            return NotImplemented
        return (self.nodes == other.nodes and self.ref_node_index == other.ref_node_index
                and np.array_equal(self.hours, other.hours)
                and np.array_equal(self.da, other.da) and np.array_equal(self.rt, other.rt))

    __hash__ = None


@dataclass(frozen=True)
class MarketVirtualQuantity:
    hour: np.datetime64
    inc_cleared_mwh: float
    dec_cleared_mwh: float

    def __post_init__(self):
        if self.inc_cleared_mwh < 0 or self.dec_cleared_mwh < 0:
            raise ParseError(f"negative cleared quantity at {self.hour}")

    @property
    def net_mwh(self):
        return self.inc_cleared_mwh - self.dec_cleared_mwh


@dataclass(frozen=True, eq=False)
class VirtualQuantities:
    """Hourly market-wide cleared INC and DEC volumes."""

    hours: np.ndarray
    inc: np.ndarray
    dec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "hours", _readonly(np.asarray(self.hours, dtype="datetime64[s]")))
        inc = _readonly(np.asarray(self.inc, dtype=np.float64))
        dec = _readonly(np.asarray(self.dec, dtype=np.float64))
        if inc.shape != self.hours.shape or dec.shape != self.hours.shape:
            raise ShapeMismatch("inc/dec must have one value per hour")
        if np.any(inc < 0) or np.any(dec < 0):
            raise ParseError("cleared quantities must be >= 0")
        if not (np.all(np.isfinite(inc)) and np.all(np.isfinite(dec))):
            raise ParseError("cleared quantities must be finite")
        object.__setattr__(self, "inc", inc)
        object.__setattr__(self, "dec", dec)

    @property
    def net(self):
        return self.inc - self.dec

    def select(self, mask):
        return VirtualQuantities(self.hours[mask], self.inc[mask], self.dec[mask])

    def records(self):
        for h, i, d in zip(self.hours, self.inc, self.dec):
            yield MarketVirtualQuantity(h, float(i), float(d))


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    """Named real-valued features, one row per hour."""

    hours: np.ndarray
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "hours", _readonly(np.asarray(self.hours, dtype="datetime64[s]")))
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        vals = _readonly(np.asarray(self.values, dtype=np.float64))
        if vals.shape != (len(self.hours), len(self.names)):
            raise ShapeMismatch(f"feature values must be {(len(self.hours), len(self.names))}, got {vals.shape}")
        if len(set(self.names)) != len(self.names):
            raise ParseError("duplicate feature names")
        object.__setattr__(self, "values", vals)

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def select(self, mask):
        return FeatureFrame(self.hours[mask], self.names, self.values[mask])


class MarketDataset(NamedTuple):
    panel: SpreadPanel
    features: FeatureFrame
    vbids: VirtualQuantities

    def check_aligned(self):
        if not (np.array_equal(self.panel.hours, self.features.hours)
                and np.array_equal(self.panel.hours, self.vbids.hours)):
            raise ShapeMismatch("lmp, features and vbids must cover the same hours")
        return self

    def select(self, mask):
        return MarketDataset(self.panel.select(mask), self.features.select(mask), self.vbids.select(mask))


def compute_spreads(da, rt):
    da = np.asarray(da, dtype=np.float64)
    rt = np.asarray(rt, dtype=np.float64)
    if da.shape != rt.shape:
        raise ShapeMismatch(f"da shape {da.shape} != rt shape {rt.shape}")
    return da - rt


# -- CSV ingestion -----------------------------------------------------------

def _parse_decimal(text, where):
    try:
        d = Decimal(text.strip())
    except InvalidOperation:
        raise ParseError(f"{where}: not a number: {text!r}") from None
    if not d.is_finite():
        raise ParseError(f"{where}: non-finite price {text!r}")
    decimals = max(0, -d.as_tuple().exponent)
    if decimals > MAX_DECIMALS:
        raise ParseError(f"{where}: more than {MAX_DECIMALS} decimal places in {text!r}")
    return d, decimals


def _read_rows(path, header):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        got = [c.strip() for c in got]
        if header is not None and got != header:
            raise ParseError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = [(n, r) for n, r in enumerate(reader, 2) if r and any(c.strip() for c in r)]
    return got, rows


def load_lmp_csv(path, ref_node=None):
    """Read ``lmp.csv`` into a dense :class:`SpreadPanel`.

    Nodes are sorted by id and hours ascending.  ``ref_node`` names the system
    reference node; by default the first node id in sort order is used.
    """
    _, rows = _read_rows(path, ["hour", "node_id", "da_lmp", "rt_lmp"])
    cells = {}
    decimals = 0
    for lineno, r in rows:
        if len(r) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(r)}")
        hour = parse_hour(r[0])
        node = r[1].strip()
        if not node:
            raise ParseError(f"{path}:{lineno}: empty node_id")
        da, dd = _parse_decimal(r[2], f"{path}:{lineno}")
        rt, rd = _parse_decimal(r[3], f"{path}:{lineno}")
        decimals = max(decimals, dd, rd)
        key = (hour, node)
        if key in cells:
            raise ParseError(f"{path}:{lineno}: duplicate row for node {node} at {format_hour(hour)}")
        cells[key] = (da, rt)
    if not cells:
        raise ParseError(f"{path}: no data rows")
    nodes = sorted({n for _, n in cells})
    hours = np.array(sorted({h for h, _ in cells}), dtype="datetime64[s]")
    scale = 10 ** decimals
    da_u = np.zeros((len(nodes), len(hours)), dtype=np.int64)
    rt_u = np.zeros_like(da_u)
    for t, h in enumerate(hours):
        for i, n in enumerate(nodes):
            try:
                da, rt = cells[(h, n)]
            except KeyError:
                raise MissingCell(f"{path}: no row for node {n} at {format_hour(h)}") from None
            da_u[i, t] = int(da.scaleb(decimals))
            rt_u[i, t] = int(rt.scaleb(decimals))
    if ref_node is None:
        ref_index = 0
    elif ref_node in nodes:
        ref_index = nodes.index(ref_node)
    else:
        raise NoReferenceNode(f"{path}: reference node {ref_node!r} not present")
    return SpreadPanel(tuple(nodes), hours, da_u, rt_u, scale, ref_index)


def _format_units(units, scale):
    if scale == 1:
        return str(int(units))
    decimals = len(str(scale)) - 1
    return str(Decimal(int(units)).scaleb(-decimals))


def write_lmp_csv(panel, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "node_id", "da_lmp", "rt_lmp"])
        for t, h in enumerate(panel.hours):
            stamp = format_hour(h)
            for i, n in enumerate(panel.nodes):
                w.writerow([stamp, n, _format_units(panel.da_units[i, t], panel.price_scale),
                            _format_units(panel.rt_units[i, t], panel.price_scale)])


def _parse_float(text, where):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{where}: non-finite value {text!r}")
    return v


def load_features_csv(path):
    header, rows = _read_rows(path, None)
    if not header or header[0] != "hour" or len(header) < 2:
        raise ParseError(f"{path}: header must be hour,<feature_1>,...")
    names = header[1:]
    hours, values = [], []
    for lineno, r in rows:
        if len(r) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        hours.append(parse_hour(r[0]))
        values.append([_parse_float(v, f"{path}:{lineno}") for v in r[1:]])
    order = np.argsort(np.array(hours, dtype="datetime64[s]"), kind="stable")
    hours = np.array(hours, dtype="datetime64[s]")[order]
    if len(hours) > 1 and np.any(hours[1:] == hours[:-1]):
        raise ParseError(f"{path}: duplicate hour rows")
    return FeatureFrame(hours, names, np.array(values, dtype=np.float64).reshape(len(hours), len(names))[order])


def write_features_csv(frame, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", *frame.names])
        for h, row in zip(frame.hours, frame.values):
            w.writerow([format_hour(h), *(repr(float(v)) for v in row)])


def load_vbids_csv(path):
    _, rows = _read_rows(path, ["hour", "inc_cleared_mwh", "dec_cleared_mwh"])
    recs = []
    for lineno, r in rows:
        if len(r) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(r)}")
        recs.append((parse_hour(r[0]), _parse_float(r[1], f"{path}:{lineno}"),
                     _parse_float(r[2], f"{path}:{lineno}")))
    recs.sort(key=lambda rec: rec[0])
    hours = np.array([r[0] for r in recs], dtype="datetime64[s]")
    if len(hours) > 1 and np.any(hours[1:] == hours[:-1]):
        raise ParseError(f"{path}: duplicate hour rows")
    return VirtualQuantities(hours, [r[1] for r in recs], [r[2] for r in recs])


def write_vbids_csv(vq, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "inc_cleared_mwh", "dec_cleared_mwh"])
        for h, i, d in zip(vq.hours, vq.inc, vq.dec):
            w.writerow([format_hour(h), repr(float(i)), repr(float(d))])


def load_dataset(lmp_path, features_path, vbids_path, ref_node=None):
    return MarketDataset(load_lmp_csv(lmp_path, ref_node), load_features_csv(features_path),
                         load_vbids_csv(vbids_path)).check_aligned()


def write_dataset(ds, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_lmp_csv(ds.panel, directory / "lmp.csv")
    write_features_csv(ds.features, directory / "features.csv")
    write_vbids_csv(ds.vbids, directory / "vbids.csv")


# -- synthetic market ---------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic two-settlement market.

    Spreads at node ``i`` are generated as::

        pre_i  = spread_mean + k_i * latent(features) + sensitivity_slope * net + noise_i
        spread = base_range * tanh(pre_i / base_range) + spike

    ``latent`` mixes a linear and an odd quadratic load term, wind, a three
    hour load ramp and an hour-of-day profile; ``net`` is the market-wide
    cleared INC-minus-DEC quantity, affine in the load forecast plus noise.
    The reference node has ``k = 1``.  The tanh keeps non-spike spreads
    strictly inside ``(-base_range, base_range)`` while staying strictly
    increasing, so the spread is strictly decreasing in ``net``.
    """

    n_nodes: int = 5
    n_days: int = 395
    start: str = "2017-01-01"
    spike_prob: float = 0.005
    spike_scale: float = 25.0
    base_volatility: float = 4.0
    base_range: float = 100.0
    spread_mean: float = 0.5
    signal_scale: float = 6.0
    ramp_coef: float = 0.5
    sensitivity_slope: float = -0.5
    quantity_scale: float = 8.0
    quantity_noise: float = 3.0
    market_base_mwh: float = 15.0
    energy_price: float = 35.0

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_days < 1:
            raise InvalidConfig("n_nodes and n_days must be positive")
        if not 0.0 <= self.spike_prob <= 1.0:
            raise InvalidConfig(f"spike_prob must lie in [0, 1], got {self.spike_prob}")
        if self.base_range <= 0 or self.base_volatility < 0 or self.spike_scale < 0:
            raise InvalidConfig("base_range must be > 0; volatilities must be >= 0")
        if not self.sensitivity_slope < 0:
            raise InvalidConfig("sensitivity_slope must be negative")
        if self.quantity_noise < 0 or self.market_base_mwh < 0:
            raise InvalidConfig("quantity_noise and market_base_mwh must be >= 0")

    @classmethod
    def from_mapping(cls, mapping):
        kwargs = {}
        for f in cls.__dataclass_fields__.values():
            key = f.name
            if key in mapping:
                raw = mapping[key]
                try:
                    kwargs[key] = raw if f.type == "str" else (int(raw) if f.type == "int" else float(raw))
                except ValueError:
                    raise InvalidConfig(f"{key}: bad value {raw!r}") from None
        return cls(**kwargs)


class SyntheticTruth(NamedTuple):
    latent: np.ndarray          # (T,) feature-driven spread signal
    net_quantity: np.ndarray    # (T,) injected market net quantity
    spread: np.ndarray          # (N, T) spreads before cent rounding
    node_factors: np.ndarray    # (N,)
    spike: np.ndarray           # (T,) spike component at the reference node


def _zscore(x):
    return (x - x.mean()) / x.std()


def _ar1(rng, n, phi, sd):
    e = rng.normal(0.0, sd, n)
    out = np.empty(n)
    acc = 0.0
    for t in range(n):
        acc = phi * acc + e[t]
        out[t] = acc
    return out


def _simulate(cfg, seed, net_override=None):
    ss = np.random.SeedSequence(seed)
    r_feat, r_qty, r_noise, r_spike, r_node, r_rt = (np.random.default_rng(s) for s in ss.spawn(6))
    T = 24 * cfg.n_days
    t = np.arange(T)
    hod = t % 24
    day = t / 24.0
    start = np.datetime64(cfg.start, "h")
    hours = (start + t.astype("timedelta64[h]")).astype("datetime64[s]")

    season = np.cos(2 * np.pi * (day - 200.0) / 365.0)
    diurnal = np.sin(2 * np.pi * (hod - 9.0) / 24.0)
    load = 1000.0 + 180.0 * season + 220.0 * diurnal + _ar1(r_feat, T, 0.9, 25.0)
    temp = 15.0 + 10.0 * season + 4.0 * diurnal + r_feat.normal(0.0, 2.0, T)
    wind = 300.0 / (1.0 + np.exp(-_ar1(r_feat, T, 0.97, 0.25)))
    fuel = 3.0 + np.repeat(np.cumsum(r_feat.normal(0.0, 0.02, cfg.n_days)), 24)

    load_z = _zscore(load)
    wind_z = _zscore(wind)
    ramp = np.zeros(T)
    ramp[3:] = load_z[3:] - load_z[:-3]
    ramp_z = _zscore(ramp)
    latent = cfg.signal_scale * (0.6 * load_z + 0.3 * load_z * np.abs(load_z) - 0.4 * wind_z
                                 + cfg.ramp_coef * ramp_z + 0.3 * np.sin(2 * np.pi * hod / 24.0))

    if net_override is None:
        net = cfg.quantity_scale * 0.8 * load_z + r_qty.normal(0.0, cfg.quantity_noise, T)
    else:
        net = np.asarray(net_override, dtype=np.float64)
        if net.shape != (T,):
            raise ShapeMismatch(f"net_override must have {T} values")
        r_qty.normal(0.0, cfg.quantity_noise, T)  # keep downstream streams aligned
    churn = np.abs(r_qty.normal(0.0, 2.0, T))
    inc = cfg.market_base_mwh + np.maximum(net, 0.0) + churn
    dec = cfg.market_base_mwh + np.maximum(-net, 0.0) + churn

    factors = np.ones(cfg.n_nodes)
    if cfg.n_nodes > 1:
        factors[1:] = r_node.uniform(0.6, 1.4, cfg.n_nodes - 1)
    noise = r_noise.normal(0.0, cfg.base_volatility, (cfg.n_nodes, T))
    pre = cfg.spread_mean + factors[:, None] * latent[None, :] + cfg.sensitivity_slope * net[None, :] + noise
    spread = cfg.base_range * np.tanh(pre / cfg.base_range)

    hit = r_spike.random(T) < cfg.spike_prob
    sign = np.where(r_spike.random(T) < 0.5, -1.0, 1.0)
    mag = cfg.spike_scale * (1.0 + r_spike.exponential(1.0, T))
    spike = np.where(hit, sign * mag, 0.0)
    spread = spread + factors[:, None] * spike[None, :]

    rt = cfg.energy_price + 8.0 * load_z[None, :] + r_rt.normal(0.0, 3.0, (cfg.n_nodes, T))
    da = rt + spread

    names = ["load_forecast", "temperature", "wind_forecast", "fuel_price"] + [f"hour_{h:02d}" for h in range(24)]
    onehot = np.zeros((T, 24))
    onehot[t, hod] = 1.0
    values = np.column_stack([load, temp, wind, fuel, onehot])

    nodes = tuple(f"NODE_{i:02d}" for i in range(cfg.n_nodes))
    panel = SpreadPanel(nodes, hours, np.rint(da * 100).astype(np.int64), np.rint(rt * 100).astype(np.int64), 100, 0)
    ds = MarketDataset(panel, FeatureFrame(hours, names, values), VirtualQuantities(hours, inc, dec))
    truth = SyntheticTruth(latent, net, spread, factors, spike)
    return ds, truth


def generate_synthetic_market(cfg, seed, net_override=None):
    """Deterministic synthetic market for ``(cfg, seed)``.

    ``net_override`` replaces the market-wide net virtual quantity while
    every other random stream is left untouched, which makes the sensitivity
    of spreads to net quantity directly observable.
    """
    return _simulate(cfg, seed, net_override)[0]


def synthetic_truth(cfg, seed, net_override=None):
    return _simulate(cfg, seed, net_override)[1]
