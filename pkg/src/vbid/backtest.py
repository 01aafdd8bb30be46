"""Rolling train / forecast / optimize / settle loop and its metrics.

The loop is split in two stages.  :func:`build_forecast_book` walks the
test days once per seed, retraining on schedule, and stores everything the
optimizer needs for each day: spread and net-quantity forecasts, hourly
shift curves, CVaR samples and the collateral reference used for budgets.
:func:`simulate` then turns a book into settled days for one scenario and
one budget share, so scenarios and share sweeps reuse the same forecasts.

Every read of the dataset goes through :class:`TemporalFirewall`, which
records what was read on behalf of which day.  History reads must end
before the day starts; the day's own exogenous features are published
day-ahead and are logged separately.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import gbt
from .config import as_bool, as_float, as_float_list, as_int, as_int_list, child_seed
from .errors import InsufficientHistory, InvalidConfig, ShapeMismatch, TooFewPoints, ZeroVariance
from .market import CostSchedule, FeatureFrame, MarketDataset, format_hour
from .nn.forecast import fit_quantity_model, fit_spread_model, predict_net_virtual_quantity, predict_spread
from .nn.training import NnHyperparams
from .portfolio import PortfolioInstance, solve_branch_and_bound
from .scaling import PASSTHROUGH
from .sensitivity import SensitivityBounds, flat_pwl, shift_at

log = logging.getLogger(__name__)

SCENARIOS = ("no_ps", "partial_ps", "full_ps")
RISK_PRESETS = {"same": 1.0, "half": 0.5, "none": math.inf}
TRADING_DAYS = 252
UNLIMITED_RISK = 1e12


@dataclass(frozen=True)
class BacktestConfig:
    train_days: int = 365
    retrain_days: int = 30
    scenario: str = "full_ps"
    share: float = 0.05
    shares: tuple = (0.01, 0.05, 0.10)
    budget: float | None = None         # fixed daily budget; overrides ``share``
    risk_ratio: float = 1.0             # risk limit = ratio * budget; inf means unconstrained
    beta: float = 0.95
    n_samples: int = 30
    gamma_inc: float = 0.1
    gamma_dec: float = 0.1
    prox: float = 10.0                  # collateral per 1 MWh lot
    exclusive: bool = True
    model_kind: str = "mlp"
    hidden_units: tuple = (128, 64, 32)
    epochs: int = 200
    batch_size: int = 2048
    learning_rate: float = 1e-3
    patience: int = 10
    lookback: int = 24
    gbt_rounds: int = 100
    gbt_depth: int = 4
    node_limit: int = 15
    mip_gap: float = 1e-4
    risk_free: float = 0.0              # annual
    oracle: bool = False                # forecasts replaced by realized values (tests only)
    max_test_days: int | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise InvalidConfig(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.retrain_days < 1 or self.train_days < self.retrain_days:
            raise InvalidConfig("need train_days >= retrain_days >= 1")
        for s in tuple(self.shares) + (self.share,):
            if not 0 < s <= 0.2:
                raise InvalidConfig(f"market shares must lie in (0, 0.2], got {s}")
        if self.budget is not None and self.budget < 0:
            raise InvalidConfig("budget must be >= 0")
        if not self.risk_ratio >= 0:
            raise InvalidConfig("risk_ratio must be >= 0")
        if not 0 < self.beta < 1:
            raise InvalidConfig("beta must lie in (0, 1)")
        if self.n_samples < 1 or self.n_samples > self.train_days:
            raise InvalidConfig("n_samples must lie in [1, train_days]")
        if self.node_limit < 1:
            raise InvalidConfig("node_limit must be >= 1")
        object.__setattr__(self, "shares", tuple(float(s) for s in self.shares))
        object.__setattr__(self, "hidden_units", tuple(int(h) for h in self.hidden_units))
        CostSchedule(self.gamma_inc, self.gamma_dec, self.prox, self.prox)

    @property
    def costs(self):
        return CostSchedule(self.gamma_inc, self.gamma_dec, self.prox, self.prox)

    def hyperparams(self, seed):
        return NnHyperparams(hidden_units=self.hidden_units, epochs=self.epochs, batch_size=self.batch_size,
                             learning_rate=self.learning_rate, patience=self.patience, lookback=self.lookback,
                             seed=seed)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from ``key = value`` strings; unknown keys are an error."""
        kw = {}
        for key, raw in mapping.items():
            if key not in cls.__dataclass_fields__:
                raise InvalidConfig(f"unknown backtest key {key!r}")
            if key in ("scenario", "model_kind"):
                kw[key] = raw.replace("-", "_") if key == "scenario" else raw
            elif key == "shares":
                kw[key] = tuple(as_float_list(raw, key))
            elif key == "hidden_units":
                kw[key] = tuple(as_int_list(raw, key))
            elif key in ("exclusive", "oracle"):
                kw[key] = as_bool(raw, key)
            elif key == "risk_ratio":
                kw[key] = RISK_PRESETS[raw] if raw in RISK_PRESETS else as_float(raw, key)
            elif key in ("budget", "max_test_days"):
                kw[key] = None if raw.lower() in ("", "none") else (
                    as_float(raw, key) if key == "budget" else as_int(raw, key))
            elif cls.__dataclass_fields__[key].type == "int":
                kw[key] = as_int(raw, key)
            else:
                kw[key] = as_float(raw, key)
        return cls(**kw)


# -- data access ---------------------------------------------------------------

class AccessRecord(NamedTuple):
    day: np.datetime64
    purpose: str
    first: np.datetime64
    last: np.datetime64


class TemporalFirewall:
    """Mediates dataset reads and logs their time spans per decision day."""

    HISTORY = ("train", "samples", "bounds", "collateral", "lookback")

    def __init__(self, dataset: MarketDataset):
        self.ds = dataset.check_aligned()
        self.hours = dataset.panel.hours
        self.log = []

    def _span(self, day, purpose, lo, hi):
        mask = (self.hours >= lo) & (self.hours < hi)
        if mask.any():
            h = self.hours[mask]
            self.log.append(AccessRecord(day, purpose, h[0], h[-1]))
        return mask

    def history(self, day, purpose, n_days):
        """Dataset rows for the ``n_days`` before ``day``."""
        mask = self._span(day, purpose, day - np.timedelta64(n_days, "D"), day)
        return self.ds.select(mask)

    def day_ahead_features(self, day, lookback_hours=0):
        """Features of ``day`` (published day-ahead) plus ``lookback_hours`` earlier rows."""
        start = day - np.timedelta64(lookback_hours, "h")
        if lookback_hours:
            self._span(day, "lookback", start, day)
        self._span(day, "day_ahead", day, day + np.timedelta64(1, "D"))
        mask = (self.hours >= start) & (self.hours < day + np.timedelta64(1, "D"))
        return self.ds.features.select(mask)

    def realized(self, day, purpose="settle"):
        mask = self._span(day, purpose, day, day + np.timedelta64(1, "D"))
        return self.ds.select(mask)

    def violations(self):
        """History reads that reach into or past the decision day."""
        return [r for r in self.log if r.purpose in self.HISTORY and r.last >= r.day]


# -- forecast book -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DayInputs:
    day: np.datetime64
    hours: np.ndarray
    spread_forecast: np.ndarray     # (nodes, 24)
    y_forecast: np.ndarray          # (24,)
    pwl: tuple                      # 24 shift curves
    samples: np.ndarray             # (24, n_samples, nodes)
    realized: np.ndarray            # (nodes, 24)
    market_collateral: float        # trailing average of daily market-wide collateral


@dataclass(eq=False)
class ForecastBook:
    nodes: tuple
    days: list
    firewall_log: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    retrain_days: list = field(default_factory=list)

    def forecasts(self):
        return np.concatenate([d.spread_forecast for d in self.days], axis=1)

    def actuals(self):
        return np.concatenate([d.realized for d in self.days], axis=1)


def _day_grid(hours):
    if len(hours) == 0 or len(hours) % 24:
        raise ShapeMismatch("the dataset must hold whole days of 24 hours")
    days = hours[::24].astype("datetime64[D]")
    expect = (days[:, None].astype("datetime64[s]") + np.arange(24).astype("timedelta64[h]")).ravel()
    if not np.array_equal(expect, hours):
        raise ShapeMismatch("the dataset must be hourly, contiguous and start at 00:00")
    return days.astype("datetime64[s]")


def _gbt_matrix(ds: MarketDataset, net):
    """Constrained feature (market net quantity) first, then the non-indicator features and hour of day."""
    keep = [i for i, n in enumerate(ds.features.names) if not PASSTHROUGH.match(n)]
    hod = (ds.features.hours.astype("datetime64[h]").astype(np.int64) % 24).astype(np.float64)
    return np.column_stack([net, ds.features.values[:, keep], hod])


class _Models(NamedTuple):
    spread: object
    quantity: object
    sensitivity: gbt.GbtEnsemble
    bounds: SensitivityBounds


def _train(hist: MarketDataset, cfg: BacktestConfig, seed, day):
    hp = cfg.hyperparams(child_seed(seed, f"spread:{day}"))
    spread = fit_spread_model(hist.panel, hist.features, hp, kind=cfg.model_kind)
    hq = cfg.hyperparams(child_seed(seed, f"quantity:{day}"))
    quantity = fit_quantity_model(hist.vbids, hist.features, hq, kind=cfg.model_kind)
    X = _gbt_matrix(hist, hist.vbids.net)
    params = gbt.GbtParams(num_rounds=cfg.gbt_rounds, max_depth=cfg.gbt_depth, monotone_feature=0,
                           seed=child_seed(seed, f"gbt:{day}"))
    ens = gbt.fit(X, hist.panel.ref_spread, params)
    return _Models(spread, quantity, ens, SensitivityBounds.from_history(hist.vbids.net))


def _hour_pwl(ens, context, y, bounds, n_nodes, hour):
    # the trader's position x moves the market net quantity from y to y + x; keep u inside history
    x_lo = max(bounds.x_lo - y, -float(n_nodes))
    x_hi = min(bounds.x_hi - y, float(n_nodes))
    if not x_lo < 0 < x_hi:
        x_lo, x_hi = min(x_lo, -1.0), max(x_hi, 1.0)
    return gbt.fit_hourly_pwl(ens, context, y, x_lo, x_hi, hour)


def build_forecast_book(dataset: MarketDataset, cfg: BacktestConfig, seed=0) -> ForecastBook:
    """Walk the test period once, retraining every ``retrain_days``."""
    fw = TemporalFirewall(dataset)
    days = _day_grid(dataset.panel.hours)
    n_days = len(days)
    if n_days < cfg.train_days + cfg.retrain_days:
        raise InsufficientHistory(f"dataset has {n_days} days; need train_days + retrain_days = "
                                  f"{cfg.train_days + cfg.retrain_days}")
    test = list(range(cfg.train_days, n_days))
    if cfg.max_test_days is not None:
        test = test[:cfg.max_test_days]
    N = dataset.panel.n_nodes
    book = ForecastBook(dataset.panel.nodes, [])
    models = None
    lookback = cfg.lookback if cfg.model_kind == "lstm" else 0
    for k, di in enumerate(test):
        day = days[di]
        if k % cfg.retrain_days == 0 and not cfg.oracle:
            log.info("retraining models for %s", format_hour(day))
            models = _train(fw.history(day, "train", cfg.train_days), cfg, seed, day)
            book.retrain_days.append(day)
        feats = fw.day_ahead_features(day, lookback)
        hours = feats.hours[-24:]
        if cfg.oracle:
            today = fw.realized(day, "oracle")
            E = np.array(today.panel.spread)
            y = np.array(today.vbids.net)
        else:
            E = predict_spread(models.spread, feats, hours).values
            y = predict_net_virtual_quantity(models.quantity, feats, hours).values
        samp = fw.history(day, "samples", cfg.n_samples).panel.spread      # (N, Ns*24)
        samples = samp.reshape(N, cfg.n_samples, 24).transpose(2, 1, 0)
        coll = fw.history(day, "collateral", cfg.train_days).vbids
        market_collateral = float((coll.inc + coll.dec).sum() * cfg.prox / (len(coll.hours) / 24))
        if cfg.oracle:
            hist = fw.history(day, "bounds", cfg.train_days)
            bounds = SensitivityBounds.from_history(hist.vbids.net)
            ens = None
        else:
            bounds, ens = models.bounds, models.sensitivity
        day_ds = MarketDataset(dataset.panel.select(np.isin(dataset.panel.hours, hours)),
                               FeatureFrame(hours, feats.names, feats.values[-24:]),
                               dataset.vbids.select(np.isin(dataset.vbids.hours, hours)))
        if ens is None:
            pwl = tuple(flat_pwl(h, max(bounds.x_lo, -float(N)), min(bounds.x_hi, float(N))) for h in range(24))
        else:
            ctx = _gbt_matrix(day_ds, y)
            pwl = tuple(_hour_pwl(ens, ctx[h], float(y[h]), bounds, N, h) for h in range(24))
        realized = np.array(fw.realized(day).panel.spread)
        book.days.append(DayInputs(day, hours, E, y, pwl, samples, realized, market_collateral))
    book.firewall_log = list(fw.log)
    book.violations = fw.violations()
    return book


# -- settlement ----------------------------------------------------------------

class LedgerEntry(NamedTuple):
    hour: np.datetime64
    node: str
    side: str
    realized_spread: float
    shift: float
    fee: float
    gross: float
    net: float


@dataclass(frozen=True, eq=False)
class DailyResult:
    date: np.datetime64
    gross: float
    fees: float
    net: float
    collateral: float
    cvar: float
    budget: float
    entries: tuple = ()
    solver_status: str = "optimal"
    solver_gap: float = 0.0

    @property
    def n_bids(self):
        return len(self.entries)


def settle_day(z_inc, z_dec, realized, pwl, costs: CostSchedule, scenario, nodes=None, hours=None,
               date=None, collateral=0.0, cvar=0.0, budget=0.0, **solver):
    """Realized P&L of one day's lots.

    ``realized`` is (nodes, hours).  The reference-node shift at each hour's
    net position is added to every node's spread in ``full_ps`` and
    ``partial_ps``; ``no_ps`` ignores it.  Totals are summed from the ledger.
    """
    if scenario not in SCENARIOS:
        raise InvalidConfig(f"unknown scenario {scenario!r}")
    z_inc = np.asarray(z_inc, dtype=np.int64)
    z_dec = np.asarray(z_dec, dtype=np.int64)
    realized = np.asarray(realized, dtype=np.float64)
    if z_inc.shape != realized.shape or z_dec.shape != realized.shape:
        raise ShapeMismatch("decisions and realized spreads must both be (nodes, hours)")
    N, H = realized.shape
    nodes = nodes if nodes is not None else tuple(str(i) for i in range(N))
    hours = hours if hours is not None else np.arange(H)
    x = z_inc.sum(axis=0) - z_dec.sum(axis=0)
    entries = []
    for h in range(H):
        shift = shift_at(pwl[h], float(x[h])) if scenario != "no_ps" else 0.0
        for i in range(N):
            s = float(realized[i, h]) + shift
            if z_inc[i, h]:
                entries.append(LedgerEntry(hours[h], nodes[i], "inc", float(realized[i, h]), shift,
                                           costs.gamma_inc, s, s - costs.gamma_inc))
            if z_dec[i, h]:
                entries.append(LedgerEntry(hours[h], nodes[i], "dec", float(realized[i, h]), shift,
                                           costs.gamma_dec, -s, -s - costs.gamma_dec))
    gross = math.fsum(e.gross for e in entries)
    fees = math.fsum(e.fee for e in entries)
    net = math.fsum(e.net for e in entries)
    return DailyResult(date, gross, fees, net, float(collateral), float(cvar), float(budget), tuple(entries),
                       solver.get("status", "optimal"), solver.get("gap", 0.0))


# -- metrics -------------------------------------------------------------------

def spike_metrics(forecasts, actuals, top=0.01):
    """Sign accuracy and RMSE on the top ``top`` fraction of points by |actual|.

    A zero forecast or actual counts as positive.  Ties in |actual| at the
    cut keep the earlier points.
    """
    f = np.asarray(forecasts, dtype=np.float64).ravel()
    a = np.asarray(actuals, dtype=np.float64).ravel()
    if f.shape != a.shape:
        raise ShapeMismatch("forecasts and actuals must align")
    if a.size < 100:
        raise TooFewPoints(f"need at least 100 points, got {a.size}")
    k = max(1, math.ceil(top * a.size))
    idx = np.argsort(-np.abs(a), kind="stable")[:k]
    acc = float(np.mean((f[idx] >= 0) == (a[idx] >= 0)))
    rmse = float(np.sqrt(np.mean((f[idx] - a[idx]) ** 2)))
    return acc, rmse


def sharpe_ratio(returns, risk_free=0.0, annualize=True):
    """Mean excess return over its (population) standard deviation, times sqrt(252) by default."""
    r = np.asarray(returns, dtype=np.float64) - risk_free
    if r.size < 2:
        raise TooFewPoints("need at least 2 returns")
    sd = float(np.std(r))
    if sd <= 1e-15 * max(1.0, float(np.max(np.abs(r)))):
        raise ZeroVariance("returns have zero variance")
    s = float(np.mean(r)) / sd
    return s * math.sqrt(TRADING_DAYS) if annualize else s


def convergence_report(book: ForecastBook, results):
    """Mean |realized spread| without and with the trader's shift, per year."""
    out = {}
    for d, res in zip(book.days, results):
        year = str(d.day.astype("datetime64[Y]"))
        x = np.zeros(len(d.hours))
        for e in res.entries:
            h = int(np.flatnonzero(d.hours == e.hour)[0])
            x[h] += 1 if e.side == "inc" else -1
        shift = np.array([shift_at(p, float(xh)) if xh else 0.0 for p, xh in zip(d.pwl, x)])
        acc = out.setdefault(year, [[], []])
        acc[0].append(np.abs(d.realized).ravel())
        acc[1].append(np.abs(d.realized + shift[None, :]).ravel())
    return {y: (float(np.mean(np.concatenate(a))), float(np.mean(np.concatenate(b)))) for y, (a, b) in out.items()}


# -- simulation ----------------------------------------------------------------

def _daily_budget(cfg, d, share):
    return float(cfg.budget) if cfg.budget is not None else share * d.market_collateral


def _instance(cfg, d, budget, nodes, sensitive=True):
    risk = budget * cfg.risk_ratio if math.isfinite(cfg.risk_ratio) else UNLIMITED_RISK
    inst = PortfolioInstance(d.spread_forecast, d.pwl, d.samples, cfg.costs, budget, risk, cfg.beta,
                             d.y_forecast, cfg.exclusive, nodes=tuple(nodes), hours=tuple(d.hours))
    return inst if sensitive else inst.without_sensitivity()


def _solve(args):
    inst, node_limit, mip_gap = args
    return solve_branch_and_bound(inst, node_limit=node_limit, mip_gap=mip_gap)


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def simulate(book: ForecastBook, cfg: BacktestConfig, scenario=None, share=None, workers=1):
    """Settled days for one scenario; ``partial_ps`` and ``no_ps`` share their decisions."""
    scenario = scenario or cfg.scenario
    share = cfg.share if share is None else share
    budgets = [_daily_budget(cfg, d, share) for d in book.days]
    jobs = [(_instance(cfg, d, b, book.nodes, scenario == "full_ps"), cfg.node_limit, cfg.mip_gap)
            for d, b in zip(book.days, budgets)]
    sols = _map(_solve, jobs, workers)
    out = []
    for d, b, sol in zip(book.days, budgets, sols):
        out.append(settle_day(sol.z_inc, sol.z_dec, d.realized, d.pwl, cfg.costs, scenario, book.nodes, d.hours,
                              d.day, sol.collateral, float(sol.cvar.sum()), b, status=sol.status, gap=sol.gap))
    return out


@dataclass(eq=False)
class BacktestReport:
    scenario: str
    share: float
    results: list
    cumulative_net: np.ndarray
    profit_per_dollar: float
    sharpe_by_year: dict
    spike_accuracy: float
    spike_rmse: float
    convergence: dict
    firewall_violations: int
    curves: list = field(default_factory=list)

    @property
    def total_net(self):
        return float(self.cumulative_net[-1]) if len(self.cumulative_net) else 0.0


def daily_returns(results):
    return np.array([r.net / r.budget if r.budget > 0 else 0.0 for r in results])


def profit_per_dollar(results):
    """Cumulative net profit over the average daily budget (collateral and risk limit)."""
    budgets = np.array([r.budget for r in results])
    mean_b = float(budgets.mean()) if budgets.size else 0.0
    return math.fsum(r.net for r in results) / mean_b if mean_b > 0 else 0.0


def _sharpe_by_year(results, cfg):
    by = {}
    for r in results:
        by.setdefault(str(np.datetime64(r.date, "Y")), []).append(r)
    out = {}
    for y, rs in by.items():
        try:
            out[y] = sharpe_ratio(daily_returns(rs), cfg.risk_free / TRADING_DAYS)
        except (ZeroVariance, TooFewPoints):
            out[y] = math.nan
    return out


def report_from_results(book, cfg, scenario, share, results):
    acc, rmse = spike_metrics(book.forecasts(), book.actuals())
    return BacktestReport(scenario, share, results, np.cumsum([r.net for r in results]),
                          profit_per_dollar(results), _sharpe_by_year(results, cfg), acc, rmse,
                          convergence_report(book, results), len(book.violations))


def run_backtest(dataset: MarketDataset, cfg: BacktestConfig, seed=0, book=None, workers=1) -> BacktestReport:
    book = book or build_forecast_book(dataset, cfg, seed)
    results = simulate(book, cfg, cfg.scenario, workers=workers)
    return report_from_results(book, cfg, cfg.scenario, cfg.share, results)


class CurvePoint(NamedTuple):
    share: float
    profit_per_dollar: float
    sharpe: float
    total_net: float


def efficiency_sweep(dataset: MarketDataset, cfg: BacktestConfig, seed=0, shares=None, book=None, workers=1):
    """Profit per dollar and Sharpe ratio of ``full_ps`` for each market share.

    Returns ``(points, non_increasing)`` where the flag reports whether
    profit per dollar never rises with share.  It is a diagnostic only.
    """
    book = book or build_forecast_book(dataset, cfg, seed)
    pts = []
    for s in (shares or cfg.shares):
        res = simulate(book, cfg, "full_ps", share=s, workers=workers)
        try:
            sh = sharpe_ratio(daily_returns(res), cfg.risk_free / TRADING_DAYS)
        except (ZeroVariance, TooFewPoints):
            sh = math.nan
        pts.append(CurvePoint(float(s), profit_per_dollar(res), sh, math.fsum(r.net for r in res)))
    ordered = sorted(pts, key=lambda p: p.share)
    flag = all(b.profit_per_dollar <= a.profit_per_dollar for a, b in zip(ordered, ordered[1:]))
    return pts, flag


# -- output files ----------------------------------------------------------------

def _num(v):
    return "nan" if isinstance(v, float) and math.isnan(v) else f"{v:.10g}"


def pnl_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "gross", "net", "collateral", "cvar"])
    for r in results:
        w.writerow([str(np.datetime64(r.date, "D")), _num(r.gross), _num(r.net), _num(r.collateral), _num(r.cvar)])
    return buf.getvalue()


def metrics_txt(report: BacktestReport):
    lines = [("scenario", report.scenario), ("share", _num(report.share)),
             ("days", str(len(report.results))), ("bids", str(sum(r.n_bids for r in report.results))),
             ("total_net", _num(report.total_net)),
             ("total_gross", _num(math.fsum(r.gross for r in report.results))),
             ("total_fees", _num(math.fsum(r.fees for r in report.results))),
             ("profit_per_dollar", _num(report.profit_per_dollar)),
             ("spike_accuracy", _num(report.spike_accuracy)), ("spike_rmse", _num(report.spike_rmse)),
             ("firewall_violations", str(report.firewall_violations)),
             ("solver_truncated_days", str(sum(r.solver_status != "optimal" for r in report.results))),
             ("solver_max_gap", _num(max((r.solver_gap for r in report.results), default=0.0)))]
    for y, v in sorted(report.sharpe_by_year.items()):
        lines.append((f"sharpe_{y}", _num(v)))
    for y, (without, with_) in sorted(report.convergence.items()):
        lines.append((f"avg_abs_spread_without_{y}", _num(without)))
        lines.append((f"avg_abs_spread_with_{y}", _num(with_)))
    return "".join(f"{k} = {v}\n" for k, v in lines)


def curves_csv(points):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["share", "profit_per_dollar", "sharpe"])
    for p in points:
        w.writerow([_num(p.share), _num(p.profit_per_dollar), _num(p.sharpe)])
    return buf.getvalue()
