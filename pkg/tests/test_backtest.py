import math
from dataclasses import replace

import numpy as np
import pytest

from vbid.backtest import (
    BacktestConfig,
    ForecastBook,
    TemporalFirewall,
    build_forecast_book,
    convergence_report,
    efficiency_sweep,
    metrics_txt,
    pnl_csv,
    profit_per_dollar,
    run_backtest,
    settle_day,
    sharpe_ratio,
    simulate,
    spike_metrics,
)
from vbid.errors import InsufficientHistory, InvalidConfig, OutOfDomain, TooFewPoints, ZeroVariance
from vbid.market import CostSchedule, SyntheticConfig, generate_synthetic_market
from vbid.sensitivity import PwlSensitivity, flat_pwl


def _curve(slope, lo=-5.0, hi=5.0, hour=0):
    return PwlSensitivity(hour, [lo], [slope], [0.0], lo, hi)


def test_settle_single_inc():
    res = settle_day([[1]], [[0]], [[10.0]], (_curve(-2.0),), CostSchedule(1.0, 0.0), "full_ps")
    assert (res.gross, res.fees, res.net) == (8.0, 1.0, 7.0)
    e = res.entries[0]
    assert (e.side, e.realized_spread, e.shift, e.net) == ("inc", 10.0, -2.0, 7.0)
    assert settle_day([[1]], [[0]], [[10.0]], (_curve(-2.0),), CostSchedule(1.0, 0.0), "no_ps").net == 9.0


def test_settle_empty_and_offsetting():
    res = settle_day([[0, 0]], [[0, 0]], [[3.0, -4.0]], (_curve(-1, hour=0), _curve(-1, hour=1)),
                     CostSchedule(0.5, 0.5), "full_ps")
    assert (res.gross, res.fees, res.net, res.n_bids) == (0.0, 0.0, 0.0, 0)
    res = settle_day([[1], [0]], [[0], [1]], [[4.0], [-3.0]], (_curve(-3.0),), CostSchedule(0.5, 0.5), "full_ps")
    assert all(e.shift == 0.0 for e in res.entries)
    assert res.net == (4.0 - 0.5) + (3.0 - 0.5)


def test_settle_out_of_domain():
    with pytest.raises(OutOfDomain):
        settle_day(np.ones((7, 1), int), np.zeros((7, 1), int), np.zeros((7, 1)), (_curve(-1.0),),
                   CostSchedule(), "full_ps")


def test_ledger_conservation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        N, H = 4, 6
        zi = (rng.random((N, H)) < 0.3).astype(int)
        zd = ((rng.random((N, H)) < 0.3) & (zi == 0)).astype(int)
        pwl = tuple(_curve(-rng.uniform(0, 2), hour=h) for h in range(H))
        res = settle_day(zi, zd, rng.normal(0, 20, (N, H)), pwl, CostSchedule(0.3, 0.2), "partial_ps")
        assert res.net == math.fsum(e.net for e in res.entries)
        assert abs(res.net - (res.gross - res.fees)) <= 1e-9


def test_spike_metrics_examples():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 30, 500)
    assert spike_metrics(a, a) == (1.0, 0.0)
    assert spike_metrics(-a, a)[0] == 0.0
    with pytest.raises(TooFewPoints):
        spike_metrics(a[:99], a[:99])


def test_spike_metrics_top_slice():
    a = np.arange(1.0, 201.0)
    f = a.copy()
    f[-1] = -5.0      # wrong sign on the largest point only
    acc, rmse = spike_metrics(f, a)
    assert acc == 0.5 and rmse == pytest.approx(math.sqrt(205.0 ** 2 / 2))


def test_sharpe_examples():
    assert sharpe_ratio([0.02, 0.0], annualize=False) == pytest.approx(1.0, rel=1e-12)
    assert sharpe_ratio([0.02, 0.0]) == pytest.approx(math.sqrt(252), rel=1e-12)
    with pytest.raises(ZeroVariance):
        sharpe_ratio([0.01, 0.01])


def test_config_validation():
    with pytest.raises(InvalidConfig):
        BacktestConfig(train_days=10, retrain_days=20)
    with pytest.raises(InvalidConfig):
        BacktestConfig(shares=(0.3,))
    cfg = BacktestConfig.from_mapping({"scenario": "no-ps", "risk_ratio": "none", "shares": "0.01,0.02"})
    assert cfg.scenario == "no_ps" and math.isinf(cfg.risk_ratio) and cfg.shares == (0.01, 0.02)
    with pytest.raises(InvalidConfig):
        BacktestConfig.from_mapping({"bogus": "1"})


@pytest.fixture(scope="module")
def market():
    return generate_synthetic_market(SyntheticConfig(n_days=45), seed=3)


@pytest.fixture(scope="module")
def oracle_book(market):
    cfg = BacktestConfig(train_days=30, retrain_days=10, oracle=True, n_samples=10)
    return cfg, build_forecast_book(market, cfg, 0)


def test_insufficient_history(market):
    with pytest.raises(InsufficientHistory):
        build_forecast_book(market, BacktestConfig(train_days=40, retrain_days=10, n_samples=10), 0)


def test_oracle_profit(oracle_book):
    cfg, book = oracle_book
    res = simulate(book, cfg, "no_ps")
    assert math.fsum(r.net for r in res) > 0
    assert book.violations == []


def test_zero_budget_is_flat(oracle_book):
    cfg, book = oracle_book
    res = simulate(book, replace(cfg, budget=0.0), "full_ps")
    assert all(r.net == 0.0 and r.n_bids == 0 for r in res)
    conv = convergence_report(book, res)
    assert all(a == b for a, b in conv.values())


def test_identical_budget_identical_results(oracle_book):
    cfg, book = oracle_book
    fixed = replace(cfg, budget=200.0)
    a = simulate(book, fixed, "full_ps", share=0.01)
    b = simulate(book, fixed, "full_ps", share=0.1)
    assert pnl_csv(a) == pnl_csv(b)


def _sloped(book, days=4):
    out = [replace(d, pwl=tuple(_curve(-0.5, p.x_lo, p.x_hi, h) for h, p in enumerate(d.pwl)))
           for d in book.days[:days]]
    return ForecastBook(book.nodes, out)


def test_scenarios_share_decisions(oracle_book):
    cfg, book = oracle_book
    b2 = _sloped(book)
    part = simulate(b2, cfg, "partial_ps")
    nops = simulate(b2, cfg, "no_ps")
    for p, n in zip(part, nops):
        assert [(e.hour, e.node, e.side) for e in p.entries] == [(e.hour, e.node, e.side) for e in n.entries]


def test_small_share_approaches_no_ps(oracle_book):
    cfg, book = oracle_book
    b2 = _sloped(book)
    gaps = []
    for s in (0.002, 0.05):
        full = profit_per_dollar(simulate(b2, cfg, "full_ps", share=s))
        nops = profit_per_dollar(simulate(b2, cfg, "no_ps", share=s))
        gaps.append(abs(full - nops) / abs(nops))
    assert gaps[0] < gaps[1]


def test_firewall_flags_future_reads(market):
    fw = TemporalFirewall(market)
    day = market.panel.hours[24 * 20]
    fw.history(day, "train", 10)
    fw.realized(day)
    assert fw.violations() == []
    fw._span(day, "train", day - np.timedelta64(1, "D"), day + np.timedelta64(1, "h"))
    assert len(fw.violations()) == 1


FAST = dict(train_days=30, retrain_days=2, n_samples=10, hidden_units=(8, 4), epochs=2, batch_size=256,
            gbt_rounds=5, gbt_depth=2, max_test_days=3, node_limit=3)


def test_learned_pipeline_small(market):
    cfg = BacktestConfig(**FAST)
    rep = run_backtest(market, cfg, seed=1)
    assert len(rep.results) == 3 and rep.firewall_violations == 0
    assert len(rep.cumulative_net) == 3
    again = run_backtest(market, cfg, seed=1)
    assert pnl_csv(rep.results) == pnl_csv(again.results)
    assert metrics_txt(rep) == metrics_txt(again)
    text = metrics_txt(rep)
    assert "profit_per_dollar = " in text and "firewall_violations = 0" in text


def test_efficiency_sweep_reports_flag(oracle_book, market):
    cfg, book = oracle_book
    pts, flag = efficiency_sweep(market, cfg, shares=(0.01, 0.02), book=ForecastBook(book.nodes, book.days[:3]))
    assert [p.share for p in pts] == [0.01, 0.02]
    assert isinstance(flag, bool)
