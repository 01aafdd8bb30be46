"""A short rolling backtest on a synthetic market.

Uses a reduced configuration so it finishes in well under a minute; the
default configuration trains on a full year and runs a month of test days.

    python demos/04_backtest.py
"""
import logging

from vbid.backtest import (BacktestConfig, build_forecast_book, metrics_txt, report_from_results, simulate)
from vbid.market import SyntheticConfig, generate_synthetic_market

logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

ds = generate_synthetic_market(SyntheticConfig(n_days=100), seed=2)
cfg = BacktestConfig(train_days=90, retrain_days=5, n_samples=20, hidden_units=(32, 16), epochs=30,
                     batch_size=512, gbt_rounds=40, max_test_days=10)
book = build_forecast_book(ds, cfg, seed=2)
print(f"{len(book.days)} test days, retrained on {len(book.retrain_days)} of them, "
      f"firewall violations {len(book.violations)}")

# no_ps settles at the observed spread, as if the bids moved nothing; partial_ps
# makes the same choices but pays the price response; full_ps plans around it.
# With a binding budget all three often hold the same number of lots.
for scenario in ("no_ps", "partial_ps", "full_ps"):
    res = simulate(book, cfg, scenario)
    rep = report_from_results(book, cfg, scenario, cfg.share, res)
    print(f"{scenario:>10}: net {rep.total_net:9.2f}  bids {sum(r.n_bids for r in res):4d}  "
          f"per dollar {rep.profit_per_dollar:.3f}")

print()
print(metrics_txt(rep), end="")
