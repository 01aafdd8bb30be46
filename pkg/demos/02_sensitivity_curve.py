"""Fit the monotone boosted model and turn one hour into a shift curve.

    python demos/02_sensitivity_curve.py
"""
import numpy as np

from vbid import gbt
from vbid.backtest import _gbt_matrix
from vbid.market import SyntheticConfig, generate_synthetic_market
from vbid.sensitivity import SensitivityBounds, shift_at, validate

ds = generate_synthetic_market(SyntheticConfig(n_days=120), seed=1)
X = _gbt_matrix(ds, ds.vbids.net)          # column 0 is the market net quantity
y = ds.panel.ref_spread

params = gbt.GbtParams(num_rounds=60, max_depth=3, monotone_feature=0)
ens = gbt.fit(X, y, params)
print(f"{len(ens.trees)} trees, training mse {ens.train_loss[0]:.2f} -> {ens.train_loss[-1]:.2f}")

# along the constrained column the ensemble never rises
grid = np.tile(X[500], (400, 1))
grid[:, 0] = np.linspace(net_lo := ds.vbids.net.min(), ds.vbids.net.max(), 400)
pred = ens.predict(grid)
print("largest step up along net quantity:", float(np.max(np.diff(pred))))

# read off the curve for the context of hour 500, anchored at its net quantity
bounds = SensitivityBounds.from_history(ds.vbids.net)
y0 = float(ds.vbids.net[500])
pwl = gbt.fit_hourly_pwl(ens, X[500], y0, max(bounds.x_lo - y0, -5.0), min(bounds.x_hi - y0, 5.0), hour=0)
print(f"{pwl.n_segments} linear pieces on [{pwl.x_lo:.1f}, {pwl.x_hi:.1f}], problems: {validate(pwl) or 'none'}")
for x in (-4, -2, 0, 2, 4):
    if pwl.x_lo <= x <= pwl.x_hi:
        print(f"  x = {x:+d} MWh -> shift {shift_at(pwl, float(x)):+.3f} $/MWh")

print("\ndump head:")
print("\n".join(gbt.dumps(ens).splitlines()[:6]))
