"""Random instance builders shared by the test modules."""

import numpy as np

from vbid.market import CostSchedule
from vbid.portfolio import PortfolioInstance
from vbid.sensitivity import PwlSensitivity


def random_pwl(rng, hour=0, max_segments=3):
    x_lo = -float(rng.integers(1, 4)) - rng.uniform(0, 0.5)
    x_hi = float(rng.integers(1, 4)) + rng.uniform(0, 0.5)
    k = int(rng.integers(1, max_segments + 1))
    inner = np.sort(rng.uniform(x_lo, x_hi, k - 1))
    c = np.concatenate([[x_lo], inner])
    if np.any(np.diff(c) <= 1e-6):
        c = np.array([x_lo])
    a = -rng.uniform(0, 4, len(c)) * (rng.random(len(c)) < 0.8)
    # continuous curve: carry the intercept across each breakpoint
    b = np.zeros(len(c))
    for j in range(1, len(c)):
        b[j] = a[j - 1] * c[j] + b[j - 1] - a[j] * c[j]
    j0 = int(np.searchsorted(c, 0.0, side="right") - 1)
    b = b - (a[j0] * 0.0 + b[j0])
    return PwlSensitivity(hour, c, a, b, x_lo, x_hi)


def random_instance(rng, max_nodes=3, max_hours=2, max_samples=5, exclusive=None):
    while True:
        N = int(rng.integers(1, max_nodes + 1))
        H = int(rng.integers(1, max_hours + 1))
        if 2 * N * H <= 12:
            break
    Ns = int(rng.integers(1, max_samples + 1))
    E = rng.normal(0, 8, (N, H))
    samples = E.T[:, None, :] + rng.normal(0, 10, (H, Ns, N))
    costs = CostSchedule(float(rng.uniform(0, 2)), float(rng.uniform(0, 2)),
                         float(rng.uniform(0.5, 3)), float(rng.uniform(0.5, 3)))
    budget = float(rng.uniform(0, 2 * N * H * 3))
    risk = float(rng.uniform(0, 60))
    excl = bool(rng.random() < 0.7) if exclusive is None else exclusive
    return PortfolioInstance(E, tuple(random_pwl(rng, h) for h in range(H)), samples, costs, budget, risk,
                             beta=float(rng.choice([0.5, 0.8, 0.9, 0.95])), exclusive=excl)


CRITERIA = {
    1: "solver oracle equivalence",
    2: "CVaR duality",
    3: "global monotonicity",
    4: "unconstrained equivalence",
    5: "gradient checks",
    6: "relaxation tightness",
    7: "full vs partial sensitivity profit",
    8: "efficiency curve shape",
    9: "scaling round trip and spread identity",
    10: "backtest determinism",
}
ACCEPTANCE = {}


def record(n, ok, detail):
    """Keep a criterion outcome for the end-of-run summary and echo it."""
    ok = bool(ok)
    ACCEPTANCE[n] = (ok, detail)
    print(f"{'PASS' if ok else 'FAIL'} {n:>2} {CRITERIA[n]}: {detail}")
    return ok
