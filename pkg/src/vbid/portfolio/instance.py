"""Portfolio instance data and direct evaluation of bid decisions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import InfeasibleBounds, InvalidConfig, InvalidPwl, ShapeMismatch
from ..market import CostSchedule
from ..sensitivity import PwlSensitivity, shift_at, validate
from .risk import empirical_cvar

FEAS_TOL = 1e-9


def expected_bid_profit(spread, side, costs: CostSchedule):
    """Per-MWh profit of a cleared INC or DEC at the given spread."""
    if side == "inc":
        return spread - costs.gamma_inc
    if side == "dec":
        return -spread - costs.gamma_dec
    raise InvalidConfig(f"side must be 'inc' or 'dec', got {side!r}")


@dataclass(frozen=True, eq=False)
class PortfolioInstance:
    """One operating day (or a slice of it).

    ``expected_spread`` is (nodes, hours); ``samples`` is
    (hours, n_samples, nodes) of historical spreads; ``pwl[h]`` is the
    shift curve of hour ``h``.  Collateral per lot defaults to the
    schedule's scalar values.
    """

    expected_spread: np.ndarray
    pwl: tuple
    samples: np.ndarray
    costs: CostSchedule
    budget: float
    risk_limit: float
    beta: float = 0.95
    y_forecast: np.ndarray | None = None
    exclusive: bool = True
    prox_inc: np.ndarray | None = None
    prox_dec: np.ndarray | None = None
    nodes: tuple = ()
    hours: tuple = ()

    def __post_init__(self):
        E = np.asarray(self.expected_spread, dtype=np.float64)
        if E.ndim != 2:
            raise ShapeMismatch("expected_spread must be (nodes, hours)")
        N, H = E.shape
        S = np.asarray(self.samples, dtype=np.float64)
        if S.ndim != 3 or S.shape[0] != H or S.shape[2] != N or S.shape[1] < 1:
            raise ShapeMismatch(f"samples must be (hours={H}, n_samples>=1, nodes={N}), got {S.shape}")
        if len(self.pwl) != H:
            raise ShapeMismatch(f"need one sensitivity curve per hour ({H}), got {len(self.pwl)}")
        for p in self.pwl:
            if not p.x_lo <= 0 <= p.x_hi:
                raise InfeasibleBounds(f"hour {p.hour}: bounds [{p.x_lo}, {p.x_hi}] exclude 0")
            problems = validate(p)
            if problems:
                raise InvalidPwl(f"hour {p.hour}: " + "; ".join(problems))
        if not 0 < self.beta < 1:
            raise InvalidConfig("beta must lie in (0, 1)")
        if not self.budget >= 0 or not self.risk_limit >= 0:
            raise InvalidConfig("budget and risk limit must be >= 0")
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(S))):
            raise ShapeMismatch("spreads must be finite")
        pi = np.broadcast_to(self.costs.prox_inc if self.prox_inc is None else self.prox_inc, (N, H))
        pd = np.broadcast_to(self.costs.prox_dec if self.prox_dec is None else self.prox_dec, (N, H))
        if np.any(pi < 0) or np.any(pd < 0):
            raise InvalidConfig("collateral must be >= 0")
        y = np.zeros(H) if self.y_forecast is None else np.asarray(self.y_forecast, dtype=np.float64)
        for name, val in (("expected_spread", E), ("samples", S), ("prox_inc", np.array(pi, dtype=np.float64)),
                          ("prox_dec", np.array(pd, dtype=np.float64)), ("y_forecast", y)):
            val = np.array(val)
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "pwl", tuple(self.pwl))
        if not self.nodes:
            object.__setattr__(self, "nodes", tuple(f"n{i}" for i in range(N)))
        if not self.hours:
            object.__setattr__(self, "hours", tuple(range(H)))

    @property
    def n_nodes(self):
        return self.expected_spread.shape[0]

    @property
    def n_hours(self):
        return self.expected_spread.shape[1]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def n_binaries(self):
        return 2 * self.n_nodes * self.n_hours

    def margins(self):
        """Per-lot expected profit, each (nodes, hours)."""
        return (expected_bid_profit(self.expected_spread, "inc", self.costs),
                expected_bid_profit(self.expected_spread, "dec", self.costs))

    def sample_returns(self, h):
        """Per-lot realized returns under each sample of hour ``h``: two (samples, nodes) arrays."""
        S = self.samples[h]
        return S - self.costs.gamma_inc, -S - self.costs.gamma_dec

    def g(self, h, x):
        """Sensitivity term ``x * shift(x)`` of hour ``h``."""
        return float(x) * shift_at(self.pwl[h], float(x))

    def without_sensitivity(self):
        flat = tuple(p.flat() for p in self.pwl)
        return PortfolioInstance(self.expected_spread, flat, self.samples, self.costs, self.budget,
                                 self.risk_limit, self.beta, self.y_forecast, self.exclusive,
                                 self.prox_inc, self.prox_dec, self.nodes, self.hours)

    def scaled(self, k):
        """Spreads, fees, slopes and intercepts multiplied by ``k > 0``; limits by ``k`` too."""
        costs = CostSchedule(self.costs.gamma_inc * k, self.costs.gamma_dec * k,
                             self.costs.prox_inc, self.costs.prox_dec)
        pwl = tuple(PwlSensitivity(p.hour, p.c, p.a * k, p.b * k, p.x_lo, p.x_hi) for p in self.pwl)
        return PortfolioInstance(self.expected_spread * k, pwl, self.samples * k, costs, self.budget,
                                 self.risk_limit * k, self.beta, self.y_forecast, self.exclusive,
                                 self.prox_inc, self.prox_dec, self.nodes, self.hours)


class Evaluation(NamedTuple):
    objective: float
    x: np.ndarray
    collateral: float
    cvar: np.ndarray            # per hour
    hour_value: np.ndarray      # per hour, linear part plus sensitivity term
    in_domain: bool
    budget_ok: bool
    risk_ok: bool
    exclusive_ok: bool

    @property
    def feasible(self):
        return self.in_domain and self.budget_ok and self.risk_ok and self.exclusive_ok


def loss_samples(inst: PortfolioInstance, z_inc, z_dec):
    """(hours, samples) losses of the decisions, one row per hour."""
    z_inc = np.asarray(z_inc, dtype=np.float64)
    z_dec = np.asarray(z_dec, dtype=np.float64)
    out = np.empty((inst.n_hours, inst.n_samples))
    for h in range(inst.n_hours):
        ri, rd = inst.sample_returns(h)
        out[h] = -(ri @ z_inc[:, h] + rd @ z_dec[:, h])
    return out


def within(value, limit, tol=FEAS_TOL):
    return value <= limit + tol * max(1.0, abs(limit))


def evaluate(inst: PortfolioInstance, z_inc, z_dec) -> Evaluation:
    """Objective and constraint status of 0/1 decisions, computed directly."""
    z_inc = np.asarray(z_inc, dtype=np.int64)
    z_dec = np.asarray(z_dec, dtype=np.int64)
    shape = (inst.n_nodes, inst.n_hours)
    if z_inc.shape != shape or z_dec.shape != shape:
        raise ShapeMismatch(f"decisions must be {shape}")
    if np.any((z_inc < 0) | (z_inc > 1) | (z_dec < 0) | (z_dec > 1)):
        raise InvalidConfig("decisions must be 0/1")
    m_inc, m_dec = inst.margins()
    x = (z_inc.sum(axis=0) - z_dec.sum(axis=0)).astype(np.float64)
    in_domain = all(p.x_lo <= x[h] <= p.x_hi for h, p in enumerate(inst.pwl))
    hv = np.empty(inst.n_hours)
    cv = np.empty(inst.n_hours)
    losses = loss_samples(inst, z_inc, z_dec)
    for h in range(inst.n_hours):
        lin = float(m_inc[:, h] @ z_inc[:, h] + m_dec[:, h] @ z_dec[:, h])
        sens = inst.g(h, x[h]) if in_domain else 0.0
        hv[h] = lin + sens
        cv[h] = empirical_cvar(losses[h], inst.beta) if (z_inc[:, h].any() or z_dec[:, h].any()) else 0.0
    coll = float(np.sum(inst.prox_inc * z_inc) + np.sum(inst.prox_dec * z_dec))
    return Evaluation(float(hv.sum()), x, coll, cv, hv, in_domain,
                      within(coll, inst.budget), within(float(cv.sum()), inst.risk_limit),
                      (not inst.exclusive) or not np.any(z_inc + z_dec > 1))
