"""Hourly piecewise-linear spread shift as a function of the trader's net position.

Segment ``j`` covers ``[c[j], c[j+1])`` (the last one is closed at ``x_hi``)
and evaluates to ``a[j] * x + b[j]``.  Curves are anchored so that the shift
at ``x = 0`` is zero: a zero net position leaves the reference spread as it
would have been without the trader.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InfeasibleBounds, InvalidPwl, OutOfDomain, ParseError

CONTINUITY_TOL = 1e-9
BIG_M_FACTOR = 10.0


@dataclass(frozen=True)
class SensitivityBounds:
    x_lo: float
    x_hi: float

    def __post_init__(self):
        if not self.x_lo < 0 < self.x_hi:
            raise InfeasibleBounds(f"bounds must satisfy x_lo < 0 < x_hi, got [{self.x_lo}, {self.x_hi}]")

    @classmethod
    def from_history(cls, net_quantity):
        """Min/max of historical net cleared quantity, widened to straddle 0."""
        q = np.asarray(net_quantity, dtype=np.float64)
        lo, hi = float(q.min()), float(q.max())
        return cls(min(lo, -1.0), max(hi, 1.0))


def segment_extreme(a, b, lo, hi):
    """max |a x^2 + b x| over [lo, hi]."""
    pts = [lo, hi]
    if a != 0:
        v = -b / (2 * a)
        if lo < v < hi:
            pts.append(v)
    return max(abs(a * x * x + b * x) for x in pts)


def default_big_m(c, a, b, x_lo, x_hi):
    """Ten times the largest of |x| and |x * shift(x)| over the domain.

    Covering ``|x * shift(x)|`` (not just ``|shift|``) keeps the relaxed
    interval constraints feasible on inactive intervals.
    """
    worst = max(abs(x_lo), abs(x_hi))
    for aj, bj in zip(a, b):
        worst = max(worst, segment_extreme(aj, bj, x_lo, x_hi))
    return BIG_M_FACTOR * max(worst, 1.0)


@dataclass(frozen=True, eq=False)
class PwlSensitivity:
    hour: int
    c: np.ndarray
    a: np.ndarray
    b: np.ndarray
    x_lo: float
    x_hi: float
    big_m: float | None = None
    anchor_value: float = 0.0     # absolute reference spread the curve was re-based by

    def __post_init__(self):
        for name in ("c", "a", "b"):
            arr = np.array(getattr(self, name), dtype=np.float64).ravel()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.c) == len(self.a) == len(self.b) >= 1):
            raise InvalidPwl("c, a and b must have the same nonzero length")
        object.__setattr__(self, "x_lo", float(self.x_lo))
        object.__setattr__(self, "x_hi", float(self.x_hi))
        if self.big_m is None:
            object.__setattr__(self, "big_m", default_big_m(self.c, self.a, self.b, self.x_lo, self.x_hi))
        object.__setattr__(self, "big_m", float(self.big_m))

    @property
    def n_segments(self):
        return len(self.c)

    @property
    def ends(self):
        return np.append(self.c[1:], self.x_hi)

    def segment_of(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.any((x < self.x_lo) | (x > self.x_hi)) or np.any(np.isnan(x)):
            raise OutOfDomain(f"x outside [{self.x_lo}, {self.x_hi}] at hour {self.hour}")
        return np.searchsorted(self.c, x, side="right") - 1

    def bounds(self):
        return SensitivityBounds(self.x_lo, self.x_hi)

    def flat(self):
        return flat_pwl(self.hour, self.x_lo, self.x_hi)


def flat_pwl(hour, x_lo, x_hi):
    """Zero shift everywhere: the no-sensitivity curve."""
    return PwlSensitivity(hour, [x_lo], [0.0], [0.0], x_lo, x_hi)


def shift_at(pwl: PwlSensitivity, x):
    """Spread shift ($/MWh) at net position ``x``; scalar in, scalar out."""
    j = pwl.segment_of(x)
    out = pwl.a[j] * np.asarray(x, dtype=np.float64) + pwl.b[j]
    return float(out) if np.ndim(out) == 0 else out


def shifted_nodal_spread(base_spread, pwl, x):
    """Nodal spreads translated by the reference-node shift."""
    out = np.asarray(base_spread, dtype=np.float64) + shift_at(pwl, x)
    return float(out) if np.ndim(out) == 0 else out


def validate(pwl: PwlSensitivity, tol=CONTINUITY_TOL):
    """List of human-readable invariant violations; empty when valid."""
    out = []
    c, a, b = pwl.c, pwl.a, pwl.b
    if not np.all(np.isfinite(np.concatenate([c, a, b]))):
        out.append("non-finite coefficients")
        return out
    if not pwl.x_lo < 0 < pwl.x_hi:
        out.append("bounds must straddle zero")
    if c[0] != pwl.x_lo:
        out.append("first interval must start at x_lo")
    if np.any(np.diff(c) <= 0) or c[-1] >= pwl.x_hi:
        out.append("interval starts must be strictly increasing inside the domain")
    for j in np.flatnonzero(a > 0):
        out.append(f"positive slope at {j}")
    for j in range(len(c) - 1):
        x = c[j + 1]
        gap = abs((a[j] * x + b[j]) - (a[j + 1] * x + b[j + 1]))
        if gap > tol * max(1.0, abs(x)):
            out.append(f"continuity at {j}: gap {gap:.3g}")
    if pwl.x_lo < 0 < pwl.x_hi:
        z = shift_at(pwl, 0.0)
        if abs(z) > tol:
            out.append(f"shift at zero is {z!r}, expected 0")
    if not pwl.big_m > 0:
        out.append("big_m must be > 0")
    return out


def check(pwl):
    problems = validate(pwl)
    if problems:
        raise InvalidPwl(f"hour {pwl.hour}: " + "; ".join(problems))
    return pwl


def write_pwl_csv(pwls, path):
    """``hour,j,c,a,b`` rows; each hour ends with a ``bounds`` row holding x_lo, x_hi, big_m."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hour", "j", "c", "a", "b"])
        for p in pwls:
            for j in range(p.n_segments):
                w.writerow([p.hour, j, repr(float(p.c[j])), repr(float(p.a[j])), repr(float(p.b[j]))])
            w.writerow([p.hour, "bounds", repr(float(p.x_lo)), repr(float(p.x_hi)), repr(float(p.big_m))])
    return Path(path)


def read_pwl_csv(path):
    segs = {}
    bounds = {}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != ["hour", "j", "c", "a", "b"]:
            raise ParseError(f"{path}: bad PWL header {header}")
        for lineno, row in enumerate(r, start=2):
            try:
                hour = int(row[0])
                vals = tuple(float(v) for v in row[2:5])
                if row[1] == "bounds":
                    bounds[hour] = vals
                else:
                    segs.setdefault(hour, []).append((int(row[1]),) + vals)
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: malformed row {row}") from None
    out = []
    for hour in sorted(segs):
        if hour not in bounds:
            raise ParseError(f"{path}: hour {hour} has no bounds row")
        rows = sorted(segs[hour])
        if [r[0] for r in rows] != list(range(len(rows))):
            raise ParseError(f"{path}: hour {hour} segment indices are not 0..M-1")
        lo, hi, m = bounds[hour]
        out.append(check(PwlSensitivity(hour, [r[1] for r in rows], [r[2] for r in rows],
                                        [r[3] for r in rows], lo, hi, m)))
    return out
