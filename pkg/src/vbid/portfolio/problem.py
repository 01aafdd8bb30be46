"""Explicit mixed-integer quadratically-constrained model of a portfolio instance.

The solvers in this package never read this object (they work on the
instance directly); it exists so a solution can be written out in full,
diffed, handed to an external solver, and checked constraint by constraint.

Variables per hour ``h``: ``zi[i,h]``, ``zd[i,h]`` (binary lots),
``d[j,h]`` (interval indicator), ``v[j,h]``, ``w[j,h]`` (sensitivity
slacks), ``alpha[h]`` and ``q[h,k]`` (CVaR auxiliaries).  The net position
``x[h] = sum_i zi - sum_i zd`` is an affine expression, not a variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..errors import ShapeMismatch
from .instance import PortfolioInstance, loss_samples
from .risk import empirical_var

CHECK_TOL = 1e-6


class Variable(NamedTuple):
    name: str
    lo: float
    hi: float
    integer: bool


class Constraint(NamedTuple):
    """``sum(coef * var) + quad * x[hour]**2  <sense>  rhs``; ``quad`` is 0 for linear rows."""
    name: str
    terms: tuple        # ((var_name, coef), ...)
    sense: str          # "<=", ">=", "=="
    rhs: float
    quad: float = 0.0
    hour: int = -1


def _zi(i, h):
    return f"zi[{i},{h}]"


def _zd(i, h):
    return f"zd[{i},{h}]"


@dataclass(eq=False)
class MiqcpProblem:
    instance: PortfolioInstance
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)   # maximised

    def counts(self):
        kinds = {}
        for v in self.variables:
            key = v.name.split("[", 1)[0]
            kinds[key] = kinds.get(key, 0) + 1
        return kinds

    @property
    def n_variables(self):
        return len(self.variables)

    def dump(self):
        """Plain-text listing: variables with bounds, objective, constraints."""
        out = ["maximize"]
        out.append("  " + " ".join(f"{c:+.17g} {n}" for n, c in self.objective.items()))
        out.append("variables")
        for v in self.variables:
            out.append(f"  {v.name} {'int' if v.integer else 'real'} [{v.lo:.17g}, {v.hi:.17g}]")
        out.append("constraints")
        for c in self.constraints:
            lhs = " ".join(f"{coef:+.17g} {n}" for n, coef in c.terms)
            if c.quad:
                lhs += f" {c.quad:+.17g} x[{c.hour}]^2"
            out.append(f"  {c.name}: {lhs} {c.sense} {c.rhs:.17g}")
        out.append("where")
        inst = self.instance
        for h in range(inst.n_hours):
            terms = [f"+{_zi(i, h)}" for i in range(inst.n_nodes)] + [f"-{_zd(i, h)}" for i in range(inst.n_nodes)]
            out.append(f"  x[{h}] = {' '.join(terms)}")
        return "\n".join(out) + "\n"

    def check(self, values, tol=CHECK_TOL):
        """Names of violated bounds/constraints for a full assignment ``values``."""
        inst = self.instance
        bad = []
        for v in self.variables:
            val = values[v.name]
            if val < v.lo - tol or val > v.hi + tol:
                bad.append(f"bound {v.name}")
            if v.integer and abs(val - round(val)) > tol:
                bad.append(f"integrality {v.name}")
        x = [sum(values[_zi(i, h)] for i in range(inst.n_nodes)) - sum(values[_zd(i, h)] for i in range(inst.n_nodes))
             for h in range(inst.n_hours)]
        for c in self.constraints:
            lhs = sum(coef * values[n] for n, coef in c.terms)
            if c.quad:
                lhs += c.quad * x[c.hour] ** 2
            slack = tol * max(1.0, abs(c.rhs))
            ok = {"<=": lhs <= c.rhs + slack, ">=": lhs >= c.rhs - slack, "==": abs(lhs - c.rhs) <= slack}[c.sense]
            if not ok:
                bad.append(c.name)
        return bad

    def objective_value(self, values):
        return float(sum(c * values[n] for n, c in self.objective.items()))


def build_problem(inst: PortfolioInstance) -> MiqcpProblem:
    N, H, Ns = inst.n_nodes, inst.n_hours, inst.n_samples
    prob = MiqcpProblem(inst)
    V, C, obj = prob.variables, prob.constraints, prob.objective
    m_inc, m_dec = inst.margins()
    for h in range(H):
        for i in range(N):
            V.append(Variable(_zi(i, h), 0.0, 1.0, True))
            V.append(Variable(_zd(i, h), 0.0, 1.0, True))
            obj[_zi(i, h)] = float(m_inc[i, h])
            obj[_zd(i, h)] = float(m_dec[i, h])
    for h, p in enumerate(inst.pwl):
        for j in range(p.n_segments):
            V.append(Variable(f"d[{j},{h}]", 0.0, 1.0, True))
            V.append(Variable(f"v[{j},{h}]", -np.inf, np.inf, False))
            V.append(Variable(f"w[{j},{h}]", -np.inf, np.inf, False))
            obj[f"w[{j},{h}]"] = 1.0
    for h in range(H):
        V.append(Variable(f"alpha[{h}]", -np.inf, np.inf, False))
        for k in range(Ns):
            V.append(Variable(f"q[{h},{k}]", 0.0, np.inf, False))

    def xterms(h, coef=1.0):
        return tuple([(_zi(i, h), coef) for i in range(N)] + [(_zd(i, h), -coef) for i in range(N)])

    C.append(Constraint("budget", tuple((n, float(c)) for i in range(N) for h in range(H)
                                        for n, c in ((_zi(i, h), inst.prox_inc[i, h]), (_zd(i, h), inst.prox_dec[i, h]))),
                        "<=", float(inst.budget)))
    scale = 1.0 / ((1.0 - inst.beta) * Ns)
    C.append(Constraint("risk", tuple([(f"alpha[{h}]", 1.0) for h in range(H)]
                                      + [(f"q[{h},{k}]", scale) for h in range(H) for k in range(Ns)]),
                        "<=", float(inst.risk_limit)))
    for h in range(H):
        ri, rd = inst.sample_returns(h)
        for k in range(Ns):
            # q >= f - alpha with f = -sum(zi * ri + zd * rd)
            terms = [(f"q[{h},{k}]", 1.0), (f"alpha[{h}]", 1.0)]
            terms += [(_zi(i, h), float(ri[k, i])) for i in range(N)] + [(_zd(i, h), float(rd[k, i])) for i in range(N)]
            C.append(Constraint(f"tail[{h},{k}]", tuple(terms), ">=", 0.0))
        if inst.exclusive:
            for i in range(N):
                C.append(Constraint(f"excl[{i},{h}]", ((_zi(i, h), 1.0), (_zd(i, h), 1.0)), "<=", 1.0))
    for h, p in enumerate(inst.pwl):
        S = p.big_m
        ends = p.ends
        C.append(Constraint(f"onehot[{h}]", tuple((f"d[{j},{h}]", 1.0) for j in range(p.n_segments)), "==", 1.0))
        C.append(Constraint(f"xlo[{h}]", xterms(h), ">=", p.x_lo))
        C.append(Constraint(f"xhi[{h}]", xterms(h), "<=", p.x_hi))
        for j in range(p.n_segments):
            d, v, w = f"d[{j},{h}]", f"v[{j},{h}]", f"w[{j},{h}]"
            # c_j - S(1-d) <= x <= c_{j+1} + S(1-d)
            C.append(Constraint(f"ivlo[{j},{h}]", xterms(h) + ((d, -S),), ">=", float(p.c[j]) - S))
            C.append(Constraint(f"ivhi[{j},{h}]", xterms(h) + ((d, S),), "<=", float(ends[j]) + S))
            # v <= a x^2 + b x
            C.append(Constraint(f"sens[{j},{h}]", ((v, 1.0),) + xterms(h, -float(p.b[j])), "<=", 0.0,
                                quad=-float(p.a[j]), hour=h))
            # -S d <= w <= S d
            C.append(Constraint(f"wlo[{j},{h}]", ((w, 1.0), (d, S)), ">=", 0.0))
            C.append(Constraint(f"whi[{j},{h}]", ((w, 1.0), (d, -S)), "<=", 0.0))
            # -S(1-d) <= w - v <= S(1-d)
            C.append(Constraint(f"wvlo[{j},{h}]", ((w, 1.0), (v, -1.0), (d, -S)), ">=", -S))
            C.append(Constraint(f"wvhi[{j},{h}]", ((w, 1.0), (v, -1.0), (d, S)), "<=", S))
    return prob


def complete_decision(prob: MiqcpProblem, z_inc, z_dec):
    """Fill every auxiliary variable optimally for fixed lots.

    ``d`` marks the interval holding ``x`` (half-open, so a shared boundary
    belongs to the right-hand interval), ``v`` sits at its bound
    ``a x^2 + b x``, ``w`` equals ``v`` on the active interval and 0
    elsewhere, ``alpha`` is the VaR and ``q`` the hinge excesses.
    """
    inst = prob.instance
    z_inc = np.asarray(z_inc)
    z_dec = np.asarray(z_dec)
    if z_inc.shape != (inst.n_nodes, inst.n_hours) or z_dec.shape != z_inc.shape:
        raise ShapeMismatch("decision arrays must be (nodes, hours)")
    vals = {}
    for h in range(inst.n_hours):
        for i in range(inst.n_nodes):
            vals[_zi(i, h)] = float(z_inc[i, h])
            vals[_zd(i, h)] = float(z_dec[i, h])
    x = z_inc.sum(axis=0) - z_dec.sum(axis=0)
    losses = loss_samples(inst, z_inc, z_dec)
    for h, p in enumerate(inst.pwl):
        xh = float(x[h])
        active = int(p.segment_of(xh)) if p.x_lo <= xh <= p.x_hi else 0
        for j in range(p.n_segments):
            v = float(p.a[j] * xh * xh + p.b[j] * xh)
            vals[f"d[{j},{h}]"] = 1.0 if j == active else 0.0
            vals[f"v[{j},{h}]"] = v
            vals[f"w[{j},{h}]"] = v if j == active else 0.0
        alpha = empirical_var(losses[h], inst.beta)
        vals[f"alpha[{h}]"] = alpha
        for k in range(inst.n_samples):
            vals[f"q[{h},{k}]"] = max(0.0, float(losses[h, k]) - alpha)
    return vals
