"""Exact solvers for the lot-selection problem.

``solve_enumeration`` tries every assignment and is the reference for small
instances.  ``solve_branch_and_bound`` handles full operating days: each
node solves a linear relaxation in which the lots are continuous in [0, 1],
the CVaR terms keep their linear form, and the sensitivity term ``x * shift(x)``
of every hour is replaced by a variable capped by the upper concave envelope
of its values at the integer positions still reachable at that node.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from ..errors import Infeasible, NumericalError, TooManyBinaries
from .instance import PortfolioInstance, evaluate, within, FEAS_TOL
from .risk import cvar_rows, empirical_cvar, min_f_beta

log = logging.getLogger(__name__)

MAX_ENUM_BINARIES = 24
INT_TOL = 1e-7
GAP_TOL = 1e-9

# per-node states, in lexicographic order of (z_inc, z_dec)
_NONE, _DEC, _INC = 0, 1, 2


@dataclass
class SolutionReport:
    objective: float
    z_inc: np.ndarray
    z_dec: np.ndarray
    x: np.ndarray
    collateral: float
    cvar: np.ndarray
    budget_binding: bool
    risk_binding: bool
    solver: str
    status: str = "optimal"
    nodes: int = 0
    gap: float = 0.0
    bound: float = math.nan
    wall_time: float = 0.0

    @property
    def n_bids(self):
        return int(self.z_inc.sum() + self.z_dec.sum())

    def decisions(self, nodes=None, hours=None):
        """(hour, node, side) for every lot taken, hour-major."""
        N, H = self.z_inc.shape
        nodes = nodes or [str(i) for i in range(N)]
        hours = hours or list(range(H))
        out = []
        for h in range(H):
            for i in range(N):
                if self.z_inc[i, h]:
                    out.append((hours[h], nodes[i], "inc"))
                if self.z_dec[i, h]:
                    out.append((hours[h], nodes[i], "dec"))
        return out


def _report(inst, z_inc, z_dec, solver, **stats):
    ev = evaluate(inst, z_inc, z_dec)
    tol = FEAS_TOL * max(1.0, inst.budget)
    return SolutionReport(ev.objective, np.asarray(z_inc, dtype=np.int64), np.asarray(z_dec, dtype=np.int64), ev.x,
                          ev.collateral, ev.cvar,
                          budget_binding=ev.collateral >= inst.budget - tol and ev.collateral > 0,
                          risk_binding=float(ev.cvar.sum()) >= inst.risk_limit - FEAS_TOL * max(1.0, inst.risk_limit)
                          and bool(ev.cvar.any()),
                          solver=solver, **stats)


# -- enumeration ---------------------------------------------------------------

def _hour_table(inst, h):
    """Every in-domain pattern of hour ``h`` with its value, collateral and CVaR."""
    N = inst.n_nodes
    pats = np.array(list(itertools.product((_NONE, _DEC, _INC), repeat=N)), dtype=np.int64).reshape(-1, N)
    zi = (pats == _INC).astype(np.float64)
    zd = (pats == _DEC).astype(np.float64)
    x = zi.sum(axis=1) - zd.sum(axis=1)
    p = inst.pwl[h]
    keep = (x >= p.x_lo) & (x <= p.x_hi)
    pats, zi, zd, x = pats[keep], zi[keep], zd[keep], x[keep]
    m_inc, m_dec = inst.margins()
    g = np.array([inst.g(h, xv) for xv in x])
    value = zi @ m_inc[:, h] + zd @ m_dec[:, h] + g
    coll = zi @ inst.prox_inc[:, h] + zd @ inst.prox_dec[:, h]
    ri, rd = inst.sample_returns(h)
    losses = -(zi @ ri.T + zd @ rd.T)                 # (patterns, samples)
    cvar = cvar_rows(losses, inst.beta)
    cvar[(zi.sum(axis=1) + zd.sum(axis=1)) == 0] = 0.0
    return pats, value, coll, cvar, zi.sum(axis=1) + zd.sum(axis=1)


def solve_enumeration(inst: PortfolioInstance) -> SolutionReport:
    """Best assignment by exhaustive search.

    Ties go to fewer lots, then to the lexicographically smallest lot vector
    (hour-major, node, then INC before DEC).  Holding both an INC and a DEC
    at one node-hour is never better than holding neither (same position,
    extra fees, extra collateral, shifted-up losses), so only three states
    per node-hour are enumerated even when the exclusivity rule is off.
    """
    if inst.n_binaries > MAX_ENUM_BINARIES:
        raise TooManyBinaries(f"{inst.n_binaries} binaries exceed the enumeration limit of {MAX_ENUM_BINARIES}")
    t0 = time.perf_counter()
    tables = [_hour_table(inst, h) for h in range(inst.n_hours)]
    value = np.zeros(1)
    coll = np.zeros(1)
    risk = np.zeros(1)
    nb = np.zeros(1)
    for _, v, c, r, b in tables:
        value = (value[:, None] + v[None, :]).ravel()
        coll = (coll[:, None] + c[None, :]).ravel()
        risk = (risk[:, None] + r[None, :]).ravel()
        nb = (nb[:, None] + b[None, :]).ravel()
    ok = coll <= inst.budget + FEAS_TOL * max(1.0, inst.budget)
    ok &= risk <= inst.risk_limit + FEAS_TOL * max(1.0, inst.risk_limit)
    if not ok.any():
        raise Infeasible("no feasible assignment; the empty portfolio should always be feasible")
    idx = np.flatnonzero(ok)
    order = np.lexsort((idx, nb[idx], -value[idx]))
    best = int(idx[order[0]])
    # unravel the combined index into one pattern per hour
    sizes = [len(t[0]) for t in tables]
    picks = np.unravel_index(best, sizes)
    z_inc = np.zeros((inst.n_nodes, inst.n_hours), dtype=np.int64)
    z_dec = np.zeros_like(z_inc)
    for h, (t, k) in enumerate(zip(tables, picks)):
        z_inc[:, h] = t[0][k] == _INC
        z_dec[:, h] = t[0][k] == _DEC
    return _report(inst, z_inc, z_dec, "enumeration", nodes=int(value.size),
                   wall_time=time.perf_counter() - t0, bound=float(value[best]))


# -- branch and bound ----------------------------------------------------------

def upper_hull(xs, ys):
    """Vertices of the upper concave envelope of points sorted by x."""
    hull = []
    for p in zip(xs, ys):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # drop the middle point when it lies on or under the chord
            if (y2 - y1) * (p[0] - x1) <= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


class _Relaxation:
    """Static part of the LP; per-node hull rows and bounds are added on top."""

    def __init__(self, inst: PortfolioInstance):
        self.inst = inst
        N, H, Ns = inst.n_nodes, inst.n_hours, inst.n_samples
        self.N, self.H, self.Ns = N, H, Ns
        self.nz = 2 * N * H
        self.t0 = self.nz
        self.a0 = self.nz + H
        self.q0 = self.nz + 2 * H
        self.nv = self.q0 + H * Ns
        m_inc, m_dec = inst.margins()
        c = np.zeros(self.nv)
        c[0:self.nz:2] = -m_inc.T.ravel()
        c[1:self.nz:2] = -m_dec.T.ravel()
        c[self.t0:self.t0 + H] = -1.0
        self.c = c
        rows, cols, vals, rhs = [], [], [], []
        r = 0

        def add(cs, vs, b):
            nonlocal r
            rows.extend([r] * len(cs))
            cols.extend(cs)
            vals.extend(vs)
            rhs.append(b)
            r += 1

        zi = lambda i, h: 2 * (h * N + i)
        zd = lambda i, h: 2 * (h * N + i) + 1
        self.zi, self.zd = zi, zd
        add([zi(i, h) for h in range(H) for i in range(N)] + [zd(i, h) for h in range(H) for i in range(N)],
            [inst.prox_inc[i, h] for h in range(H) for i in range(N)]
            + [inst.prox_dec[i, h] for h in range(H) for i in range(N)], inst.budget)
        scale = 1.0 / ((1.0 - inst.beta) * Ns)
        add([self.a0 + h for h in range(H)] + list(range(self.q0, self.q0 + H * Ns)),
            [1.0] * H + [scale] * (H * Ns), inst.risk_limit)
        for h in range(H):
            ri, rd = inst.sample_returns(h)
            for k in range(Ns):
                # f - alpha - q <= 0
                add([zi(i, h) for i in range(N)] + [zd(i, h) for i in range(N)] + [self.a0 + h, self.q0 + h * Ns + k],
                    list(-ri[k]) + list(-rd[k]) + [-1.0, -1.0], 0.0)
            if inst.exclusive:
                for i in range(N):
                    add([zi(i, h), zd(i, h)], [1.0, 1.0], 1.0)
            p = inst.pwl[h]
            add([zi(i, h) for i in range(N)] + [zd(i, h) for i in range(N)], [1.0] * N + [-1.0] * N, p.x_hi)
            add([zi(i, h) for i in range(N)] + [zd(i, h) for i in range(N)], [-1.0] * N + [1.0] * N, -p.x_lo)
        self.A = sparse.csr_matrix((vals, (rows, cols)), shape=(r, self.nv))
        self.b = np.array(rhs)
        self._g = [dict() for _ in range(H)]

    def g(self, h, x):
        cache = self._g[h]
        if x not in cache:
            cache[x] = self.inst.g(h, x)
        return cache[x]

    def x_range(self, lo, hi, h):
        """Integer positions reachable in hour ``h`` under the lot bounds, clipped to the domain."""
        N = self.N
        inc = slice(2 * h * N, 2 * (h + 1) * N, 2)
        dec = slice(2 * h * N + 1, 2 * (h + 1) * N, 2)
        xmin = lo[inc].sum() - hi[dec].sum()
        xmax = hi[inc].sum() - lo[dec].sum()
        p = self.inst.pwl[h]
        return int(max(xmin, math.ceil(p.x_lo))), int(min(xmax, math.floor(p.x_hi)))

    def solve(self, lo, hi):
        """LP bound at a node; ``None`` if infeasible.  Returns (bound, z, t, ranges)."""
        N, H = self.N, self.H
        rows, cols, vals, rhs = [], [], [], []
        ranges = []
        r = 0
        for h in range(H):
            xl, xu = self.x_range(lo, hi, h)
            if xl > xu:
                return None
            ranges.append((xl, xu))
            xs = list(range(xl, xu + 1))
            hull = upper_hull(xs, [self.g(h, x) for x in xs])
            zcols = [self.zi(i, h) for i in range(N)] + [self.zd(i, h) for i in range(N)]
            if len(hull) == 1:
                rows.append(r)
                cols.append(self.t0 + h)
                vals.append(1.0)
                rhs.append(hull[0][1])
                r += 1
                continue
            for (x1, y1), (x2, y2) in zip(hull[:-1], hull[1:]):
                s = (y2 - y1) / (x2 - x1)
                # t - s * x <= y1 - s * x1
                rows.extend([r] * (2 * N + 1))
                cols.extend(zcols + [self.t0 + h])
                vals.extend([-s] * N + [s] * N + [1.0])
                rhs.append(y1 - s * x1)
                r += 1
        A = sparse.vstack([self.A, sparse.csr_matrix((vals, (rows, cols)), shape=(r, self.nv))], format="csr")
        b = np.concatenate([self.b, rhs])
        bounds = np.empty((self.nv, 2))
        bounds[:self.nz, 0] = lo
        bounds[:self.nz, 1] = hi
        bounds[self.nz:self.q0] = (-np.inf, np.inf)
        bounds[self.q0:] = (0.0, np.inf)
        res = linprog(self.c, A_ub=A, b_ub=b, bounds=bounds, method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise NumericalError(f"LP relaxation failed: {res.message}")
        return -res.fun, res.x[:self.nz], res.x[self.t0:self.t0 + H], ranges

    def unpack(self, z):
        zz = np.asarray(z).reshape(self.H, self.N, 2)
        return zz[:, :, 0].T.copy(), zz[:, :, 1].T.copy()


class _Greedy:
    """Adds lots one at a time in a given order while each addition helps and stays feasible."""

    def __init__(self, inst, g=None):
        self.inst = inst
        self.g = g or inst.g
        self.m_inc, self.m_dec = inst.margins()
        self.ret = [inst.sample_returns(h) for h in range(inst.n_hours)]

    def run(self, order):
        inst = self.inst
        N, H = inst.n_nodes, inst.n_hours
        z = np.zeros((H, N, 2), dtype=np.int64)
        x = np.zeros(H, dtype=np.int64)
        loss = np.zeros((H, inst.n_samples))
        cvar = np.zeros(H)
        g = np.zeros(H)
        coll = 0.0
        for idx in order:
            h, rem = divmod(int(idx), 2 * N)
            i, side = divmod(rem, 2)
            if z[h, i, side] or (inst.exclusive and z[h, i, 1 - side]):
                continue
            nx = x[h] + (1 if side == 0 else -1)
            p = inst.pwl[h]
            if not p.x_lo <= nx <= p.x_hi:
                continue
            margin = (self.m_inc if side == 0 else self.m_dec)[i, h]
            ng = self.g(h, int(nx))
            if margin + ng - g[h] <= 0:
                continue
            prox = (inst.prox_inc if side == 0 else inst.prox_dec)[i, h]
            if not within(coll + prox, inst.budget):
                continue
            r = self.ret[h][side][:, i]
            nl = loss[h] - r
            nc = empirical_cvar(nl, inst.beta)
            if not within(cvar.sum() - cvar[h] + nc, inst.risk_limit):
                continue
            z[h, i, side] = 1
            x[h], loss[h], cvar[h], g[h] = nx, nl, nc, ng
            coll += prox
        return z[:, :, 0].T.copy(), z[:, :, 1].T.copy()


def _key(ev, z_inc, z_dec):
    """Sort key: larger objective, then fewer lots, then lexicographically smaller lot vector."""
    flat = np.stack([z_inc.T, z_dec.T], axis=2).ravel()
    return (-ev.objective, int(flat.sum()), tuple(flat.tolist()))


def solve_branch_and_bound(inst: PortfolioInstance, node_limit=None, time_limit=None, mip_gap=0.0):
    """Best-first branch and bound.

    Stops early on ``node_limit`` (deterministic) or ``time_limit`` in
    seconds (not deterministic), returning the incumbent with its gap; the
    run also stops once the relative gap falls to ``mip_gap``.
    """
    t0 = time.perf_counter()
    relax = _Relaxation(inst)
    greedy = _Greedy(inst, relax.g)
    nz = relax.nz
    z0 = np.zeros((inst.n_nodes, inst.n_hours), dtype=np.int64)
    best_ev = evaluate(inst, z0, z0)
    if not best_ev.feasible:
        raise Infeasible("the empty portfolio is infeasible")
    best = (z0, z0.copy())
    best_key = _key(best_ev, *best)

    def offer(z_inc, z_dec):
        nonlocal best, best_key, best_ev
        ev = evaluate(inst, z_inc, z_dec)
        if not ev.feasible:
            return
        k = _key(ev, z_inc, z_dec)
        if k < best_key:
            best, best_key, best_ev = (z_inc, z_dec), k, ev

    m_inc, m_dec = inst.margins()
    margins = np.stack([m_inc.T, m_dec.T], axis=2).ravel()
    offer(*greedy.run(np.argsort(-margins, kind="stable")))

    lo0 = np.zeros(nz)
    hi0 = np.ones(nz)
    counter = itertools.count()
    root = relax.solve(lo0, hi0)
    n_nodes = 1
    status = "optimal"
    heap = []
    if root is not None:
        heapq.heappush(heap, (-root[0], next(counter), lo0, hi0, root))

    def gap_closed(bound):
        inc = best_ev.objective
        return bound <= inc + max(GAP_TOL, mip_gap * abs(inc))

    while heap:
        neg_bound, _, lo, hi, sol = heapq.heappop(heap)
        bound, z, t, ranges = sol
        if gap_closed(bound):
            continue
        # incumbents from the relaxation: rounding, then greedy in LP order
        zr = np.where(z > 0.5, 1, 0)
        zi_r, zd_r = relax.unpack(zr)
        if inst.exclusive:
            both = (zi_r + zd_r) > 1
            zi_r[both] = 0
            zd_r[both] = 0
        offer(zi_r, zd_r)
        offer(*greedy.run(np.lexsort((-margins, -z))))
        if gap_closed(bound):
            continue
        free = lo < hi
        frac = np.abs(z - np.round(z))
        cand = np.flatnonzero(free & (frac > INT_TOL))
        if cand.size:
            j = int(cand[np.argmax(frac[cand])])
        else:
            zint = np.round(z).astype(np.int64)
            zi_i, zd_i = relax.unpack(zint)
            offer(zi_i, zd_i)
            x = zi_i.sum(axis=0) - zd_i.sum(axis=0)
            gaps = np.array([t[h] - relax.g(h, int(x[h])) for h in range(inst.n_hours)])
            ev = evaluate(inst, zi_i, zd_i)
            if gaps.max() <= GAP_TOL and ev.feasible:
                continue
            if gaps.max() > GAP_TOL:
                h = int(np.argmax(gaps))
                hour_free = np.flatnonzero(free[2 * h * inst.n_nodes:2 * (h + 1) * inst.n_nodes])
                j = 2 * h * inst.n_nodes + int(hour_free[0]) if hour_free.size else -1
            else:
                j = -1
            if j < 0:
                fr = np.flatnonzero(free)
                if not fr.size:
                    continue
                j = int(fr[0])
        if node_limit is not None and n_nodes >= node_limit:
            status = "node_limit"
            heapq.heappush(heap, (neg_bound, next(counter), lo, hi, sol))
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            status = "time_limit"
            heapq.heappush(heap, (neg_bound, next(counter), lo, hi, sol))
            break
        for val in (1.0, 0.0):
            clo, chi = lo.copy(), hi.copy()
            clo[j] = chi[j] = val
            child = relax.solve(clo, chi)
            n_nodes += 1
            if child is not None and not gap_closed(child[0]):
                heapq.heappush(heap, (-child[0], next(counter), clo, chi, child))
    open_bound = max([-h[0] for h in heap], default=-np.inf)
    bound = max(open_bound, best_ev.objective)
    gap = (bound - best_ev.objective) / max(1.0, abs(best_ev.objective))
    if status == "optimal" and gap > GAP_TOL and mip_gap > 0:
        status = "gap"
    return _report(inst, best[0], best[1], "branch_and_bound", status=status, nodes=n_nodes,
                   gap=float(max(gap, 0.0)), bound=float(bound), wall_time=time.perf_counter() - t0)


def realized_cvar_check(inst: PortfolioInstance, z_inc, z_dec, risk_limit=None, tol=1e-6):
    """Recompute the summed hourly CVaR from scratch; returns (passed, value)."""
    from .instance import loss_samples
    limit = inst.risk_limit if risk_limit is None else risk_limit
    losses = loss_samples(inst, z_inc, z_dec)
    total = sum(min_f_beta(losses[h], inst.beta)[0] for h in range(inst.n_hours))
    return total <= limit + tol, float(total)
