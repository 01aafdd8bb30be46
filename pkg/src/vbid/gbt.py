"""Second-order boosted regression trees, non-increasing in one chosen feature.

Squared loss throughout, so every sample has gradient ``pred - y`` and
hessian 1.  Monotonicity is enforced two ways:

* a split on the constrained feature is admissible only when the left child
  weight is at least the right child weight;
* after such a split the left subtree's weights are floored, and the right
  subtree's capped, at the mean of the two child weights.  Candidate splits
  anywhere below must keep both child weights inside the inherited bounds.

The second rule makes every tree (and hence the ensemble) globally
non-increasing in the constrained feature, not just at each split.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict
from typing import NamedTuple

import numpy as np

from .errors import EmptyDataset, EmptyDomain, InfeasibleBounds, InvalidConfig, ParseError, ShapeMismatch
from .sensitivity import PwlSensitivity

log = logging.getLogger(__name__)

TEXT_FORMAT = "vbid-gbt/1"


@dataclass(frozen=True)
class GbtParams:
    num_rounds: int = 100
    max_depth: int = 4
    reg_lambda: float = 1.0
    min_split_gain: float = 0.0
    learning_rate: float = 0.1
    monotone_feature: int | None = 0
    seed: int = 0                     # unused by exact greedy search; kept for provenance

    def __post_init__(self):
        if self.num_rounds < 1 or self.max_depth < 1:
            raise InvalidConfig("num_rounds and max_depth must be >= 1")
        if not self.reg_lambda >= 0 or not self.min_split_gain >= 0:
            raise InvalidConfig("reg_lambda and min_split_gain must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise InvalidConfig("learning_rate must lie in (0, 1]")


class Split(NamedTuple):
    feature: int
    threshold: float
    gain: float
    g_left: float
    h_left: float
    g_right: float
    h_right: float
    w_left: float
    w_right: float


class TreeNode(NamedTuple):
    """Read-only view of one node; ``feature == -1`` marks a leaf."""
    feature: int
    threshold: float
    left: int
    right: int
    weight: float
    lower: float
    upper: float


def leaf_weight(G, H, lam):
    return -G / (H + lam)


def _score(G, H, lam):
    return G * G / (H + lam)


def find_best_split(x_sorted, g_sorted, h_sorted, params, monotone=None, lower=-np.inf, upper=np.inf,
                    G=None, H=None):
    """Best admissible split of one node, or ``None``.

    ``x_sorted[f]`` holds feature ``f`` of the node's samples in ascending
    order and ``g_sorted[f]``, ``h_sorted[f]`` the matching gradients and
    hessians.  ``monotone[f]`` marks the constrained feature.  ``G`` and
    ``H`` are the node totals (recomputed if omitted).  Thresholds sit
    midway between consecutive distinct values; ``x < threshold`` goes left.
    Ties keep the lowest feature, then the lowest threshold.
    """
    lam, gamma = params.reg_lambda, params.min_split_gain
    n_feat = len(x_sorted)
    monotone = [False] * n_feat if monotone is None else monotone
    if G is None:
        G, H = float(np.sum(g_sorted[0])), float(np.sum(h_sorted[0]))
    parent = _score(G, H, lam)
    best = None
    for f in range(n_feat):
        xs = x_sorted[f]
        if len(xs) < 2:
            return None
        cut = np.flatnonzero(xs[:-1] < xs[1:])
        if cut.size == 0:
            continue
        GL = np.cumsum(g_sorted[f])[cut]
        HL = np.cumsum(h_sorted[f])[cut]
        GR = G - GL
        HR = H - HL
        gain = 0.5 * (_score(GL, HL, lam) + _score(GR, HR, lam) - parent) - gamma
        wL = leaf_weight(GL, HL, lam)
        wR = leaf_weight(GR, HR, lam)
        ok = (gain > 0) & (wL >= lower) & (wL <= upper) & (wR >= lower) & (wR <= upper)
        if monotone[f]:
            ok &= wL >= wR
        if not ok.any():
            continue
        cand = np.where(ok, gain, -np.inf)
        k = int(np.argmax(cand))
        if best is not None and not cand[k] > best.gain:
            continue
        lo_v, hi_v = xs[cut[k]], xs[cut[k] + 1]
        thr = lo_v + (hi_v - lo_v) / 2
        if not lo_v < thr <= hi_v:
            thr = hi_v
        best = Split(f, float(thr), float(cand[k]), float(GL[k]), float(HL[k]), float(GR[k]), float(HR[k]),
                     float(wL[k]), float(wR[k]))
    return best


@dataclass(eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    weight: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def node(self, i):
        return TreeNode(int(self.feature[i]), float(self.threshold[i]), int(self.left[i]), int(self.right[i]),
                        float(self.weight[i]), float(self.lower[i]), float(self.upper[i]))

    def leaves(self):
        return np.flatnonzero(self.feature < 0)

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        idx = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[idx]
            inner = f >= 0
            if not inner.any():
                return idx
            r = rows[inner]
            go_left = X[r, f[inner]] < self.threshold[idx[inner]]
            idx[r] = np.where(go_left, self.left[idx[r]], self.right[idx[r]])

    def predict(self, X):
        return self.weight[self.apply(X)]

    def depth(self):
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)


class _Builder:
    """Grows one tree on presorted columns.

    Every node carries its box (per-feature ``[lo, hi)`` ranges).  Before a
    node is split, its admissible weight range is read off the current
    leaves: leaves whose boxes overlap it in every unconstrained feature and
    lie wholly above it along the constrained feature give a floor, those
    wholly below give a cap.  Each split therefore keeps the whole tree
    non-increasing along that feature.
    """

    def __init__(self, X, order, g, h, params):
        self.X, self.order, self.g, self.h, self.p = X, order, g, h, params
        n_feat = X.shape[1]
        self.mf = params.monotone_feature
        self.monotone = [self.mf is not None and f == self.mf for f in range(n_feat)]
        self.nodes = []
        self.box_lo = []
        self.box_hi = []
        self.leaves = set()
        self.leaf_rows = []

    def _new(self, weight, box_lo, box_hi):
        self.nodes.append([-1, np.nan, -1, -1, weight, -np.inf, np.inf])
        self.box_lo.append(box_lo)
        self.box_hi.append(box_hi)
        self.leaves.add(len(self.nodes) - 1)
        return len(self.nodes) - 1

    def _bounds(self, me):
        if self.mf is None:
            return -np.inf, np.inf
        p = self.mf
        lo_me, hi_me = self.box_lo[me], self.box_hi[me]
        lower, upper = -np.inf, np.inf
        others = np.ones(len(lo_me), dtype=bool)
        others[p] = False
        for l in self.leaves:
            if l == me:
                continue
            lo_l, hi_l = self.box_lo[l], self.box_hi[l]
            if not np.all((lo_l[others] < hi_me[others]) & (lo_me[others] < hi_l[others])):
                continue
            w = self.nodes[l][4]
            if lo_l[p] >= hi_me[p]:
                lower = max(lower, w)
            elif hi_l[p] <= lo_me[p]:
                upper = min(upper, w)
        return lower, upper

    def grow(self, rows_sorted, G, H, depth, me):
        if depth < self.p.max_depth and len(rows_sorted[0]) >= 2:
            lo, hi = self._bounds(me)
            self.nodes[me][5:7] = [lo, hi]
            xs = [self.X[r, f] for f, r in enumerate(rows_sorted)]
            gs = [self.g[r] for r in rows_sorted]
            hs = [self.h[r] for r in rows_sorted]
            s = find_best_split(xs, gs, hs, self.p, self.monotone, lo, hi, G, H)
            if s is not None:
                go_left = np.zeros(self.X.shape[0], dtype=bool)
                mine = rows_sorted[0]
                go_left[mine] = self.X[mine, s.feature] < s.threshold
                left_rows = [r[go_left[r]] for r in rows_sorted]
                right_rows = [r[~go_left[r]] for r in rows_sorted]
                lhi = self.box_hi[me].copy()
                lhi[s.feature] = s.threshold
                rlo = self.box_lo[me].copy()
                rlo[s.feature] = s.threshold
                self.leaves.discard(me)
                li = self._new(s.w_left, self.box_lo[me], lhi)
                ri = self._new(s.w_right, rlo, self.box_hi[me])
                self.nodes[me][0:4] = [s.feature, s.threshold, li, ri]
                self.grow(left_rows, s.g_left, s.h_left, depth + 1, li)
                self.grow(right_rows, s.g_right, s.h_right, depth + 1, ri)
                return
        self.leaf_rows.append((me, rows_sorted[0]))

    def build(self):
        G, H = float(np.sum(self.g)), float(np.sum(self.h))
        k = self.X.shape[1]
        root = self._new(leaf_weight(G, H, self.p.reg_lambda), np.full(k, -np.inf), np.full(k, np.inf))
        self.grow(list(self.order), G, H, 0, root)
        cols = list(zip(*self.nodes))
        return Tree(np.array(cols[0], dtype=np.int64), np.array(cols[1], dtype=np.float64),
                    np.array(cols[2], dtype=np.int64), np.array(cols[3], dtype=np.int64),
                    np.array(cols[4], dtype=np.float64), np.array(cols[5], dtype=np.float64),
                    np.array(cols[6], dtype=np.float64))


@dataclass(eq=False)
class GbtEnsemble:
    base_score: float
    trees: list
    params: GbtParams
    feature_names: tuple = ()
    n_features: int = 0
    constant_target: bool = False
    train_loss: list = field(default_factory=list)

    def predict(self, X):
        return predict(self, X)

    def thresholds(self, feature):
        out = [t.threshold[t.feature == feature] for t in self.trees]
        return np.unique(np.concatenate(out)) if out else np.empty(0)


def _as_matrix(X, n_features):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.ndim != 2 or X.shape[1] != n_features:
        raise ShapeMismatch(f"expected {n_features} features, got shape {X.shape}")
    return X, single


def fit(X, y, params=GbtParams(), feature_names=None):
    """Boost ``params.num_rounds`` trees on squared error.

    A constant target yields a base-score-only ensemble with
    ``constant_target`` set.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ShapeMismatch(f"X must be (n, k) and y (n,), got {X.shape} and {y.shape}")
    if len(y) < 2:
        raise EmptyDataset("need at least 2 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ShapeMismatch("features and targets must be finite")
    n, k = X.shape
    if params.monotone_feature is not None and not 0 <= params.monotone_feature < k:
        raise InvalidConfig(f"monotone_feature {params.monotone_feature} outside 0..{k - 1}")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(k))
    base = float(np.mean(y))
    ens = GbtEnsemble(base, [], params, names, k)
    pred = np.full(n, base)
    ens.train_loss.append(float(np.mean((pred - y) ** 2)))
    if np.all(y == y[0]):
        ens.constant_target = True
        return ens
    order = [np.argsort(X[:, f], kind="stable") for f in range(k)]
    h = np.ones(n)
    eta = params.learning_rate
    for _ in range(params.num_rounds):
        g = pred - y
        b = _Builder(X, order, g, h, params)
        tree = b.build()
        for leaf, rows in b.leaf_rows:
            pred[rows] += eta * tree.weight[leaf]
        ens.trees.append(tree)
        ens.train_loss.append(float(np.mean((pred - y) ** 2)))
    return ens


def predict(ens: GbtEnsemble, X):
    X, single = _as_matrix(X, ens.n_features)
    eta = ens.params.learning_rate
    out = np.full(len(X), ens.base_score)
    for t in ens.trees:
        out += eta * t.predict(X)
    return float(out[0]) if single else out


# -- step function extraction -------------------------------------------------

@dataclass(frozen=True, eq=False)
class StepFunction:
    breakpoints: np.ndarray
    levels: np.ndarray
    x_lo: float
    x_hi: float

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        lv = np.asarray(self.levels, dtype=np.float64)
        if len(lv) != len(bp) + 1:
            raise ShapeMismatch("need exactly one more level than breakpoints")
        if np.any(np.diff(bp) <= 0) or (bp.size and (bp[0] <= self.x_lo or bp[-1] >= self.x_hi)):
            raise ShapeMismatch("breakpoints must be strictly increasing inside the domain")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "levels", lv)

    @property
    def edges(self):
        return np.concatenate([[self.x_lo], self.breakpoints, [self.x_hi]])

    @property
    def midpoints(self):
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = self.levels[np.searchsorted(self.breakpoints, x, side="right")]
        return float(out) if out.ndim == 0 else out

    def shifted(self, dx):
        """Same function re-expressed in ``x - dx``."""
        return StepFunction(self.breakpoints - dx, self.levels, self.x_lo - dx, self.x_hi - dx)


def _full_context(ens, context):
    p = ens.params.monotone_feature
    if p is None:
        raise InvalidConfig("ensemble has no constrained feature")
    ctx = np.asarray(context, dtype=np.float64).ravel()
    if ctx.size == ens.n_features - 1:
        ctx = np.insert(ctx, p, 0.0)
    elif ctx.size != ens.n_features:
        raise ShapeMismatch(f"context must have {ens.n_features - 1} or {ens.n_features} values")
    return ctx, p


def extract_step_function(ens: GbtEnsemble, context, x_lo, x_hi, offset=0.0) -> StepFunction:
    """Prediction along the constrained feature with the others held at ``context``.

    The returned function is expressed in ``x`` where the constrained feature
    equals ``offset + x``.
    """
    if not x_lo < x_hi:
        raise EmptyDomain(f"empty domain [{x_lo}, {x_hi}]")
    ctx, p = _full_context(ens, context)
    cuts = set()
    for t in ens.trees:
        stack = [0]
        while stack:
            i = stack.pop()
            f = t.feature[i]
            if f < 0:
                continue
            if f == p:
                cuts.add(float(t.threshold[i]))
                stack.extend((t.left[i], t.right[i]))
            else:
                stack.append(t.left[i] if ctx[f] < t.threshold[i] else t.right[i])
    bp = np.array(sorted({c - offset for c in cuts} - {x_lo, x_hi}))
    bp = bp[(bp > x_lo) & (bp < x_hi)]
    edges = np.concatenate([[x_lo], bp, [x_hi]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    grid = np.tile(ctx, (len(mids), 1))
    grid[:, p] = offset + mids
    levels = np.atleast_1d(predict(ens, grid))
    if np.any(np.diff(levels) > 0):
        raise InvalidConfig("ensemble is not non-increasing in the constrained feature")
    return StepFunction(bp, levels, float(x_lo), float(x_hi))


def step_to_piecewise_linear(step: StepFunction, hour=0) -> PwlSensitivity:
    """Join (interval midpoint, level) knots with straight lines.

    The curve is flat from ``x_lo`` to the first knot and from the last knot
    to ``x_hi``; collinear neighbours are merged, and the result is shifted
    so its value at 0 is 0 (the removed value is kept as ``anchor_value``).
    """
    if not step.x_lo < 0 < step.x_hi:
        raise InfeasibleBounds("the step domain must contain 0 in its interior")
    mx, lv = step.midpoints, step.levels
    # segments as (start, slope, value at start)
    segs = [(step.x_lo, 0.0, lv[0])]
    for k in range(len(lv) - 1):
        slope = (lv[k + 1] - lv[k]) / (mx[k + 1] - mx[k])
        segs.append((mx[k], slope, lv[k]))
    if len(lv) > 1:
        segs.append((mx[-1], 0.0, lv[-1]))
    merged = [segs[0]]
    for s in segs[1:]:
        if s[1] == merged[-1][1]:
            continue
        merged.append(s)
    c = np.array([s[0] for s in merged])
    a = np.array([min(s[1], 0.0) for s in merged])
    b = np.array([s[2] - s[1] * s[0] for s in merged])
    j0 = np.searchsorted(c, 0.0, side="right") - 1
    anchor = a[j0] * 0.0 + b[j0]
    return PwlSensitivity(hour, c, a, b - anchor, step.x_lo, step.x_hi, anchor_value=float(anchor))


def fit_hourly_pwl(ens: GbtEnsemble, context, y_forecast, x_lo, x_hi, hour=0) -> PwlSensitivity:
    """Shift curve in the trader's position ``x`` around market net quantity ``y_forecast``.

    The ensemble's constrained feature is the market-wide net quantity
    ``u = y + x``, so the step function is read off at ``u = y_forecast + x``.
    """
    step = extract_step_function(ens, context, x_lo, x_hi, offset=y_forecast)
    return step_to_piecewise_linear(step, hour)


# -- text serialisation -------------------------------------------------------

def dumps(ens: GbtEnsemble):
    lines = [TEXT_FORMAT]
    p = asdict(ens.params)
    lines.append("params " + " ".join(f"{k}={p[k]!r}" for k in sorted(p)))
    lines.append("features " + " ".join(ens.feature_names))
    lines.append(f"base_score {ens.base_score!r}")
    lines.append(f"constant_target {int(ens.constant_target)}")
    lines.append(f"trees {len(ens.trees)}")
    for t in ens.trees:
        lines.append(f"tree {t.n_nodes}")

        def emit(i):
            if t.feature[i] < 0:
                lines.append(f"L {float(t.weight[i])!r} {float(t.lower[i])!r} {float(t.upper[i])!r}")
            else:
                lines.append(f"N {int(t.feature[i])} {float(t.threshold[i])!r} {float(t.weight[i])!r} "
                             f"{float(t.lower[i])!r} {float(t.upper[i])!r}")
                emit(t.left[i])
                emit(t.right[i])
        emit(0)
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.splitlines()
    it = iter(lines)
    try:
        if next(it) != TEXT_FORMAT:
            raise ParseError("not a boosted-tree dump")
        kv = dict(item.split("=", 1) for item in next(it).split()[1:])
        params = GbtParams(num_rounds=int(kv["num_rounds"]), max_depth=int(kv["max_depth"]),
                           reg_lambda=float(kv["reg_lambda"]), min_split_gain=float(kv["min_split_gain"]),
                           learning_rate=float(kv["learning_rate"]),
                           monotone_feature=None if kv["monotone_feature"] == "None" else int(kv["monotone_feature"]),
                           seed=int(kv["seed"]))
        names = tuple(next(it).split()[1:])
        base = float(next(it).split()[1])
        const = bool(int(next(it).split()[1]))
        n_trees = int(next(it).split()[1])
        trees = []
        for _ in range(n_trees):
            n_nodes = int(next(it).split()[1])
            nodes = []

            def read():
                parts = next(it).split()
                me = len(nodes)
                if parts[0] == "L":
                    nodes.append([-1, np.nan, -1, -1] + [float(v) for v in parts[1:4]])
                    return me
                nodes.append([int(parts[1]), float(parts[2]), -1, -1] + [float(v) for v in parts[3:6]])
                nodes[me][2] = read()
                nodes[me][3] = read()
                return me
            read()
            if len(nodes) != n_nodes:
                raise ParseError("tree node count mismatch")
            cols = list(zip(*nodes))
            trees.append(Tree(*(np.array(cols[i], dtype=np.int64 if i in (0, 2, 3) else np.float64)
                                for i in range(7))))
    except (StopIteration, KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"malformed boosted-tree dump: {exc}") from None
    return GbtEnsemble(base, trees, params, names, len(names), const)


def save(ens, path):
    with open(path, "w") as fh:
        fh.write(dumps(ens))


def load(path):
    with open(path) as fh:
        return loads(fh.read())
