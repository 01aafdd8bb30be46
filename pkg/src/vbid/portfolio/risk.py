"""Sample-based VaR / CVaR of hourly portfolio losses."""

from __future__ import annotations

import math

import numpy as np

from ..errors import EmptyLosses, InvalidConfig


def _check(losses, beta):
    f = np.asarray(losses, dtype=np.float64).ravel()
    if f.size == 0:
        raise EmptyLosses("no loss samples")
    if not 0 < beta < 1:
        raise InvalidConfig(f"beta must lie in (0, 1), got {beta}")
    return f


def _var_index(n, beta):
    # smallest k (1-based) with k / n >= beta; the slack absorbs beta * n landing a hair above an integer
    return min(max(math.ceil(beta * n - 1e-9), 1), n)


def empirical_var(losses, beta):
    """Smallest sample loss whose empirical CDF reaches ``beta``."""
    f = np.sort(_check(losses, beta))
    return float(f[_var_index(f.size, beta) - 1])


def f_beta(losses, alpha, beta):
    """``alpha + sum(max(0, f - alpha)) / ((1 - beta) * n)``."""
    f = _check(losses, beta)
    return float(alpha + np.sum(np.maximum(f - alpha, 0.0)) / ((1.0 - beta) * f.size))


def empirical_cvar(losses, beta):
    """Tail expectation of the empirical loss distribution.

    Evaluated as ``f_beta`` at the VaR, which is where ``f_beta`` attains its
    minimum over ``alpha``.  When ``beta * n`` is not an integer the VaR
    atom is counted fractionally, so this is the exact CVaR of the discrete
    distribution rather than a plain mean of the losses at or above VaR.
    """
    f = _check(losses, beta)
    return f_beta(f, empirical_var(f, beta), beta)


def min_f_beta(losses, beta):
    """``min over alpha`` of :func:`f_beta`, searching the sample losses."""
    f = _check(losses, beta)
    cand = np.unique(f)
    scale = 1.0 / ((1.0 - beta) * f.size)
    vals = cand + scale * np.maximum(f[None, :] - cand[:, None], 0.0).sum(axis=1)
    k = int(np.argmin(vals))
    return float(vals[k]), float(cand[k])


def cvar_rows(losses, beta):
    """CVaR of each row of a (patterns, samples) loss matrix."""
    L = np.sort(np.asarray(losses, dtype=np.float64), axis=1)
    n = L.shape[1]
    k = _var_index(n, beta)
    var = L[:, k - 1]
    return var + np.maximum(L - var[:, None], 0.0).sum(axis=1) / ((1.0 - beta) * n)
