"""Maximum likelihood for fully observed (continuous-time) sample paths."""

from __future__ import annotations

import numpy as np
from scipy.special import xlogy

from ..models import ModelSpec
from ..optimize import minimize
from .data import ObservedData, ParamMap


class PathStats:
    """Up-jump counts ``U``, down-jump counts ``D`` and holding times ``H``
    indexed by state ``0..len-1``."""

    def __init__(self, U, D, H):
        self.U = np.asarray(U, dtype=float)
        self.D = np.asarray(D, dtype=float)
        self.H = np.asarray(H, dtype=float)

    @property
    def states(self):
        return np.arange(self.U.size)


def path_stats(data: ObservedData) -> PathStats:
    if data.scheme != "continuous":
        raise ValueError("path statistics need continuously observed data")
    data.require_integer()
    n = int(data.max_count()) + 2
    U, D, H = np.zeros(n), np.zeros(n), np.zeros(n)
    for t, z in zip(data.t_data, data.p_data):
        z = z.astype(np.int64)
        np.add.at(H, z[:-1], np.diff(t))
        step = np.diff(z)
        np.add.at(U, z[:-1][step == 1], 1.0)
        np.add.at(D, z[:-1][step == -1], 1.0)
    return PathStats(U, D, H)


def stats_loglik(model: ModelSpec, p, z, U, D, H) -> float:
    """``sum U log(lambda) + D log(mu) - (lambda + mu) H`` with ``0 log 0 = 0``."""
    lam = model.birth(z, p)
    mu = model.death(z, p)
    with np.errstate(divide="ignore"):
        val = np.sum(xlogy(U, lam) + xlogy(D, mu) - (lam + mu) * H)
    return float(val) if np.isfinite(val) else -np.inf


def loglik_continuous(model: ModelSpec, p, data: ObservedData) -> float:
    s = path_stats(data)
    return stats_loglik(model, p, s.states, s.U, s.D, s.H)


def _closed_form(model, pmap, s, bounds, constraints):
    """Closed-form maximiser for rates of the form ``f(z) p_b`` and ``g(z) p_d``."""
    if model.linear_factors is None or constraints:
        return None
    f, g, bi, di = model.linear_factors
    x = np.empty(pmap.num_free)
    covered = set()
    for fac, idx, counts in ((f, bi, s.U), (g, di, s.D)):
        if idx is None or idx not in pmap.free:
            continue
        k = int(np.flatnonzero(pmap.free == idx)[0])
        exposure = float(np.sum(fac(s.states) * s.H))
        if exposure <= 0:
            return None
        x[k] = counts.sum() / exposure
        covered.add(idx)
    if covered != set(pmap.free.tolist()):
        return None
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if np.any(x < lo) or np.any(x > hi):
        return None
    return x


def mle_continuous(model: ModelSpec, data: ObservedData, pmap: ParamMap, p0, bounds,
                   constraints=(), method="local", seed=None, max_iter=None,
                   multi_start=0):
    """Maximise the path likelihood. Returns ``(x_free, loglik, message)``."""
    s = path_stats(data)
    x = _closed_form(model, pmap, s, bounds, constraints)
    if x is not None:
        return x, stats_loglik(model, pmap.full(x), s.states, s.U, s.D, s.H), "closed form"

    def nll(y):
        return -stats_loglik(model, pmap.full(y), s.states, s.U, s.D, s.H)

    res = minimize(nll, p0, bounds, constraints, method=method, seed=seed, max_iter=max_iter,
                   multi_start=multi_start)
    return res.x, -res.fun, res.message
