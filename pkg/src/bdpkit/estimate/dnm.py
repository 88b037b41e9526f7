"""Direct numerical maximisation of the discretely observed likelihood."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from .. import probability as prob
from ..linalg import default_window
from ..models import ModelSpec
from ..optimize import minimize
from .data import ObservedData, ParamMap, group_by_dt

_WINDOWED = ("expm", "uniform", "Erlang")


class DiscreteLikelihood:
    """Log-likelihood of discretely observed paths under one probability method.

    Transitions are grouped by elapsed time so that each distinct gap costs a
    single call to :func:`bdpkit.probability.probability`. Values are cached
    per parameter vector (``cache_size`` most recent).
    """

    def __init__(self, model: ModelSpec, data: ObservedData, method: str = "expm",
                 z_trunc=None, cache_size: int = 256, **options):
        if method not in prob.METHODS:
            raise ValueError(f"unknown likelihood method {method!r}")
        data.require_integer()
        self.model = model
        self.method = method
        self.options = dict(options)
        zp, zn, dt = data.transitions()
        self.groups = group_by_dt(zp, zn, dt)
        self.n_transitions = zp.size
        self.states = (int(min(zp.min(), zn.min())), int(max(zp.max(), zn.max())))
        self.z_trunc = z_trunc
        self.cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()

    def _window(self, p):
        if self.z_trunc is not None:
            return tuple(self.z_trunc)
        w = default_window(*self.states, bound=self.model.state_bound(p))
        return (w.z_min, w.z_max)

    def transition_probs(self, p) -> list:
        """Per group, the probabilities of its distinct pairs."""
        opts = dict(self.options)
        if self.method in _WINDOWED:
            opts["z_trunc"] = self._window(p)
        out = []
        for dt, pairs, _ in self.groups:
            ui, ri = np.unique(pairs[:, 0], return_inverse=True)
            uj, rj = np.unique(pairs[:, 1], return_inverse=True)
            P = prob.probability(ui, uj, dt, self.model, p, self.method, **opts)
            out.append(P[ri.ravel(), rj.ravel()])
        return out

    def __call__(self, p) -> float:
        p = np.asarray(p, dtype=float)
        key = p.tobytes()
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        val = self._evaluate(p)
        if self.cache_size:
            self._cache[key] = val
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return val

    def _evaluate(self, p) -> float:
        total = 0.0
        for probs, (_, _, counts) in zip(self.transition_probs(p), self.groups):
            if np.any(~(probs > 0)):
                return -np.inf
            total += float(np.dot(counts, np.log(probs)))
        return total


def dnm_estimate(lik: DiscreteLikelihood, pmap: ParamMap, p0, bounds, constraints=(),
                 method="local", seed=None, max_iter=None, multi_start=0):
    """Maximise `lik` over the free parameters. Returns the optimiser result
    with ``fun`` already converted back to a log-likelihood."""
    if not np.isfinite(lik(pmap.full(p0))) and method == "local":
        raise ValueError(
            "the likelihood is zero at the initial guess; choose p0 closer to the data"
        )
    res = minimize(lambda x: -lik(pmap.full(x)), p0, bounds, constraints,
                   method=method, seed=seed, max_iter=max_iter, multi_start=multi_start)
    res.fun = -res.fun
    return res
