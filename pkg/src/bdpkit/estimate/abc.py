"""Approximate Bayesian computation by sequential importance sampling.

The prior is uniform on the parameter box (restricted by any constraints).
Each iteration keeps `k` parameter draws whose simulated one-step outcomes
lie within a tolerance of the data. With ``eps_abc="dynamic"`` the first
tolerance is the k-th smallest distance among ``k * gam`` prior draws, and
later tolerances are quantiles of the previous distances chosen from a kernel
density estimate of how much the posterior approximation still moves.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import gaussian_kde

from ..models import ModelSpec
from ..optimize import as_constraints
from ..simulate import METHODS, as_generator, simulate_batch
from .data import ObservedData, ParamMap

MAX_PROPOSALS = 1_000_000


def euclidean_distance(sim, obs):
    """Row-wise Euclidean distance between simulated and observed outcomes."""
    return np.sqrt(np.sum((np.asarray(sim, dtype=float) - obs) ** 2, axis=-1))


class _Sampler:
    def __init__(self, model, data, pmap, bounds, constraints, method, tau, distance, rng):
        self.model = model
        self.pmap = pmap
        self.lo = np.array([b[0] for b in bounds], dtype=float)
        self.hi = np.array([b[1] for b in bounds], dtype=float)
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("abc needs finite parameter bounds (they define the prior)")
        self.cons = as_constraints(constraints)
        self.zp, self.zn, self.dt = data.transitions()
        self.method = method
        self.tau = tau
        self.distance = distance
        self.rng = rng
        self.proposals = 0

    def in_support(self, X):
        ok = np.all((X >= self.lo) & (X <= self.hi), axis=1)
        for c in self.cons:
            ok &= np.array([c.violation(x) == 0.0 if c.kind == "ineq" else
                            abs(c.violation(x)) < 1e-8 for x in X])
        return ok

    def from_prior(self, n):
        X = self.lo + (self.hi - self.lo) * self.rng.random((n, self.lo.size))
        return X[self.in_support(X)]

    def distances(self, X):
        self.proposals += X.shape[0]
        n_tr = self.zp.size
        P = np.repeat(self.pmap.full_batch(X), n_tr, axis=1)
        sim = simulate_batch(self.model, P, np.tile(self.zp, X.shape[0]),
                             np.tile(self.dt, X.shape[0]), self.method, self.tau, self.rng)
        sim = sim.reshape(X.shape[0], n_tr)
        if self.distance is None:
            return euclidean_distance(sim, self.zn)
        return np.array([float(self.distance(row, self.zn)) for row in sim])


def _weighted_cov(X, w):
    mean = w @ X
    D = X - mean
    return (D * w[:, None]).T @ D


def _weighted_median(x, w):
    order = np.argsort(x)
    cw = np.cumsum(w[order])
    return float(x[order][np.searchsorted(cw, 0.5 * cw[-1])])


def _kde(X, w):
    return gaussian_kde(X.T, weights=w)


def _next_quantile(prev, prior_density, X, w):
    """``1 / sup (new density / old density)`` estimated at the accepted draws."""
    new = _kde(X, w)(X.T)
    old = prior_density * np.ones(X.shape[0]) if prev is None else prev(X.T)
    ratio = np.max(new / np.maximum(old, 1e-300))
    return 1.0 / ratio if ratio > 0 else 1.0


def abc_estimate(model: ModelSpec, data: ObservedData, pmap: ParamMap, bounds, constraints=(),
                 eps_abc="dynamic", k: int = 100, max_its: int = 3, max_q: float = 0.99,
                 eps_change: float = 5.0, gam: int = 5, method: str = "gwa", tau=None,
                 stat: str = "mean", distance=None, seed=None,
                 max_proposals: int = MAX_PROPOSALS):
    """Run ABC and summarise the final accepted draws.

    Parameters
    ----------
    eps_abc : "dynamic" or sequence of float
        Tolerance schedule. A sequence fixes one tolerance per iteration.
    k : int
        Accepted draws per iteration.
    gam : int
        With dynamic tolerances, the first iteration draws ``k * gam`` prior
        samples and keeps the closest `k`.
    method, tau
        Simulation method for the one-step outcomes and its time step
        (default a tenth of the smallest observation gap).
    stat : {"mean", "median"}
        Posterior summary used as the point estimate.
    distance : callable, optional
        ``distance(simulated, observed)`` on the vectors of next observations.

    Returns
    -------
    dict
        ``x``, ``samples``, ``weights``, ``cov``, ``eps`` (tolerance per
        iteration), ``iterations`` (full parameter estimate per iteration)
        and ``proposals``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown simulation method {method!r}; choose from {METHODS}")
    if stat not in ("mean", "median"):
        raise ValueError("stat must be 'mean' or 'median'")
    data.require_integer()
    rng = as_generator(seed)
    _, _, dts = data.transitions()
    tau = float(np.min(dts)) / 10.0 if tau is None else float(tau)
    smp = _Sampler(model, data, pmap, bounds, constraints, method, tau, distance, rng)
    dynamic = isinstance(eps_abc, str)
    if dynamic and eps_abc != "dynamic":
        raise ValueError("eps_abc must be 'dynamic' or a sequence of tolerances")
    schedule = None if dynamic else [float(e) for e in np.atleast_1d(eps_abc)]
    n_its = max_its if dynamic else min(max_its, len(schedule))
    volume = float(np.prod(smp.hi - smp.lo))
    prior_density = 1.0 / volume if volume > 0 else 1.0

    def summarise(X, w):
        if stat == "mean":
            return w @ X
        return np.array([_weighted_median(X[:, c], w) for c in range(X.shape[1])])

    # first iteration: prior draws; a dynamic first tolerance is the k-th
    # smallest distance, so those k draws satisfy d <= eps (later ones d < eps)
    if dynamic:
        X = smp.from_prior(k * gam)
        while X.shape[0] < k * gam:
            X = np.vstack([X, smp.from_prior(k * gam)])[: k * gam]
        d = smp.distances(X)
        keep = np.argsort(d, kind="stable")[:k]
        X, d = X[keep], d[keep]
        eps = float(d.max())
    else:
        eps = schedule[0]
        X, d = _accept(smp, lambda n: smp.from_prior(n), eps, k, max_proposals)
    w = np.full(k, 1.0 / k)
    eps_trace = [eps]
    trace = [pmap.full(summarise(X, w))]
    prev_kde = None

    for it in range(1, n_its):
        if dynamic:
            try:
                q = _next_quantile(prev_kde, prior_density, X, w)
            except (np.linalg.LinAlgError, ValueError):
                break
            # the stopping quantile is only consulted once two iterations have run
            if (it >= 2 and q > max_q) or eps <= 0:
                break
            new_eps = float(np.quantile(d, q))
            if 100.0 * (eps - new_eps) / eps <= eps_change:
                break
            eps = new_eps
        else:
            eps = schedule[it]
        try:
            prev_kde = _kde(X, w)
        except (np.linalg.LinAlgError, ValueError):
            prev_kde = None
        Sigma = 2.0 * np.atleast_2d(_weighted_cov(X, w))
        try:
            L = np.linalg.cholesky(Sigma)
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(Sigma)
            L = vecs * np.sqrt(np.clip(vals, 0.0, None))
        X_old, w_old = X, w

        def propose(n, X_old=X_old, w_old=w_old, L=L):
            idx = rng.choice(X_old.shape[0], size=n, p=w_old)
            Y = X_old[idx] + rng.standard_normal((n, X_old.shape[1])) @ L.T
            return Y[smp.in_support(Y)]

        X, d = _accept(smp, propose, eps, k, max_proposals)
        w = _importance_weights(X, X_old, w_old, Sigma)
        eps_trace.append(eps)
        trace.append(pmap.full(summarise(X, w)))

    return {"x": summarise(X, w), "samples": X, "weights": w,
            "cov": np.atleast_2d(_weighted_cov(X, w)), "eps": eps_trace,
            "distances": d, "iterations": trace, "proposals": smp.proposals}


def _accept(smp, propose, eps, k, max_proposals):
    batch = max(2 * k, 200)
    acc_X, acc_d, n_acc = [], [], 0
    while n_acc < k:
        if smp.proposals >= max_proposals:
            raise RuntimeError(
                f"abc accepted {n_acc} of {k} draws within {max_proposals} proposals at "
                f"tolerance {eps:.6g}; relax the tolerance or widen the bounds"
            )
        Y = propose(batch)
        if Y.shape[0] == 0:
            smp.proposals += batch
            continue
        dist = smp.distances(Y)
        ok = dist < eps
        acc_X.append(Y[ok])
        acc_d.append(dist[ok])
        n_acc += int(ok.sum())
    return np.vstack(acc_X)[:k], np.concatenate(acc_d)[:k]


def _importance_weights(X, X_old, w_old, Sigma):
    """Uniform prior over kernel mixture density of the proposal."""
    try:
        P = np.linalg.inv(Sigma)
        _, logdet = np.linalg.slogdet(Sigma)
    except np.linalg.LinAlgError:
        return np.full(X.shape[0], 1.0 / X.shape[0])
    D = X[:, None, :] - X_old[None, :, :]
    expo = -0.5 * np.einsum("abi,ij,abj->ab", D, P, D) - 0.5 * logdet
    m = expo.max(axis=1, keepdims=True)
    mix = np.sum(w_old * np.exp(expo - m), axis=1)
    logw = -(np.log(mix) + m[:, 0])
    w = np.exp(logw - logw.max())
    if not np.all(np.isfinite(w)) or w.sum() == 0:
        return np.full(X.shape[0], 1.0 / X.shape[0])
    return w / w.sum()
