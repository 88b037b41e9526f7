"""Bounded and constrained minimisation plus finite-difference derivatives."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize as sopt

BIG = 1e100
PENALTY_WEIGHTS = (1e2, 1e4, 1e6)
EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ConstraintSpec:
    """``fun(x) >= 0`` for ``kind="ineq"`` or ``fun(x) == 0`` for ``kind="eq"``."""

    kind: str
    fun: Callable

    def __post_init__(self):
        if self.kind not in ("ineq", "eq"):
            raise ValueError("constraint kind must be 'ineq' or 'eq'")

    def violation(self, x) -> float:
        v = float(self.fun(x))
        return min(v, 0.0) if self.kind == "ineq" else v


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    success: bool
    message: str
    nfev: int = 0


def as_constraints(constraints) -> list:
    """Accept ConstraintSpec objects or scipy-style dicts."""
    out = []
    for c in constraints or ():
        if isinstance(c, ConstraintSpec):
            out.append(c)
        elif isinstance(c, dict):
            out.append(ConstraintSpec(c["type"], c["fun"]))
        else:
            raise TypeError(f"unsupported constraint {c!r}")
    return out


def _safe(f, counter):
    def g(x):
        counter[0] += 1
        try:
            v = float(f(x))
        except (FloatingPointError, OverflowError, ZeroDivisionError, ValueError):
            return BIG
        return v if np.isfinite(v) else BIG
    return g


def fd_gradient(f, x, lo=None, hi=None, f0=None):
    """Forward differences with step ``sqrt(eps) * max(1, |x_i|)``, switching
    to a backward step when the forward point would leave the bounds."""
    x = np.asarray(x, dtype=float)
    f0 = f(x) if f0 is None else f0
    g = np.empty_like(x)
    for i in range(x.size):
        h = np.sqrt(EPS) * max(1.0, abs(x[i]))
        if hi is not None and x[i] + h > hi[i]:
            h = -h
        xi = x.copy()
        xi[i] += h
        g[i] = (f(xi) - f0) / h
    return g


def _stationary(f, x, fx, lo, hi, rtol=1e-3) -> bool:
    """Projected forward-difference gradient small relative to ``|f|``."""
    g = fd_gradient(f, x, lo, hi, fx)
    g = np.where((x <= lo) & (g > 0), 0.0, g)
    g = np.where((x >= hi) & (g < 0), 0.0, g)
    return bool(np.all(np.abs(g) <= rtol * max(1.0, abs(fx))))


def _local(f, x0, lo, hi, cons, max_iter):
    nfev = [0]
    fs = _safe(f, nfev)
    bounds = list(zip(lo, hi))

    def lbfgs(obj, start):
        return sopt.minimize(
            obj, start, method="L-BFGS-B", bounds=bounds,
            jac=lambda x: fd_gradient(obj, x, lo, hi),
            options={"maxiter": max_iter or 15000, "ftol": 1e-12, "gtol": 1e-9,
                     "maxls": 100},
        )

    def run(obj, start):
        res = lbfgs(obj, start)
        if _stationary(obj, res.x, res.fun, lo, hi):
            return res
        # L-BFGS-B stalls next to regions where the objective is infinite;
        # a derivative-free pass gets it moving again
        alt = sopt.minimize(obj, np.clip(res.x, lo, hi), method="Nelder-Mead",
                            bounds=bounds, options={"xatol": 1e-10, "fatol": 1e-12,
                                                    "maxfev": max_iter or 4000})
        if alt.fun < res.fun:
            again = lbfgs(obj, np.clip(alt.x, lo, hi))
            res = again if again.fun <= alt.fun else alt
        return res

    if not cons:
        res = run(fs, x0)
        x = np.clip(res.x, lo, hi)
        return OptimizeResult(x, fs(x), bool(res.success), str(res.message), nfev[0])
    x = np.asarray(x0, dtype=float)
    res = None
    for w in PENALTY_WEIGHTS:
        def obj(y, w=w):
            pen = sum(c.violation(y) ** 2 for c in cons)
            return fs(y) + w * pen
        res = run(obj, x)
        x = np.clip(res.x, lo, hi)
    feasible = all(abs(c.violation(x)) < 1e-4 for c in cons)
    msg = str(res.message) if feasible else "constraints not satisfied at the returned point"
    return OptimizeResult(x, fs(x), bool(res.success) and feasible, msg, nfev[0])


def _de(f, lo, hi, cons, seed, max_iter):
    nfev = [0]
    fs = _safe(f, nfev)
    sc = [sopt.NonlinearConstraint(c.fun, 0.0, np.inf if c.kind == "ineq" else 0.0)
          for c in cons]
    with warnings.catch_warnings():
        # the constrained polish step complains about locally linear objectives
        warnings.filterwarnings("ignore", message="delta_grad == 0.0")
        res = sopt.differential_evolution(
            fs, list(zip(lo, hi)), strategy="rand1bin", popsize=15, mutation=0.8,
            recombination=0.9, maxiter=max_iter or 1000, tol=1e-8, seed=seed,
            constraints=sc or (), polish=True, init="latinhypercube",
        )
    x = np.clip(res.x, lo, hi)
    return OptimizeResult(x, fs(x), bool(res.success), str(res.message), nfev[0])


def minimize(f: Callable, x0, bounds: Sequence, constraints=None, method: str = "local",
             seed=None, max_iter=None, multi_start: int = 0) -> OptimizeResult:
    """Minimise `f` over the box `bounds` subject to `constraints`.

    Parameters
    ----------
    method : {"local", "differential-evolution"}
        ``local`` runs L-BFGS-B with forward-difference gradients and handles
        constraints with a quadratic penalty of increasing weight.
        ``differential-evolution`` runs the rand/1/bin population search.
    multi_start : int
        Extra jittered starting points for ``local`` (the best result wins).
        Jitter draws use `seed`.

    Non-finite objective values are replaced by a large constant so that the
    search steers away from them.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if np.any(lo > hi):
        raise ValueError("each lower bound must not exceed its upper bound")
    cons = as_constraints(constraints)
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    if method == "local":
        best = _local(f, x0, lo, hi, cons, max_iter)
        if multi_start:
            rng = np.random.default_rng(seed)
            width = np.where(np.isfinite(hi - lo), hi - lo, np.maximum(np.abs(x0), 1.0))
            for _ in range(int(multi_start)):
                start = np.clip(x0 + 0.1 * width * rng.standard_normal(x0.size), lo, hi)
                cand = _local(f, start, lo, hi, cons, max_iter)
                if cand.fun < best.fun and (cand.success or not best.success):
                    best = cand
        return best
    if method == "differential-evolution":
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("differential evolution needs finite bounds")
        return _de(f, lo, hi, cons, seed, max_iter)
    raise ValueError(
        f"unknown optimisation method {method!r}; use 'local' or 'differential-evolution'"
    )


def hessian_fd(f: Callable, x, rel_step: float = 1e-4, shrink_tries: int = 3) -> np.ndarray:
    """Central-difference Hessian with steps ``rel_step * max(1, |x_i|)``.

    When `f` is not finite at a stencil point, all steps shrink by a factor 10
    (at most `shrink_tries` times) before giving up.
    """
    x = np.asarray(x, dtype=float)
    for attempt in range(shrink_tries + 1):
        h = rel_step * 0.1 ** attempt * np.maximum(1.0, np.abs(x))
        try:
            return _hessian(f, x, h)
        except FloatingPointError:
            continue
    raise FloatingPointError("objective not finite near the evaluation point")


def _hessian(f, x, h):
    n = x.size

    def ev(d):
        v = float(f(x + d))
        if not np.isfinite(v):
            raise FloatingPointError
        return v

    f0 = ev(np.zeros(n))
    H = np.empty((n, n))
    E = np.diag(h)
    for i in range(n):
        H[i, i] = (ev(E[i]) - 2 * f0 + ev(-E[i])) / h[i] ** 2
        for j in range(i):
            H[i, j] = (ev(E[i] + E[j]) - ev(E[i] - E[j]) - ev(E[j] - E[i])
                       + ev(-E[i] - E[j])) / (4 * h[i] * h[j])
            H[j, i] = H[i, j]
    return 0.5 * (H + H.T)
