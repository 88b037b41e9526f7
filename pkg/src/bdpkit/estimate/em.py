"""Expectation-maximisation for discretely observed paths.

The E-step computes, for every state ``z`` in a truncation window, the
expected number of up-jumps ``U_z``, down-jumps ``D_z`` and the expected
holding time ``H_z`` given the observations. The M-step maximises the
continuous-path likelihood with those expectations plugged in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import laplace
from ..linalg import TruncationWindow, build_generator, default_window, expm, van_loan_weighted
from ..models import ModelSpec
from ..optimize import as_constraints, fd_gradient, hessian_fd, minimize
from .continuous import stats_loglik
from .data import ObservedData, ParamMap, group_by_dt
from .dnm import DiscreteLikelihood

TECHNIQUES = ("expm", "ilt", "num")
ACCELERATORS = ("none", "Lange", "qn1", "qn2", "cg")
NUM_NODES = 64


@dataclass
class SufficientStats:
    """Expected jump counts and holding times on ``states``."""

    states: np.ndarray
    U: np.ndarray
    D: np.ndarray
    H: np.ndarray

    def pruned(self, j_tol: float = 0.0, h_tol: float = 0.0) -> "SufficientStats":
        """Zero jump expectations below `j_tol` and holding times below `h_tol`."""
        U = np.where(self.U < j_tol, 0.0, self.U)
        D = np.where(self.D < j_tol, 0.0, self.D)
        H = np.where(self.H < h_tol, 0.0, self.H)
        return SufficientStats(self.states, U, D, H)

    def loglik(self, model: ModelSpec, p) -> float:
        return stats_loglik(model, p, self.states, self.U, self.D, self.H)


def _weights(idx_i, idx_j, counts, probs, n):
    if np.any(~(probs > 0)):
        raise FloatingPointError(
            "an observed transition has zero probability under the current parameters"
        )
    B = np.zeros((n, n))
    np.add.at(B, (idx_i, idx_j), counts / probs)
    return B


def _pair_weights(col, n_cols, counts, probs):
    """Weights ``count / p`` with one row per pair and one column per final state."""
    if np.any(~(probs > 0)):
        raise FloatingPointError(
            "an observed transition has zero probability under the current parameters"
        )
    Bw = np.zeros((col.size, n_cols))
    Bw[np.arange(col.size), col] = counts / probs
    return Bw


def _diagonals_from_full(S):
    return np.diag(S).copy(), np.diag(S, 1).copy(), np.diag(S, -1).copy()


def _stats_expm(model, p, groups, window):
    gen = build_generator(model, p, window)
    n = window.size
    H, up, down = np.zeros(n), np.zeros(n - 1), np.zeros(n - 1)
    for dt, pairs, counts in groups:
        ii, jj = window.index(pairs[:, 0]), window.index(pairs[:, 1])
        P = expm(gen.Q * dt)
        B = _weights(ii, jj, counts, P[ii, jj], n)
        _, S = van_loan_weighted(gen, B, dt)
        h, u, d = _diagonals_from_full(S)
        H += h
        up += u
        down += d
    return gen, H, up, down


def _contract(X, Y):
    """Diagonal, super- and sub-diagonal of ``X @ Y^T`` over the last two axes."""
    h = np.sum(X * Y, axis=-1)
    u = np.sum(X[..., :-1, :] * Y[..., 1:, :], axis=-1)
    d = np.sum(X[..., 1:, :] * Y[..., :-1, :], axis=-1)
    return h, u, d


def _stats_ilt(model, p, groups, window, lentz_eps, laplace_method):
    gen = build_generator(model, p, window)
    n = window.size
    H, up, down = np.zeros(n), np.zeros(n - 1), np.zeros(n - 1)
    for dt, pairs, counts in groups:
        ii, jj = window.index(pairs[:, 0]), window.index(pairs[:, 1])
        uj, col = np.unique(jj, return_inverse=True)
        col = col.ravel()
        methods = ("talbot", "euler") if laplace_method == "cme-talbot" else (laplace_method,)
        for method in methods:
            s, w = laplace.inversion_nodes(dt, method)
            F = laplace.transform_matrix(model, p, window.z_min, window.z_max, s, lentz_eps)
            probs = np.real(np.tensordot(w, F[:, ii, jj], axes=1))
            Bw = _pair_weights(col, uj.size, counts, probs)
            # X[k, a, c] = sum over pairs r ending in column c of F[k, i_r, a] / p_r
            X = np.einsum("kra,rc->kac", F[:, ii, :], Bw)
            Y = F[:, :, uj]
            h, u, d = _contract(X, Y)
            hh = np.real(np.tensordot(w, h, axes=1))
            uu = np.real(np.tensordot(w, u, axes=1))
            dd = np.real(np.tensordot(w, d, axes=1))
            if all(np.all(np.isfinite(v)) for v in (hh, uu, dd)):
                break
        else:
            raise FloatingPointError("Laplace inversion of the E-step integrals failed")
        H += hh
        up += uu
        down += dd
    return gen, H, up, down


def _trapezoid(vals, h):
    return h * (vals.sum(axis=0) - 0.5 * (vals[0] + vals[-1]))


def _stats_num(model, p, groups, window):
    gen = build_generator(model, p, window)
    n = window.size
    H, up, down = np.zeros(n), np.zeros(n - 1), np.zeros(n - 1)
    for dt, pairs, counts in groups:
        ii, jj = window.index(pairs[:, 0]), window.index(pairs[:, 1])
        uj, col = np.unique(jj, return_inverse=True)
        col = col.ravel()
        step = dt / NUM_NODES
        Ph = expm(gen.Q * step)
        powers = [np.eye(n)]
        for _ in range(NUM_NODES):
            powers.append(powers[-1] @ Ph)
        powers = np.stack(powers)
        Bw = _pair_weights(col, uj.size, counts, powers[-1][ii, jj])
        X = np.einsum("mra,rc->mac", powers[:, ii, :], Bw)
        Y = powers[::-1][:, :, uj]
        h, u, d = _contract(X, Y)
        # trapezoid on 64 and 32 intervals combined by one Richardson step
        for acc, v in ((H, h), (up, u), (down, d)):
            fine = _trapezoid(v, step)
            coarse = _trapezoid(v[::2], 2 * step)
            acc += fine + (fine - coarse) / 3.0
    return gen, H, up, down


def expected_stats(model: ModelSpec, p, groups, window: TruncationWindow,
                   technique: str = "expm", lentz_eps: float = 1e-6,
                   laplace_method: str = "cme-talbot") -> SufficientStats:
    """Aggregate E-step statistics over grouped transitions.

    `groups` is the output of :func:`bdpkit.estimate.data.group_by_dt`.
    """
    if technique == "expm":
        gen, H, up, down = _stats_expm(model, p, groups, window)
    elif technique == "ilt":
        gen, H, up, down = _stats_ilt(model, p, groups, window, lentz_eps, laplace_method)
    elif technique == "num":
        gen, H, up, down = _stats_num(model, p, groups, window)
    else:
        raise ValueError(f"unknown E-step technique {technique!r}; choose from {TECHNIQUES}")
    U = np.zeros(window.size)
    D = np.zeros(window.size)
    U[:-1] = gen.birth[:-1] * up
    D[1:] = gen.death[1:] * down
    return SufficientStats(window.states, U, D, H)


def em_expected_stats(model: ModelSpec, p, z_prev: int, z_next: int, dt: float,
                      technique: str = "expm", j_tol: float = 0.0, h_tol: float = 0.0,
                      z_trunc=None, lentz_eps: float = 1e-6,
                      laplace_method: str = "cme-talbot") -> SufficientStats:
    """E-step statistics for a single observed transition ``z_prev -> z_next``
    over `dt`. Entries below the tolerances are reported as zero."""
    p = model.check_params(p)
    if z_trunc is None:
        window = default_window(z_prev, z_next, bound=model.state_bound(p))
    else:
        window = TruncationWindow(int(z_trunc[0]), int(z_trunc[1]))
    groups = [(float(dt), np.array([[z_prev, z_next]]), np.array([1]))]
    st = expected_stats(model, p, groups, window, technique, lentz_eps, laplace_method)
    return st.pruned(j_tol, h_tol)


# ---------------------------------------------------------------------------
# the iteration


class _Problem:
    def __init__(self, model, data, pmap, bounds, constraints, technique, likelihood,
                 lentz_eps, laplace_method, j_tol, h_tol, z_trunc):
        self.model = model
        self.pmap = pmap
        self.bounds = bounds
        self.lo = np.array([b[0] for b in bounds], dtype=float)
        self.hi = np.array([b[1] for b in bounds], dtype=float)
        self.constraints = as_constraints(constraints)
        self.technique = technique
        self.lentz_eps = lentz_eps
        self.laplace_method = laplace_method
        self.j_tol, self.h_tol = j_tol, h_tol
        zp, zn, dt = data.transitions()
        self.groups = group_by_dt(zp, zn, dt)
        self.z_trunc = z_trunc
        self.lo_state = int(min(zp.min(), zn.min()))
        self.hi_state = int(max(zp.max(), zn.max()))
        opts = {"lentz_eps": lentz_eps, "laplace_method": laplace_method} \
            if likelihood == "ilt" else {}
        self.lik = DiscreteLikelihood(model, data, likelihood, z_trunc=z_trunc, **opts)

    def window(self, theta):
        if self.z_trunc is not None:
            return TruncationWindow(int(self.z_trunc[0]), int(self.z_trunc[1]))
        return default_window(self.lo_state, self.hi_state,
                              bound=self.model.state_bound(theta))

    def stats(self, x) -> SufficientStats:
        theta = self.pmap.full(x)
        st = expected_stats(self.model, theta, self.groups, self.window(theta),
                            self.technique, self.lentz_eps, self.laplace_method)
        return st.pruned(self.j_tol, self.h_tol)

    def surrogate(self, st):
        return lambda y: st.loglik(self.model, self.pmap.full(y))

    def m_step(self, st, x):
        q = self.surrogate(st)
        res = minimize(lambda y: -q(y), x, self.bounds, self.constraints, method="local")
        # never let an inexact inner solve lower Q below the current point
        if self.feasible(x) and not q(res.x) >= q(x):
            return x
        return res.x

    def ell(self, x) -> float:
        return self.lik(self.pmap.full(x))

    def feasible(self, x) -> bool:
        if not np.all(np.isfinite(x)):
            return False
        if np.any(x < self.lo) or np.any(x > self.hi):
            return False
        return all(abs(c.violation(x)) < 1e-8 for c in self.constraints)

    def grad(self, q, x):
        return fd_gradient(q, x, self.lo, self.hi)


def _line_search(prob, x, d, ell_x):
    """Step length along `d` that increases the likelihood, or ``None``."""
    best, best_val = None, ell_x
    alpha = 1.0
    for _ in range(6):
        cand = x + alpha * d
        if prob.feasible(cand):
            v = prob.ell(cand)
            if v > best_val:
                best, best_val = cand, v
                break
        alpha *= 0.5
    if best is None:
        return None, ell_x
    if alpha == 1.0:
        for _ in range(3):
            alpha *= 2.0
            cand = x + alpha * d
            if not prob.feasible(cand):
                break
            v = prob.ell(cand)
            if v <= best_val:
                break
            best, best_val = cand, v
    return best, best_val


class _Accelerator:
    """Proposes a point from the current iterate; ``None`` means no proposal."""

    def __init__(self, prob: _Problem):
        self.prob = prob

    def propose(self, x, x_em, st, ell_x):
        return None, None


class _Lange(_Accelerator):
    def __init__(self, prob):
        super().__init__(prob)
        self.B = None
        self.prev = None  # (x, gradient of Q(.|x) at x)

    def propose(self, x, x_em, st, ell_x):
        q = self.prob.surrogate(st)
        g = self.prob.grad(q, x)
        if self.B is None:
            self.B = np.zeros((x.size, x.size))
        if self.prev is not None:
            x_old, g_old = self.prev
            s = x - x_old
            h = self.prob.grad(q, x_old) - g_old
            v = h - self.B @ s
            denom = float(v @ s)
            if abs(denom) > 1e-12 * np.linalg.norm(v) * np.linalg.norm(s):
                self.B = self.B + np.outer(v, v) / denom
        self.prev = (x.copy(), g)
        try:
            A = hessian_fd(q, x) + self.B
            step = -np.linalg.solve(A, g)
        except (np.linalg.LinAlgError, FloatingPointError):
            return None, None
        if not np.all(np.isfinite(step)):
            return None, None
        return _line_search(self.prob, x, step, ell_x)


class _QN1(_Accelerator):
    def __init__(self, prob):
        super().__init__(prob)
        self.A = None
        self.prev = None  # (x, g_tilde)

    def propose(self, x, x_em, st, ell_x):
        gt = x_em - x
        if self.A is None:
            self.A = -np.eye(x.size)
        if self.prev is not None:
            dx = x - self.prev[0]
            dg = gt - self.prev[1]
            denom = float(dx @ self.A @ dg)
            if abs(denom) > 1e-14:
                self.A = self.A + np.outer(dx - self.A @ dg, dx @ self.A) / denom
        self.prev = (x.copy(), gt)
        return _line_search(self.prob, x, -self.A @ gt, ell_x)


class _QN2(_Accelerator):
    def __init__(self, prob):
        super().__init__(prob)
        self.S = None
        self.prev = None  # (x, g_tilde, gradient)

    def propose(self, x, x_em, st, ell_x):
        gt = x_em - x
        g = self.prob.grad(self.prob.surrogate(st), x)
        if self.S is None:
            self.S = np.zeros((x.size, x.size))
        if self.prev is not None:
            dx = x - self.prev[0]
            dgt = gt - self.prev[1]
            dg = g - self.prev[2]
            u_dg = float(dx @ dg)
            if abs(u_dg) > 1e-14:
                e = -dx - dgt - self.S @ dg
                self.S = (self.S + (np.outer(e, dx) + np.outer(dx, e)) / u_dg
                          - float(e @ dg) * np.outer(dx, dx) / u_dg ** 2)
        self.prev = (x.copy(), gt, g)
        return _line_search(self.prob, x, gt + self.S @ g, ell_x)


class _CG(_Accelerator):
    def __init__(self, prob):
        super().__init__(prob)
        self.prev = None  # (g_tilde, gradient, direction)

    def propose(self, x, x_em, st, ell_x):
        gt = x_em - x
        g = self.prob.grad(self.prob.surrogate(st), x)
        d = gt
        if self.prev is not None:
            gt0, g0, d0 = self.prev
            denom = float(d0 @ (g - g0))
            if abs(denom) > 1e-14:
                beta = -float(g @ (gt - gt0)) / denom
                d = gt + beta * d0
            if float(g @ d) <= 0:
                d = gt
        self.prev = (gt, g, d)
        return _line_search(self.prob, x, d, ell_x)


_ACCEL = {"none": _Accelerator, "Lange": _Lange, "qn1": _QN1, "qn2": _QN2, "cg": _CG}


def em_estimate(model: ModelSpec, data: ObservedData, pmap: ParamMap, p0, bounds,
                constraints=(), technique: str = "expm", accelerator: str = "none",
                likelihood: str = "expm", laplace_method: str = "cme-talbot",
                lentz_eps: float = 1e-6, max_it: int = 100, i_tol: float = 1e-3,
                j_tol: float = 1e-2, h_tol: float = 1e-2, z_trunc=None):
    """Run EM from `p0` (free parameters).

    Iteration stops when the L1 change of the free parameters falls below
    `i_tol` or after `max_it` iterations. Accelerated proposals are only
    accepted when they stay feasible and increase the discrete likelihood;
    otherwise the plain EM step is taken.

    Returns
    -------
    dict
        ``x`` (free estimate), ``val`` (log-likelihood under `likelihood`),
        ``iterations`` (full parameter vector after each step),
        ``converged``, ``message`` and ``accelerated`` (accepted proposals).
    """
    if technique not in TECHNIQUES:
        raise ValueError(f"unknown E-step technique {technique!r}; choose from {TECHNIQUES}")
    if accelerator not in _ACCEL:
        raise ValueError(f"unknown accelerator {accelerator!r}; choose from {ACCELERATORS}")
    prob = _Problem(model, data, pmap, bounds, constraints, technique, likelihood,
                    lentz_eps, laplace_method, j_tol, h_tol, z_trunc)
    acc = _ACCEL[accelerator](prob)
    x = np.clip(np.asarray(p0, dtype=float), prob.lo, prob.hi)
    trace = [pmap.full(x)]
    ell_x = prob.ell(x) if accelerator != "none" else None
    converged, accepted = False, 0
    for _ in range(max_it):
        st = prob.stats(x)
        x_em = prob.m_step(st, x)
        x_new, v = acc.propose(x, x_em, st, ell_x)
        if x_new is None:
            x_new = x_em
            if accelerator != "none":
                v = prob.ell(x_new)
        else:
            accepted += 1
        change = float(np.sum(np.abs(x_new - x)))
        x, ell_x = x_new, v
        trace.append(pmap.full(x))
        if change < i_tol:
            converged = True
            break
    val = prob.ell(x)
    msg = "converged" if converged else f"stopped after {max_it} iterations"
    return {"x": x, "val": val, "iterations": trace, "converged": converged,
            "message": msg, "accelerated": accepted}
