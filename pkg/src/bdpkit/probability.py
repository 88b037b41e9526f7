"""Transition probabilities ``p_ij(t) = P(Z(t) = j | Z(0) = i)``.

Methods
-------
expm      matrix exponential of the truncated generator
uniform   uniformisation (Poisson mixture of powers of the jump chain)
Erlang    Erlangisation via resolvent powers
ilt       continued-fraction Laplace transform, inverted numerically
da        diffusion approximation (Normal density from the mean/variance ODEs)
oua       Ornstein-Uhlenbeck approximation around a stable equilibrium
gwa       Galton-Watson (locally linear) approximation
gwasa     saddlepoint approximation of the Galton-Watson law
sim       Monte Carlo from exact simulation
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.integrate import solve_ivp
from scipy.special import gammaln, logsumexp, xlogy

from . import laplace
from .linalg import build_generator, expm, resolve_window
from .models import ModelSpec, growth_derivative, stable_equilibria
from .simulate import as_generator, gw_betas, simulate_batch

METHODS = ("expm", "uniform", "Erlang", "ilt", "da", "oua", "gwa", "gwasa", "sim")
ANCHORS = ("i", "j", "max", "min", "midpoint")
UNIFORM_TAIL = 1e-10
ERLANG_K = 150
RK4_STEPS = 1000


def _as_states(z):
    z = np.atleast_1d(np.asarray(z))
    if np.any(z < 0) or np.any(z != np.round(z)):
        raise ValueError("states must be non-negative integers")
    return z.astype(np.int64)


def _as_times(t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("times must be non-negative")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    return t


def probability(z0, zt, t, model: ModelSpec, p, method: str = "expm", **options):
    """Transition probabilities for every combination of `t`, `z0` and `zt`.

    Parameters
    ----------
    z0, zt : int or array_like of int
        Initial and final population sizes.
    t : float or array_like
        Elapsed times, strictly increasing when more than one is given.
    method : str
        One of ``METHODS``.
    **options
        ``z_trunc`` (window ``(z_min, z_max)`` for expm, uniform and Erlang),
        ``k`` (uniform terms, Erlang shape or sim sample count),
        ``lentz_eps`` and ``laplace_method`` (ilt), ``anchor`` (gwa, gwasa),
        ``normalize`` (da, oua) and ``seed`` (sim).

    Returns
    -------
    ndarray
        Shape ``(len(t), len(z0), len(zt))``, or ``(len(z0), len(zt))`` when a
        single time is given.
    """
    if method not in METHODS:
        raise ValueError(f"unknown probability method {method!r}; choose from {METHODS}")
    p = model.check_params(p)
    i = _as_states(z0)
    j = _as_states(zt)
    ts = _as_times(t)
    out = np.empty((ts.size, i.size, j.size))
    zero = ts == 0
    out[zero] = (i[:, None] == j[None, :]).astype(float)
    pos = ts[~zero]
    if pos.size:
        out[~zero] = _DISPATCH[method](model, p, i, j, pos, **options)
    return out[0] if ts.size == 1 else out


# ---------------------------------------------------------------------------
# methods exact on the truncation window

def _window(model, p, i, j, z_trunc):
    w = resolve_window(z_trunc, i, j, bound=model.state_bound(p))
    if not (w.contains(i) and w.contains(j)):
        raise ValueError(
            f"states outside the truncation window [{w.z_min}, {w.z_max}]; widen z_trunc"
        )
    return w


def _expm(model, p, i, j, ts, z_trunc=None, **_):
    w = _window(model, p, i, j, z_trunc)
    Q = build_generator(model, p, w).Q
    ii, jj = w.index(i), w.index(j)
    return np.stack([expm(Q * t)[np.ix_(ii, jj)] for t in ts])


def _uniform(model, p, i, j, ts, z_trunc=None, k=None, **_):
    w = _window(model, p, i, j, z_trunc)
    Q = build_generator(model, p, w).Q
    a = float(np.max(-np.diag(Q)))
    ii, jj = w.index(i), w.index(j)
    if a == 0.0:
        return np.broadcast_to((i[:, None] == j[None, :]).astype(float),
                               (ts.size, i.size, j.size)).copy()
    A = Q / a + np.eye(w.size)
    out = []
    for t in ts:
        n_terms = k if k is not None else int(stats.poisson.isf(UNIFORM_TAIL, a * t)) + 1
        weights = stats.poisson.pmf(np.arange(n_terms + 1), a * t)
        V = np.zeros((i.size, w.size))
        V[np.arange(i.size), ii] = 1.0
        acc = weights[0] * V
        for n in range(1, n_terms + 1):
            V = V @ A
            acc += weights[n] * V
        out.append(acc[:, jj])
    return np.stack(out)


def resolvent(Q, eta):
    """``eta (eta I - Q)^{-1}`` for a tridiagonal generator `Q`."""
    n = Q.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = -np.diag(Q, 1)
    ab[1] = eta - np.diag(Q)
    ab[2, :-1] = -np.diag(Q, -1)
    return scipy.linalg.solve_banded((1, 1), ab, eta * np.eye(n))


def _erlang(model, p, i, j, ts, z_trunc=None, k=ERLANG_K, **_):
    if k is None:
        k = ERLANG_K
    if k < 1:
        raise ValueError("Erlang shape k must be at least 1")
    w = _window(model, p, i, j, z_trunc)
    Q = build_generator(model, p, w).Q
    ii, jj = w.index(i), w.index(j)
    out = []
    for t in ts:
        R = resolvent(Q, k / t)
        out.append(np.linalg.matrix_power(R, int(k))[np.ix_(ii, jj)])
    return np.stack(out)


def _ilt(model, p, i, j, ts, lentz_eps=1e-6, laplace_method="cme-talbot", **_):
    lo = int(min(i.min(), j.min()))
    hi = int(max(i.max(), j.max()))
    F = lambda s: laplace.transform_matrix(model, p, lo, hi, s, lentz_eps)  # noqa: E731
    out = []
    for t in ts:
        full = laplace.invert(F, float(t), laplace_method)
        out.append(full[np.ix_(i - lo, j - lo)])
    return np.clip(np.stack(out), 0.0, None)


# ---------------------------------------------------------------------------
# diffusion-based methods

def diffusion_moments(model: ModelSpec, p, z0, dt, steps: int = RK4_STEPS,
                      variance: bool = True):
    """Integrate the diffusion mean and variance ODEs with classical RK4.

    ``dm/ds = lam(m) - mu(m)`` and ``dv/ds = 2 H(m) v + lam(m) + mu(m)`` with
    ``H`` the derivative of the net growth rate. All arguments broadcast, and
    each element uses its own step ``dt / steps``.

    Returns
    -------
    m, v : ndarray
    """
    z0, dt = np.broadcast_arrays(np.asarray(z0, dtype=float), np.asarray(dt, dtype=float))
    return _continue_moments(model, p, z0.astype(float), np.zeros(z0.shape), dt, steps,
                             variance)


def fm_mean(model: ModelSpec, p, z0, dt, steps=None, rtol: float = 1e-10):
    """Deterministic (fluid) mean ``m(dt)`` started from `z0`.

    With ``steps=None`` all elements are integrated together by an adaptive
    Dormand-Prince solver on the rescaled clock ``s = t / dt``; an integer
    `steps` selects fixed-step RK4 instead.
    """
    if steps is not None:
        return diffusion_moments(model, p, z0, dt, steps, variance=False)[0]
    z0, dt = np.broadcast_arrays(np.asarray(z0, dtype=float), np.asarray(dt, dtype=float))
    shape = z0.shape
    y0, scale = z0.ravel().copy(), dt.ravel().copy()
    if y0.size == 0 or not np.any(scale > 0):
        return z0.astype(float).copy()

    def rhs(_, m):
        mm = np.maximum(m, 0.0)
        return scale * (model.birth(mm, p) - model.death(mm, p))

    sol = solve_ivp(rhs, (0.0, 1.0), y0, method="DOP853", rtol=rtol,
                    atol=rtol * max(1.0, float(np.max(np.abs(y0)))))
    if not sol.success:
        return diffusion_moments(model, p, z0, dt, RK4_STEPS, variance=False)[0]
    return np.maximum(sol.y[:, -1], 0.0).reshape(shape)


def _normal_pmf(mean, var, j, normalize):
    """Normal density at integer `j`; indicator at the rounded mean when the
    variance is degenerate."""
    mean = np.asarray(mean, dtype=float)[..., None]
    var = np.asarray(var, dtype=float)[..., None]
    jj = np.asarray(j, dtype=float)
    degenerate = ~(var > 0)
    safe = np.where(degenerate, 1.0, var)
    dens = np.exp(-0.5 * (jj - mean) ** 2 / safe) / np.sqrt(2 * np.pi * safe)
    if normalize:
        sd = np.sqrt(safe)
        lo = np.maximum(np.floor(mean - 12 * sd), 0)
        hi = np.ceil(mean + 12 * sd)
        span = int(np.max(hi - lo)) + 1
        grid = lo + np.arange(span)
        tot = np.sum(np.exp(-0.5 * (grid - mean) ** 2 / safe), axis=-1, keepdims=True)
        dens = np.exp(-0.5 * (jj - mean) ** 2 / safe) / np.where(tot > 0, tot, 1.0)
    ind = (jj == np.round(mean)).astype(float)
    return np.where(degenerate, ind, dens)


def _da(model, p, i, j, ts, normalize=False, steps=RK4_STEPS, **_):
    out = np.empty((ts.size, i.size, j.size))
    m = i.astype(float)
    v = np.zeros_like(m)
    prev = 0.0
    for n, t in enumerate(ts):
        m, v = _continue_moments(model, p, m, v, t - prev, steps)
        prev = t
        out[n] = _normal_pmf(m, v, j, normalize)
    return out


def _continue_moments(model, p, m, v, dt, steps, variance=True):
    """Advance the moment ODEs from an arbitrary (m, v) state."""
    h = dt / steps

    def rhs(m, v):
        mm = np.maximum(m, 0.0)
        lam = model.birth(mm, p)
        mu = model.death(mm, p)
        if not variance:
            return lam - mu, 0.0 * v
        return lam - mu, 2.0 * growth_derivative(model, p, mm) * v + lam + mu

    for _ in range(steps):
        k1m, k1v = rhs(m, v)
        k2m, k2v = rhs(m + 0.5 * h * k1m, v + 0.5 * h * k1v)
        k3m, k3v = rhs(m + 0.5 * h * k2m, v + 0.5 * h * k2v)
        k4m, k4v = rhs(m + h * k3m, v + h * k3v)
        m = m + h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return m, v


def oua_equilibrium(model: ModelSpec, p, z_upper=1e6):
    """Stable equilibrium ``z_eq`` (most negative growth derivative) and
    ``H(z_eq)``."""
    eq = stable_equilibria(model, p, z_upper)
    if not eq:
        raise ValueError(
            "the oua method needs a stable equilibrium (birth = death with negative "
            "growth derivative); none exists for these parameters, use another method"
        )
    return eq[0]


def _oua(model, p, i, j, ts, normalize=False, **_):
    z_eq, H = oua_equilibrium(model, p)
    s2 = float(model.birth(z_eq, p) + model.death(z_eq, p))
    out = np.empty((ts.size, i.size, j.size))
    for n, t in enumerate(ts):
        mean = z_eq + np.exp(H * t) * (i - z_eq)
        var = s2 / (2 * H) * (np.exp(2 * H * t) - 1.0) * np.ones(i.size)
        out[n] = _normal_pmf(mean, var, j, normalize)
    return out


# ---------------------------------------------------------------------------
# Galton-Watson methods

def _anchor(i, j, anchor):
    i = np.asarray(i, dtype=float)
    j = np.asarray(j, dtype=float)
    if anchor == "i":
        b = i + 0 * j
    elif anchor == "j":
        b = j + 0 * i
    elif anchor == "max":
        b = np.maximum(i, j)
    elif anchor == "min":
        b = np.minimum(i, j)
    elif anchor == "midpoint":
        b = 0.5 * (i + j)
    else:
        raise ValueError(f"unknown anchor {anchor!r}; choose from {ANCHORS}")
    return np.where(b > 0, b, np.maximum(np.maximum(i, j), 1.0))


def _linear_rates(model, p, i, j, anchor):
    b = _anchor(i[:, None], j[None, :], anchor)
    return model.birth(b, p) / b, model.death(b, p) / b


def linear_bdp_pmf(i, j, b1, b2):
    """Law of a linear birth-and-death process at one time, given ``beta1`` and
    ``beta2``. Arguments broadcast; evaluated in log space."""
    i, j, b1, b2 = np.broadcast_arrays(np.asarray(i, dtype=float), np.asarray(j, dtype=float),
                                       np.asarray(b1, dtype=float), np.asarray(b2, dtype=float))
    out = np.zeros(i.shape)
    flat = [a.ravel() for a in (i, j, b1, b2)]
    res = out.ravel()
    smax = int(np.max(np.minimum(i, j), initial=0))
    s = np.arange(1, max(smax, 1) + 1, dtype=float)
    ii, jj, B1, B2 = (a[:, None] for a in flat)
    valid = s[None, :] <= np.minimum(ii, jj)
    with np.errstate(divide="ignore", invalid="ignore"):
        lc = (gammaln(ii + 1) - gammaln(s + 1) - gammaln(ii - s + 1)
              + gammaln(jj) - gammaln(s) - gammaln(jj - s + 1))
        terms = (lc + xlogy(ii - s, B1) + xlogy(s, (1 - B1) * (1 - B2))
                 + xlogy(jj - s, B2))
        terms = np.where(valid, terms, -np.inf)
        res[:] = np.exp(logsumexp(terms, axis=1))
    i0, j0, b10 = flat[0], flat[1], flat[2]
    res[j0 == 0] = np.where(i0[j0 == 0] == 0, 1.0, b10[j0 == 0] ** i0[j0 == 0])
    res[(i0 == 0) & (j0 > 0)] = 0.0
    return np.nan_to_num(res.reshape(i.shape))


def _gwa(model, p, i, j, ts, anchor="i", **_):
    lam, mu = _linear_rates(model, p, i, j, anchor)
    out = np.empty((ts.size, i.size, j.size))
    for n, t in enumerate(ts):
        b1, b2 = gw_betas(lam, mu, t)
        out[n] = linear_bdp_pmf(i[:, None], j[None, :], b1, b2)
    return out


def _saddlepoint(i, j, b1, b2, max_iter=100):
    """Lattice saddlepoint approximation of the linear-BDP law at ``j >= 1``.

    Uses ``G(u) = b1 + (1-b1)(1-b2) u / (1 - b2 u)`` for the generating
    function of one family, ``K(x) = i log G(e^x)`` and solves ``K'(x) = j`` by
    Newton iteration safeguarded with bisection. Returns the approximation and
    a convergence flag.
    """
    i, j, b1, b2 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (i, j, b1, b2)))
    c = (1 - b1) * (1 - b2)

    def derivs(x):
        u = np.exp(x)
        den = 1 - b2 * u
        G = b1 + c * u / den
        G1 = c / den ** 2
        G2 = 2 * b2 * c / den ** 3
        r = G1 / G
        A = u * r  # K'/i
        dA = r + u * G2 / G - u * r ** 2
        return i * np.log(G), i * A, i * u * dA

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        hi = np.where(b2 > 0, -np.log(np.where(b2 > 0, b2, 1.0)) - 1e-12, 50.0)
        lo = np.full(i.shape, -50.0)
        x = np.clip(np.minimum(0.0, hi - 1.0), lo, hi)
        ok = np.zeros(i.shape, dtype=bool)
        for _ in range(max_iter):
            _, K1, K2 = derivs(x)
            f = K1 - j
            lo = np.where(f < 0, x, lo)
            hi = np.where(f > 0, x, hi)
            step = f / K2
            xn = x - step
            bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            ok = np.abs(f) < 1e-10 * np.maximum(j, 1)
            x = np.where(ok, x, xn)
            if ok.all():
                break
        K, K1, K2 = derivs(x)
        val = np.exp(K - x * j) / np.sqrt(2 * np.pi * K2)
    # near-degenerate laws (tiny t) give values above one; those are rejected too
    ok = ok & np.isfinite(val) & (K2 > 0) & (val <= 1.0)
    return val, ok


def _gwasa(model, p, i, j, ts, anchor="i", **_):
    lam, mu = _linear_rates(model, p, i, j, anchor)
    I = np.broadcast_to(i[:, None], lam.shape).astype(float)
    J = np.broadcast_to(j[None, :], lam.shape).astype(float)
    out = np.empty((ts.size, i.size, j.size))
    for n, t in enumerate(ts):
        b1, b2 = gw_betas(lam, mu, t)
        exact = linear_bdp_pmf(I, J, b1, b2)
        # cases with a closed form: j = 0, i = 0, and the finite support when b2 = 0
        closed = (J == 0) | (I == 0) | ((b2 == 0) & (J >= I))
        sp, ok = _saddlepoint(I, np.maximum(J, 1), b1, b2)
        out[n] = np.where(closed | ~ok, exact, sp)
    return out


# ---------------------------------------------------------------------------
# simulation

def _sim(model, p, i, j, ts, k=None, seed=None, **_):
    k = 10000 if k is None else int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = as_generator(seed)
    out = np.empty((ts.size, i.size, j.size))
    for a, z in enumerate(i):
        cur = np.full(k, z, dtype=np.int64)
        prev = 0.0
        for n, t in enumerate(ts):
            cur = simulate_batch(model, p, cur, np.full(k, t - prev), "exact", rng=rng)
            prev = t
            out[n, a] = (cur[:, None] == j[None, :]).mean(axis=0)
    return out


_DISPATCH = {
    "expm": _expm,
    "uniform": _uniform,
    "Erlang": _erlang,
    "ilt": _ilt,
    "da": _da,
    "oua": _oua,
    "gwa": _gwa,
    "gwasa": _gwasa,
    "sim": _sim,
}


# ---------------------------------------------------------------------------
# scalar conveniences

def prob_expm(model, p, i, j, t, window=None):
    return probability(i, j, t, model, p, "expm", z_trunc=window).item()


def prob_uniform(model, p, i, j, t, window=None, k=None):
    return probability(i, j, t, model, p, "uniform", z_trunc=window, k=k).item()


def prob_erlang(model, p, i, j, t, window=None, k=ERLANG_K):
    return probability(i, j, t, model, p, "Erlang", z_trunc=window, k=k).item()


def prob_ilt(model, p, i, j, t, lentz_eps=1e-6, laplace_method="cme-talbot"):
    return probability(i, j, t, model, p, "ilt", lentz_eps=lentz_eps,
                       laplace_method=laplace_method).item()


def prob_da(model, p, i, j, t, normalize=False):
    return probability(i, j, t, model, p, "da", normalize=normalize).item()


def prob_oua(model, p, i, j, t, normalize=False):
    return probability(i, j, t, model, p, "oua", normalize=normalize).item()


def prob_gwa(model, p, i, j, t, anchor="i"):
    return probability(i, j, t, model, p, "gwa", anchor=anchor).item()


def prob_gwasa(model, p, i, j, t, anchor="i"):
    return probability(i, j, t, model, p, "gwasa", anchor=anchor).item()


def prob_sim(model, p, i, j, t, k=10000, seed=None):
    return probability(i, j, t, model, p, "sim", k=k, seed=seed).item()
