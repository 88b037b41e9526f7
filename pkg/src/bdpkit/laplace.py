"""Continued-fraction Laplace transforms of transition functions and numerical
Laplace inversion.

For a birth-and-death chain with rates ``lam_z``, ``mu_z`` the transform
``f_ij(s) = int_0^inf exp(-s t) p_ij(t) dt`` is expressed through the
coefficients

    a_1 = 1,  a_k = -lam_{k-2} mu_{k-1}          (k >= 2)
    b_1 = s + lam_0,  b_k = s + lam_{k-1} + mu_{k-1}

and the three-term recursion ``B_k = b_k B_{k-1} + a_k B_{k-2}``. We carry
the ratios ``r_k = B_k / B_{k-1}`` instead of ``B_k`` itself, which removes
any need for rescaling and keeps every quantity of order ``|s| + rates``.
"""

from __future__ import annotations

from math import comb, factorial, log

import numpy as np

from .models import ModelSpec

TINY = 1e-30
MAX_TERMS = 100000


def lentz(a_seq, b_seq, eps: float = 1e-6, tiny: float = TINY, max_terms: int = MAX_TERMS):
    """Evaluate ``a_1/(b_1 + a_2/(b_2 + ...))`` by the modified Lentz method.

    Parameters
    ----------
    a_seq, b_seq : callable
        ``k -> a_k`` and ``k -> b_k`` for ``k = 1, 2, ...``. Values may be
        complex numpy arrays, in which case the fraction is evaluated
        elementwise and iteration continues until every element converged.
    eps : float
        Stop once the per-step multiplier is within `eps` of one.
    """
    f = None
    C = D = None
    for k in range(1, max_terms + 1):
        a = a_seq(k)
        b = b_seq(k)
        if f is None:
            shape = np.broadcast(np.asarray(a), np.asarray(b)).shape
            f = np.full(shape, tiny, dtype=complex)
            C = f.copy()
            D = np.zeros(shape, dtype=complex)
        D = b + a * D
        D = np.where(D == 0, tiny, D)
        C = b + a / C
        C = np.where(C == 0, tiny, C)
        D = 1.0 / D
        delta = C * D
        f = f * delta
        if np.all(np.abs(delta - 1.0) < eps):
            return f if f.ndim else complex(f)
    raise RuntimeError(f"continued fraction did not converge in {max_terms} terms")


class _Coefficients:
    """Rates and continued-fraction coefficients evaluated lazily."""

    def __init__(self, model: ModelSpec, p):
        self.model = model
        self.p = p
        self._lam = np.zeros(0)
        self._mu = np.zeros(0)

    def _grow(self, n):
        if n <= self._lam.size:
            return
        n = max(n, 2 * self._lam.size, 64)
        z = np.arange(n, dtype=float)
        self._lam = np.asarray(self.model.birth(z, self.p), dtype=float)
        self._mu = np.asarray(self.model.death(z, self.p), dtype=float)

    def lam(self, z):
        self._grow(int(np.max(z)) + 1)
        return self._lam[z]

    def mu(self, z):
        self._grow(int(np.max(z)) + 1)
        return self._mu[z]

    def a(self, k):
        if k == 1:
            return 1.0
        return -self.lam(k - 2) * self.mu(k - 1)

    def b(self, k, s):
        if k == 1:
            return s + self.lam(0)
        return s + self.lam(k - 1) + self.mu(k - 1)


def _ratios(co: _Coefficients, s, kmax):
    """``r_k`` for ``k = 1..kmax`` as an array of shape ``(kmax, *s.shape)``."""
    out = np.empty((kmax,) + np.shape(s), dtype=complex)
    r = co.b(1, s)
    out[0] = r
    for k in range(2, kmax + 1):
        r = co.b(k, s) + co.a(k) / r
        out[k - 1] = r
    return out


def _tail(co: _Coefficients, m, s, eps):
    """``T_m = a_{m+2}/(b_{m+2} + a_{m+3}/(b_{m+3} + ...))``."""
    return lentz(lambda k: co.a(m + 1 + k), lambda k: co.b(m + 1 + k, s), eps)


def transform_pij(model: ModelSpec, p, i: int, j: int, s, lentz_eps: float = 1e-6):
    """Laplace transform of ``p_ij(t)`` at (possibly array-valued) `s`."""
    if i < 0 or j < 0:
        raise ValueError("states must be non-negative")
    s = np.asarray(s, dtype=complex)
    co = _Coefficients(model, p)
    top = max(i, j)
    r = _ratios(co, s, top + 1)
    denom = r[top] + _tail(co, top, s, lentz_eps)
    val = 1.0 / denom
    if j <= i:
        for k in range(j + 1, i + 1):
            val = val * co.mu(k) / r[k - 1]
    else:
        for k in range(i + 1, j + 1):
            val = val * co.lam(k - 1) / r[k - 1]
    return val if val.ndim else complex(val)


def transform_matrix(model: ModelSpec, p, z_min: int, z_max: int, s, lentz_eps: float = 1e-6):
    """All transforms ``f_ij(s)`` for ``z_min <= i, j <= z_max``.

    Returns an array of shape ``(len(s), n, n)`` with ``n = z_max - z_min + 1``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=complex))
    co = _Coefficients(model, p)
    n = z_max - z_min + 1
    r = _ratios(co, s, z_max + 1)  # r[k-1] = r_k
    # tails T_m for m = z_min..z_max by backward recursion from a Lentz seed
    T = np.empty((n,) + s.shape, dtype=complex)
    T[-1] = _tail(co, z_max, s, lentz_eps)
    for m in range(z_max - 1, z_min - 1, -1):
        T[m - z_min] = co.a(m + 2) / (co.b(m + 2, s) + T[m + 1 - z_min])
    states = np.arange(z_min, z_max + 1)
    diag = 1.0 / (r[states] + T)  # r_{m+1} + T_m
    mu = co.mu(states)
    lam = co.lam(states)
    # r_0 is never used (mu_0 = 0); a placeholder of 1 keeps the shapes aligned
    rr = r[states - 1] if z_min > 0 else np.concatenate([np.ones_like(r[:1]), r[states[1:] - 1]])
    down = mu[:, None] / rr  # mu_k / r_k for k = state
    up = lam[:-1, None] / rr[1:]  # lam_{k-1} / r_k for k = state+1
    out = np.zeros((s.size, n, n), dtype=complex)
    for i in range(n):
        out[:, i, i] = diag[i]
        if i > 0:
            fac = np.cumprod(down[i:0:-1], axis=0)  # k = i, i-1, ..., 1 (relative)
            out[:, i, i - 1::-1] = (diag[i] * fac).T
        if i < n - 1:
            fac = np.cumprod(up[i:], axis=0)
            out[:, i, i + 1:] = (fac * diag[i + 1:]).T
    return out


# ---------------------------------------------------------------------------
# inversion

def _talbot_nodes(t, M):
    r = 2.0 * M / (5.0 * t)
    theta = np.arange(1, M) * np.pi / M
    cot = 1.0 / np.tan(theta)
    s = r * theta * (cot + 1j)
    sigma = theta + (theta * cot - 1.0) * cot
    nodes = np.concatenate(([r + 0j], s))
    weights = np.concatenate(
        ([0.5 * np.exp(r * t)], np.exp(t * s) * (1.0 + 1j * sigma))
    ) * (r / M)
    return nodes, weights


def _euler_nodes(t, M):
    xi = np.zeros(2 * M + 1)
    xi[0] = 0.5
    xi[1:M + 1] = 1.0
    xi[2 * M] = 2.0 ** -M
    for k in range(1, M):
        xi[2 * M - k] = xi[2 * M - k + 1] + 2.0 ** -M * comb(M, k)
    k = np.arange(2 * M + 1)
    eta = (-1.0) ** k * xi
    beta = M * log(10.0) / 3.0 + 1j * np.pi * k
    return beta / t, eta * 10.0 ** (M / 3.0) / t


def _stehfest_weights(N):
    half = N // 2
    V = np.zeros(N)
    for k in range(1, N + 1):
        acc = 0.0
        for j in range((k + 1) // 2, min(k, half) + 1):
            acc += (j ** half * factorial(2 * j)) / (
                factorial(half - j) * factorial(j) * factorial(j - 1)
                * factorial(k - j) * factorial(2 * j - k)
            )
        V[k - 1] = (-1) ** (half + k) * acc
    return V


def inversion_nodes(t: float, method: str = "talbot", terms=None):
    """Nodes ``s_k`` and weights ``w_k`` such that
    ``f(t) ~ Re(sum_k w_k F(s_k))``."""
    if t <= 0:
        raise ValueError("inversion time must be positive")
    if method == "talbot":
        return _talbot_nodes(t, terms or 24)
    if method == "euler":
        return _euler_nodes(t, terms or 16)
    if method == "gaver-stehfest":
        N = terms or 14
        if N % 2:
            raise ValueError("Gaver-Stehfest needs an even number of terms")
        s = np.arange(1, N + 1) * log(2.0) / t
        return s.astype(complex), _stehfest_weights(N) * log(2.0) / t
    raise ValueError(
        f"unknown Laplace inversion method {method!r}; "
        "use 'talbot', 'euler', 'gaver-stehfest' or 'cme-talbot'"
    )


def invert(F, t: float, method: str = "talbot", terms=None):
    """Invert the transform `F` at time `t`.

    `F` maps a 1-D complex array of nodes to an array whose first axis runs
    over the nodes; the result keeps the remaining axes. ``"cme-talbot"``
    tries the Talbot contour and falls back to Euler summation whenever the
    result is not finite.
    """
    if method == "cme-talbot":
        out = invert(F, t, "talbot", terms)
        if np.all(np.isfinite(out)):
            return out
        return invert(F, t, "euler")
    s, w = inversion_nodes(t, method, terms)
    vals = np.asarray(F(s))
    if not np.all(np.isfinite(vals)):
        bad = np.flatnonzero(~np.all(np.isfinite(vals.reshape(len(s), -1)), axis=1))
        if method == "talbot":
            return np.full(vals.shape[1:], np.nan) if vals.ndim > 1 else np.nan
        raise FloatingPointError(f"transform not finite at node s = {s[bad[0]]}")
    w = w.reshape((-1,) + (1,) * (vals.ndim - 1))
    out = np.real(np.sum(w * vals, axis=0))
    return out if out.ndim else float(out)
