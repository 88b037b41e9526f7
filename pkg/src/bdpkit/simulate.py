"""Sample-path simulation: exact (Gillespie), Euler and midpoint tau-leaping,
and the Galton-Watson piecewise-linear approximation.

Public functions give every sample path its own random stream, derived from
``(seed, path_index)``, so a path does not depend on how many other paths are
simulated alongside it. The ``*_batch`` kernels advance many independent
copies at once from a single generator and serve the Monte Carlo consumers
(probability estimation, ABC, forecasting).
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import exprel

from .models import ModelSpec

METHODS = ("exact", "ea", "ma", "gwa")
MAX_SURVIVAL_ATTEMPTS = 100000
_CHUNK = 1024


@dataclass
class ContinuousPath:
    jump_times: np.ndarray
    states: np.ndarray


def path_rng(seed, index: int) -> np.random.Generator:
    """Independent generator for sample path `index` under master `seed`."""
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(seed)
    child = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (int(index),))
    return np.random.Generator(np.random.PCG64(child))


def master_seed(seed) -> np.random.SeedSequence:
    """Normalise an int, None or Generator seed to a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return np.random.SeedSequence(int(seed.integers(2**63)))
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(master_seed(seed)))


class RateTable:
    """Birth and death rates on integer states, extended on demand."""

    def __init__(self, model: ModelSpec, p):
        self.model = model
        self.p = p
        self.lam = []
        self.mu = []

    def grow(self, z):
        n = len(self.lam)
        if z < n:
            return
        m = max(z + 1, 2 * n, 256)
        zs = np.arange(n, m, dtype=float)
        lam = self.model.birth(zs, self.p)
        mu = self.model.death(zs, self.p)
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
            raise FloatingPointError("non-finite rate encountered during simulation")
        self.lam.extend(lam.tolist())
        self.mu.extend(mu.tolist())


def _scalar_rates(model: ModelSpec, p):
    """Clamped rates at a real scalar `z`, skipping numpy broadcasting."""
    rb, rd = model.raw_birth, model.raw_death

    def rates(z):
        lam = float(rb(z, p))
        mu = float(rd(z, p))
        return (lam if lam > 0 else 0.0), (mu if mu > 0 else 0.0)
    return rates


def _betas_scalar(lam, mu, t):
    d = (lam - mu) * t
    if d > 700:
        return mu / lam, 1.0
    g = t if abs(d) < 1e-12 else math.expm1(d) / (lam - mu)
    den = 1.0 + lam * g
    return mu * g / den, lam * g / den


# ---------------------------------------------------------------------------
# Galton-Watson step

def gw_betas(lam, mu, t):
    """Extinction probability ``beta1`` and geometric parameter ``beta2`` of a
    linear birth-and-death family with per-individual rates `lam`, `mu` after
    time `t`. Broadcasts over array inputs."""
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        g = t * exprel((lam - mu) * t)  # (exp((lam-mu)t) - 1) / (lam-mu)
    finite = np.isfinite(g)
    g = np.where(finite, g, 0.0)
    # overflow only happens for lam > mu, where beta1 -> mu/lam and beta2 -> 1
    b1 = np.where(finite, mu * g / (1.0 + lam * g), mu / np.where(lam > 0, lam, 1.0))
    b2 = np.where(finite, lam * g / (1.0 + lam * g), 1.0)
    return b1, b2


def gw_step(z: int, lam: float, mu: float, tau: float, rng) -> int:
    """One Galton-Watson step of length `tau` from `z` individuals with
    per-individual rates `lam`, `mu`."""
    if z <= 0:
        return 0
    b1, b2 = _betas_scalar(float(lam), float(mu), float(tau))
    survivors = int(rng.binomial(z, 1.0 - b1))
    if survivors == 0:
        return 0
    if b2 >= 1.0:
        raise FloatingPointError("Galton-Watson offspring law is improper (beta2 = 1)")
    return survivors + int(rng.negative_binomial(survivors, 1.0 - b2))


# ---------------------------------------------------------------------------
# exact simulation of one path

class _Variates:
    """Chunked Exp(1) and U(0,1) draws from one stream."""

    def __init__(self, rng):
        self.rng = rng
        self.pos = _CHUNK

    def next(self):
        if self.pos == _CHUNK:
            self.e = self.rng.standard_exponential(_CHUNK).tolist()
            self.u = self.rng.random(_CHUNK).tolist()
            self.pos = 0
        k = self.pos
        self.pos += 1
        return self.e[k], self.u[k]


def _exact_run(table: RateTable, z0: int, t_end: float, var: _Variates, jumps=None):
    """Run the embedded-jump loop until `t_end`. Returns the jump times and
    states (including the start) as python lists."""
    times = [0.0]
    states = [z0]
    t = 0.0
    z = z0
    lam, mu = table.lam, table.mu
    while True:
        if z >= len(lam):
            table.grow(z)
            lam, mu = table.lam, table.mu
        a = lam[z]
        rate = a + mu[z]
        if rate <= 0.0:
            break
        e, u = var.next()
        t += e / rate
        if t > t_end:
            break
        z = z + 1 if u * rate < a else z - 1
        times.append(t)
        states.append(z)
    return times, states


def _initial(z0, rng):
    z = z0() if callable(z0) else z0
    z = int(z)
    if z < 0:
        raise ValueError("initial population must be non-negative")
    return z


def simulate_continuous(model: ModelSpec, p, z0, t_max: float, k: int = 1,
                        survival: bool = False, seed=None):
    """Simulate `k` paths recording every birth and death up to `t_max`.

    Returns
    -------
    list of ContinuousPath
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if k < 1:
        raise ValueError("k must be at least 1")
    p = model.check_params(p)
    ss = master_seed(seed)
    table = RateTable(model, p)
    paths = []
    for n in range(k):
        var = _Variates(path_rng(ss, n))
        for _ in range(MAX_SURVIVAL_ATTEMPTS):
            times, states = _exact_run(table, _initial(z0, var.rng), t_max, var)
            if not survival or states[-1] > 0:
                break
        else:
            raise RuntimeError(_survival_msg())
        paths.append(ContinuousPath(np.array(times), np.array(states, dtype=np.int64)))
    return paths


def _survival_msg():
    return (f"no surviving path after {MAX_SURVIVAL_ATTEMPTS} attempts; "
            "the process is almost surely extinct for these settings")


def _sample_at(times, states, obs):
    idx = np.searchsorted(times, obs, side="right") - 1
    return np.asarray(states)[idx]


# ---------------------------------------------------------------------------
# tau-leaping on one path

def _substeps(gap, tau):
    """Split `gap` into steps of length `tau`, shrinking the last one."""
    n = max(int(math.ceil(gap / tau - 1e-9)), 0)
    return [tau] * (n - 1) + [gap - tau * (n - 1)] if n else []


def _tau_path(model, p, table, z, obs, method, tau, rng):
    out = np.empty(len(obs), dtype=np.int64)
    out[0] = z
    rates = _scalar_rates(model, p)
    for m in range(1, len(obs)):
        for h in _substeps(obs[m] - obs[m - 1], tau):
            if method == "gwa" and z > 0:
                table.grow(z)
                z = gw_step(z, table.lam[z] / z, table.mu[z] / z, h, rng)
                continue
            if method == "ma":
                table.grow(z)
                rho = 0.5 * h * (table.lam[z] - table.mu[z])
                lam, mu = rates(max(z + rho, 0.0))
            else:
                table.grow(z)
                lam, mu = table.lam[z], table.mu[z]
            z = max(z + int(rng.poisson(lam * h)) - int(rng.poisson(mu * h)), 0)
        out[m] = z
    return out


def simulate_discrete(model: ModelSpec, p, z0, times, k: int = 1, method: str = "exact",
                      tau: float = 0.1, survival: bool = False, seed=None) -> np.ndarray:
    """Simulate `k` paths observed at `times`.

    Returns
    -------
    ndarray of int, shape (k, len(times))
        Row ``n`` is sample path ``n``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown simulation method {method!r}; choose from {METHODS}")
    if k < 1:
        raise ValueError("k must be at least 1")
    obs = np.asarray(times, dtype=float)
    if obs.ndim != 1 or obs.size == 0:
        raise ValueError("times must be a non-empty 1-d sequence")
    if np.any(np.diff(obs) <= 0):
        raise ValueError("times must be strictly increasing")
    if method != "exact" and not tau > 0:
        raise ValueError("tau must be positive")
    p = model.check_params(p)
    ss = master_seed(seed)
    table = RateTable(model, p)
    rel = obs - obs[0]
    out = np.empty((k, obs.size), dtype=np.int64)
    for n in range(k):
        rng = path_rng(ss, n)
        var = _Variates(rng) if method == "exact" else None
        for _ in range(MAX_SURVIVAL_ATTEMPTS):
            z = _initial(z0, rng)
            if method == "exact":
                jt, js = _exact_run(table, z, rel[-1], var)
                row = _sample_at(jt, js, rel)
            else:
                row = _tau_path(model, p, table, z, rel, method, tau, rng)
            if not survival or row[-1] > 0:
                break
        else:
            raise RuntimeError(_survival_msg())
        out[n] = row
    return out


# ---------------------------------------------------------------------------
# batch kernels

def _param_columns(p, size):
    """Parameters as a tuple of arrays broadcastable against a batch."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return tuple(p)
    if p.shape[1] != size:
        raise ValueError("per-element parameters must have shape (n_params, batch)")
    return tuple(p)


def _sub(cols, idx):
    return tuple(c[idx] if np.ndim(c) else c for c in cols)


def _exact_batch(model, cols, z, dt, rng):
    z = z.astype(np.int64).copy()
    t = np.zeros(z.size)
    active = np.flatnonzero(dt > 0)
    while active.size:
        pa = _sub(cols, active)
        za = z[active].astype(float)
        lam = model.birth(za, pa)
        rate = lam + model.death(za, pa)
        tn = t[active] + rng.standard_exponential(active.size) / np.where(rate > 0, rate, 1.0)
        go = (rate > 0) & (tn <= dt[active])
        up = rng.random(active.size) * rate < lam
        idx = active[go]
        t[idx] = tn[go]
        z[idx] += np.where(up[go], 1, -1)
        active = idx
    return z


def _tau_batch(model, cols, z, dt, method, tau, rng):
    z = z.astype(np.int64).copy()
    nsteps = np.ceil(dt / tau - 1e-9).astype(int)
    for s in range(int(nsteps.max(initial=0))):
        active = np.flatnonzero(nsteps > s)
        h = np.minimum(tau, dt[active] - s * tau)
        pa = _sub(cols, active)
        za = z[active]
        zf = za.astype(float)
        lam = model.birth(zf, pa)
        mu = model.death(zf, pa)
        if method == "gwa":
            pos = za > 0
            with np.errstate(divide="ignore", invalid="ignore"):
                b1, b2 = gw_betas(lam / np.where(pos, zf, 1.0), mu / np.where(pos, zf, 1.0), h)
            surv = rng.binomial(np.where(pos, za, 0), np.where(pos, 1.0 - b1, 1.0))
            has = surv > 0
            extra = np.zeros_like(surv)
            if has.any():
                extra[has] = rng.negative_binomial(surv[has], 1.0 - b2[has])
            new = surv + extra
            # migration out of state 0 falls back to an Euler step
            zero = ~pos
            if zero.any():
                new[zero] = np.maximum(
                    rng.poisson(lam[zero] * h[zero]) - rng.poisson(mu[zero] * h[zero]), 0)
            z[active] = new
            continue
        if method == "ma":
            arg = np.maximum(zf + 0.5 * h * (lam - mu), 0.0)
            lam = model.birth(arg, pa)
            mu = model.death(arg, pa)
        z[active] = np.maximum(za + rng.poisson(lam * h) - rng.poisson(mu * h), 0)
    return z


def simulate_batch(model: ModelSpec, p, z_start, dt, method: str = "exact",
                   tau: float = 0.1, rng=None) -> np.ndarray:
    """Advance independent copies from `z_start` over elapsed times `dt`.

    Parameters
    ----------
    p : array_like
        Either one parameter vector or an array of shape ``(n_params, batch)``
        giving each copy its own parameters.
    z_start, dt : array_like
        Broadcast to a common 1-d batch shape.
    rng : numpy Generator or seed

    Returns
    -------
    ndarray of int
        Population of each copy at the end of its own interval.
    """
    if method not in METHODS:
        raise ValueError(f"unknown simulation method {method!r}; choose from {METHODS}")
    rng = as_generator(rng)
    z_start, dt = np.broadcast_arrays(np.asarray(z_start), np.asarray(dt, dtype=float))
    pa = np.asarray(p, dtype=float)
    if pa.ndim == 2:
        z_start, dt = (np.broadcast_to(a, (pa.shape[1],)) for a in (z_start, dt))
    z_start = np.ravel(z_start).astype(np.int64)
    dt = np.ravel(dt).astype(float)
    cols = _param_columns(p, z_start.size)
    if method == "exact":
        return _exact_batch(model, cols, z_start, dt, rng)
    return _tau_batch(model, cols, z_start, dt, method, tau, rng)


def simulate_batch_paths(model: ModelSpec, p, z0, times, method: str = "exact",
                         tau: float = 0.1, k: int = 1, rng=None) -> np.ndarray:
    """`k` paths (or one per parameter column) observed at `times`, advanced
    interval by interval with `simulate_batch`. Returns ``(batch, len(times))``."""
    rng = as_generator(rng)
    pa = np.asarray(p, dtype=float)
    size = pa.shape[1] if pa.ndim == 2 else k
    times = np.asarray(times, dtype=float)
    out = np.empty((size, times.size), dtype=np.int64)
    z = np.broadcast_to(np.asarray(z0, dtype=np.int64), (size,)).copy()
    out[:, 0] = z
    for m in range(1, times.size):
        z = simulate_batch(model, pa, z, np.full(size, times[m] - times[m - 1]),
                           method, tau, rng)
        out[:, m] = z
    return out
