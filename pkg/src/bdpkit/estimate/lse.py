"""Least-squares fitting of one-step conditional means."""

from __future__ import annotations

import numpy as np

from ..linalg import build_generator, default_window, expm
from ..models import ModelSpec
from ..optimize import minimize
from ..probability import fm_mean
from .data import ObservedData, ParamMap

SQUARES = ("expm", "fm", "gwa")


def conditional_means(model: ModelSpec, p, z_prev, dt, squares: str = "fm", z_trunc=None):
    """Model mean of ``Z(dt)`` given ``Z(0) = z_prev``, elementwise."""
    z_prev = np.asarray(z_prev, dtype=float)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), z_prev.shape)
    if squares == "fm":
        return fm_mean(model, p, z_prev, dt)
    if squares == "gwa":
        b = np.maximum(z_prev, 1.0)
        rate = (model.birth(b, p) - model.death(b, p)) / b
        return z_prev * np.exp(rate * dt)
    if squares == "expm":
        zi = z_prev.astype(np.int64)
        if z_trunc is None:
            w = default_window(int(zi.min()), int(zi.max()), bound=model.state_bound(p))
        else:
            w = default_window(*z_trunc, pad=0)
        Q = build_generator(model, p, w).Q
        out = np.empty(z_prev.shape)
        key = np.round(dt, 12)
        for d in np.unique(key):
            sel = key == d
            m = expm(Q * dt[sel][0]) @ w.states
            out[sel] = m[w.index(zi[sel])]
        return out
    raise ValueError(f"unknown squares method {squares!r}; choose from {SQUARES}")


def sum_of_squares(model: ModelSpec, p, data: ObservedData, squares: str = "fm",
                   z_trunc=None) -> float:
    if squares == "expm":
        data.require_integer()
    zp, zn, dt = data.transitions(integer=squares == "expm")
    m = conditional_means(model, p, zp, dt, squares, z_trunc)
    val = float(np.sum((zn - m) ** 2))
    return val if np.isfinite(val) else np.inf


def lse_estimate(model: ModelSpec, data: ObservedData, pmap: ParamMap, p0, bounds,
                 constraints=(), squares: str = "fm", z_trunc=None, method="local",
                 seed=None, max_iter=None, multi_start=0):
    """Minimise the sum of squared one-step prediction errors."""
    if squares not in SQUARES:
        raise ValueError(f"unknown squares method {squares!r}; choose from {SQUARES}")
    if squares == "expm":
        data.require_integer()
    return minimize(lambda x: sum_of_squares(model, pmap.full(x), data, squares, z_trunc),
                    p0, bounds, constraints, method=method, seed=seed, max_iter=max_iter,
                    multi_start=multi_start)
