"""Birth and death rate models.

Every model maps a population size ``z`` and a parameter vector ``p`` to the
population birth rate and death rate. Rates are evaluated with numpy
broadcasting, so ``z`` may be a scalar or an array and each entry of ``p``
may itself be an array (one value per batch element). Negative raw rates are
clamped to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

RateFn = Callable[[np.ndarray, Sequence], np.ndarray]


@dataclass(frozen=True)
class ModelSpec:
    """A parameterised birth-and-death model.

    Attributes
    ----------
    label : str
        Model identifier (a built-in label or ``"custom"``).
    raw_birth, raw_death : callable
        Unclamped rate formulas ``f(z, p)``.
    param_count : int
        Number of parameters in canonical order.
    param_names : tuple of str
        Human-readable parameter names.
    bound_index : int, optional
        Index of the parameter holding a finite state bound (Moran ``N``).
    linear_factors : tuple, optional
        ``(f, g, birth_idx, death_idx)`` when ``birth = f(z) p[birth_idx]`` and
        ``death = g(z) p[death_idx]``; either index may be ``None``.
    """

    label: str
    raw_birth: RateFn
    raw_death: RateFn
    param_count: int
    param_names: tuple = ()
    bound_index: Optional[int] = None
    linear_factors: Optional[tuple] = field(default=None, compare=False)

    def birth(self, z, p):
        z = np.asarray(z, dtype=float)
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.asarray(self.raw_birth(z, p), dtype=float)
        out = np.broadcast_to(out, np.broadcast_shapes(out.shape, z.shape))
        return np.where(out > 0, out, 0.0)

    def death(self, z, p):
        z = np.asarray(z, dtype=float)
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.asarray(self.raw_death(z, p), dtype=float)
        out = np.broadcast_to(out, np.broadcast_shapes(out.shape, z.shape))
        return np.where(out > 0, out, 0.0)

    def state_bound(self, p) -> Optional[int]:
        """Largest reachable state, or ``None`` for an unbounded model."""
        if self.bound_index is None:
            return None
        return int(round(float(p[self.bound_index])))

    def check_params(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.param_count,):
            raise ValueError(
                f"model {self.label!r} takes {self.param_count} parameters "
                f"({', '.join(self.param_names) or '...'}), got {p.size}"
            )
        return p


def _ind(cond):
    return np.where(cond, 1.0, 0.0)


def _moran_birth(z, p):
    a, b, u, v = p[0], p[1], p[2], p[3]
    N = np.rint(p[4])
    return (N - z) / N * ((a * z * (1 - u) + b * (N - z) * v) / N)


def _moran_death(z, p):
    a, b, u, v = p[0], p[1], p[2], p[3]
    N = np.rint(p[4])
    return z / N * ((b * (N - z) * (1 - v) + a * z * u) / N)


_ONE = lambda z: np.ones_like(np.asarray(z, dtype=float))  # noqa: E731
_ID = lambda z: np.asarray(z, dtype=float)  # noqa: E731

_BUILTINS = {
    "linear": (
        lambda z, p: p[0] * z,
        lambda z, p: p[1] * z,
        ("gamma", "nu"),
        None,
        (_ID, _ID, 0, 1),
    ),
    "linear-migration": (
        lambda z, p: p[0] * z + p[2],
        lambda z, p: p[1] * z,
        ("gamma", "nu", "alpha"),
        None,
        None,
    ),
    "pure-birth": (
        lambda z, p: p[0] * z,
        lambda z, p: 0.0 * z,
        ("gamma",),
        None,
        (_ID, None, 0, None),
    ),
    "pure-death": (
        lambda z, p: 0.0 * z,
        lambda z, p: p[0] * z,
        ("nu",),
        None,
        (None, _ID, None, 0),
    ),
    "Poisson": (
        lambda z, p: p[0] + 0.0 * z,
        lambda z, p: 0.0 * z,
        ("gamma",),
        None,
        (_ONE, None, 0, None),
    ),
    "Verhulst": (
        lambda z, p: p[0] * (1 - p[2] * z) * z,
        lambda z, p: p[1] * (1 + p[3] * z) * z,
        ("gamma", "nu", "alpha", "beta"),
        None,
        None,
    ),
    "Ricker": (
        lambda z, p: p[0] * z * np.exp(-((p[2] * z) ** p[3])),
        lambda z, p: p[1] * z,
        ("gamma", "nu", "alpha", "c"),
        None,
        None,
    ),
    "Hassell": (
        lambda z, p: p[0] * z / (1 + p[2] * z) ** p[3],
        lambda z, p: p[1] * z,
        ("gamma", "nu", "alpha", "c"),
        None,
        None,
    ),
    "MS-S": (
        lambda z, p: p[0] * z / (1 + (p[2] * z) ** p[3]),
        lambda z, p: p[1] * z,
        ("gamma", "nu", "alpha", "c"),
        None,
        None,
    ),
    "Moran": (
        _moran_birth,
        _moran_death,
        ("alpha", "beta", "u", "v", "N"),
        4,
        None,
    ),
    "M/M/1": (
        lambda z, p: p[0] + 0.0 * z,
        lambda z, p: p[1] * _ind(z > 0),
        ("gamma", "nu"),
        None,
        (_ONE, lambda z: _ind(np.asarray(z) > 0), 0, 1),
    ),
    "M/M/inf": (
        lambda z, p: p[0] + 0.0 * z,
        lambda z, p: p[1] * z,
        ("gamma", "nu"),
        None,
        (_ONE, _ID, 0, 1),
    ),
    "loss-system": (
        lambda z, p: p[0] * _ind(z < np.rint(p[2])),
        lambda z, p: p[1] * z,
        ("gamma", "nu", "c"),
        None,
        None,
    ),
}

MODEL_LABELS = tuple(_BUILTINS)


def builtin_model(label: str) -> ModelSpec:
    """Return the built-in model called `label`."""
    try:
        birth, death, names, bound, factors = _BUILTINS[label]
    except KeyError:
        raise ValueError(
            f"unknown model {label!r}; valid labels are: {', '.join(MODEL_LABELS)}"
        ) from None
    return ModelSpec(label, birth, death, len(names), names, bound, factors)


def custom_model(birth_rate: RateFn, death_rate: RateFn, param_count: int,
                 label: str = "custom") -> ModelSpec:
    """Wrap user rate functions ``f(z, p)`` in a `ModelSpec`."""
    if param_count < 0:
        raise ValueError("param_count must be non-negative")
    names = tuple(f"p{i}" for i in range(param_count))
    return ModelSpec(label, birth_rate, death_rate, param_count, names)


def get_model(model, b_rate=None, d_rate=None, param_count=None) -> ModelSpec:
    """Resolve a label, ``"custom"`` request, or `ModelSpec` to a `ModelSpec`."""
    if isinstance(model, ModelSpec):
        return model
    if model == "custom":
        if b_rate is None or d_rate is None or param_count is None:
            raise ValueError("custom models need b_rate, d_rate and param_count")
        return custom_model(b_rate, d_rate, param_count)
    return builtin_model(model)


def net_growth(model: ModelSpec, p, z):
    return model.birth(z, p) - model.death(z, p)


def growth_derivative(model: ModelSpec, p, z):
    """Central difference of ``birth - death`` with step ``1e-4 * max(1, z)``."""
    z = np.asarray(z, dtype=float)
    h = 1e-4 * np.maximum(1.0, np.abs(z))
    lo = np.maximum(z - h, 0.0)
    hi = z + h
    return (net_growth(model, p, hi) - net_growth(model, p, lo)) / (hi - lo)


def _bisect(g, a, b, tol=1e-6, max_iter=200):
    ga = g(a)
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        gm = g(m)
        if gm == 0 or b - a < tol:
            return m
        if np.sign(gm) == np.sign(ga):
            a, ga = m, gm
        else:
            b = m
    return 0.5 * (a + b)


def positive_roots(model: ModelSpec, p, z_upper: float) -> list:
    """All roots of ``birth - death`` on ``(0, z_upper]`` found by an
    integer-step sign scan followed by bisection."""
    p = np.asarray(p, dtype=float)
    bound = model.state_bound(p)
    if bound is not None:
        z_upper = min(z_upper, bound)
    z_upper = max(int(np.ceil(z_upper)), 1)
    grid = np.concatenate(([1e-6], np.arange(1, z_upper + 1, dtype=float)))
    g = net_growth(model, p, grid)
    s = np.sign(g)
    exact = np.flatnonzero((s[1:] == 0) & (s[:-1] != 0)) + 1
    change = np.flatnonzero(s[:-1] * s[1:] < 0)
    f = lambda z: float(net_growth(model, p, z))  # noqa: E731
    roots = [float(grid[k]) for k in exact]
    roots += [_bisect(f, grid[k], grid[k + 1]) for k in change]
    return sorted(roots)


def carrying_capacity(model: ModelSpec, p, z_upper: Optional[float] = None):
    """Nearest integer to the smallest positive root of ``birth = death``.

    Returns ``None`` when the rates never balance at a positive size.
    ``z_upper`` defaults to ``10**6``.
    """
    p = model.check_params(p)
    roots = positive_roots(model, p, 1e6 if z_upper is None else z_upper)
    if not roots:
        return None
    return max(int(round(roots[0])), 1)


def stable_equilibria(model: ModelSpec, p, z_upper: float = 1e6) -> list:
    """Equilibria with negative growth derivative, most stable first."""
    p = np.asarray(p, dtype=float)
    cands = list(positive_roots(model, p, z_upper))
    if float(net_growth(model, p, 0.0)) == 0.0:
        cands.insert(0, 0.0)
    stable = [(float(growth_derivative(model, p, z)), z) for z in cands]
    stable = [(h, z) for h, z in stable if h < 0]
    stable.sort()
    return [(z, h) for h, z in stable]
