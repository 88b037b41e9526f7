"""Standard errors, confidence ellipses and forecast bands."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .estimate.data import ObservedData, ParamMap
from .models import get_model
from .optimize import as_constraints, hessian_fd
from .probability import _continue_moments
from .simulate import METHODS as SIM_METHODS, simulate_batch_paths, simulate_continuous

DEFAULT_PERCENTILES = (0, 2.5, 10, 25, 50, 75, 90, 97.5, 100)
MAX_DRAWS = 1_000_000
FM_STEPS = 200


@dataclass
class CovarianceReport:
    """Covariance estimate with standard errors.

    ``se`` entries are NaN where the variance could not be estimated.
    ``projected`` is True when the matrix had to be moved to the nearest
    positive semi-definite matrix.
    """

    cov: Optional[np.ndarray]
    se: Optional[np.ndarray]
    projected: bool = False
    message: str = ""


def nearest_psd(C):
    """Clip negative eigenvalues of the symmetric part of `C` at zero."""
    C = 0.5 * (C + C.T)
    vals, vecs = np.linalg.eigh(C)
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T, bool(np.any(vals < 0))


def asymptotic_cov(loglik: Callable, x, rel_step: float = 1e-4) -> CovarianceReport:
    """Inverse observed information ``-H^{-1}`` from a finite-difference
    Hessian ``H`` of `loglik` at `x`."""
    x = np.asarray(x, dtype=float)
    try:
        H = hessian_fd(loglik, x, rel_step)
        C = -np.linalg.inv(H)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return CovarianceReport(None, None, False, f"Hessian not usable: {exc}")
    if not np.all(np.isfinite(C)):
        return CovarianceReport(None, None, False, "Hessian not usable: non-finite inverse")
    diag = np.diag(C).copy()
    C, projected = nearest_psd(C)
    se = np.where(diag > 0, np.sqrt(np.abs(diag)), np.nan)
    msg = ""
    if projected:
        msg = "negative Hessian not positive definite; covariance projected to the PSD cone"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return CovarianceReport(C, se, projected, msg)


def simulate_like(model, p, data: ObservedData, rng) -> ObservedData:
    """A synthetic data set with the same starting counts and observation times."""
    if data.scheme == "discrete":
        paths = [simulate_batch_paths(model, p, int(z[0]), t, "exact", k=1, rng=rng)[0]
                 for t, z in zip(data.t_data, data.p_data)]
        return ObservedData([t.copy() for t in data.t_data], paths, "discrete")
    ts, ps = [], []
    for t, z in zip(data.t_data, data.p_data):
        path = simulate_continuous(model, p, int(z[0]), float(t[-1] - t[0]), k=1,
                                   seed=int(rng.integers(2 ** 63)))[0]
        jt = np.asarray(path.jump_times, dtype=float) + t[0]
        st = np.asarray(path.states, dtype=float)
        jt = np.append(jt, t[-1])
        st = np.append(st, st[-1])
        ts.append(jt)
        ps.append(st)
    return ObservedData(ts, ps, "continuous")


def simulated_cov(fit: Callable, model, p, data: ObservedData, num_samples: int = 100,
                  seed=None) -> CovarianceReport:
    """Sample covariance of re-estimates from data simulated at `p`.

    `fit` maps an :class:`ObservedData` to a free-parameter estimate. Runs
    that raise are skipped; more than half failing is an error.
    """
    ss = np.random.SeedSequence(seed)
    est, failures = [], 0
    for child in ss.spawn(num_samples):
        rng = np.random.Generator(np.random.PCG64(child))
        try:
            est.append(np.asarray(fit(simulate_like(model, p, data, rng)), dtype=float))
        except (ValueError, RuntimeError, FloatingPointError, np.linalg.LinAlgError):
            failures += 1
    if failures > num_samples / 2:
        raise RuntimeError(
            f"{failures} of {num_samples} simulated re-estimations failed; "
            "standard errors are not available"
        )
    E = np.array(est)
    C = np.atleast_2d(np.cov(E, rowvar=False))
    return CovarianceReport(C, np.sqrt(np.diag(C)), False,
                            f"{len(est)} re-estimates ({failures} failed)")


def confidence_ellipse(mean, cov, levels=(0.95,), n_points: int = 256) -> list:
    """Boundary points ``mean + r L [cos, sin]`` of two-dimensional confidence
    regions, ``r^2`` being the chi-square(2) quantile of each level.

    Returns one ``(n_points, 2)`` array per level.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if mean.shape != (2,) or cov.shape != (2, 2):
        raise ValueError("confidence ellipses need a 2-vector mean and a 2x2 covariance")
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if np.any(vals < -1e-12 * max(1.0, abs(vals).max())):
        raise ValueError("covariance must be positive semi-definite")
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    theta = np.linspace(0.0, 2.0 * np.pi, n_points)
    circle = np.stack([np.cos(theta), np.sin(theta)])
    out = []
    for lev in levels:
        r = np.sqrt(stats.chi2.ppf(lev, 2))
        out.append(mean + (r * L @ circle).T)
    return out


# ---------------------------------------------------------------------------
# forecasting


@dataclass
class ForecastBands:
    """Percentiles (columns) of the forecast at each time (rows)."""

    times: np.ndarray
    percentiles: tuple
    values: np.ndarray
    interval: str
    method: str

    def band(self, q) -> np.ndarray:
        return self.values[:, list(self.percentiles).index(q)]

    def to_svg(self, path, observed=None, width: int = 640, height: int = 400):
        """Write a minimal line chart of the bands (and optional observations
        given as ``(times, counts)``)."""
        pad = 40
        ys = [self.values]
        if observed is not None:
            ys.append(np.asarray(observed[1], dtype=float))
        y_lo = min(float(np.min(y)) for y in ys)
        y_hi = max(float(np.max(y)) for y in ys)
        t_lo = float(self.times[0]) if observed is None else min(self.times[0], np.min(observed[0]))
        t_hi = float(self.times[-1])
        sx = (width - 2 * pad) / max(t_hi - t_lo, 1e-12)
        sy = (height - 2 * pad) / max(y_hi - y_lo, 1e-12)

        def pts(t, y):
            return " ".join(f"{pad + (a - t_lo) * sx:.2f},{height - pad - (b - y_lo) * sy:.2f}"
                            for a, b in zip(t, y))

        lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
                 f'<rect width="{width}" height="{height}" fill="white"/>']
        for c, q in enumerate(self.percentiles):
            shade = 0.25 + 0.75 * (1 - abs(q - 50) / 50)
            lines.append(f'<polyline fill="none" stroke="steelblue" stroke-opacity="{shade:.2f}" '
                         f'points="{pts(self.times, self.values[:, c])}"><title>{q}%</title>'
                         "</polyline>")
        if observed is not None:
            lines.append(f'<polyline fill="none" stroke="black" '
                         f'points="{pts(observed[0], observed[1])}"/>')
        lines.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def sample_parameters(mean, cov, k, bounds=None, constraints=(), rng=None):
    """`k` draws from ``N(mean, cov)`` restricted to `bounds` and `constraints`
    by rejection."""
    rng = np.random.default_rng(rng)
    mean = np.asarray(mean, dtype=float)
    if cov is None:
        return np.tile(mean, (k, 1))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    lo = np.full(mean.size, -np.inf) if bounds is None else np.array([b[0] for b in bounds])
    hi = np.full(mean.size, np.inf) if bounds is None else np.array([b[1] for b in bounds])
    cons = as_constraints(constraints)
    out, drawn = [], 0
    have = 0
    while have < k:
        if drawn >= MAX_DRAWS:
            raise RuntimeError(
                f"only {have} of {k} parameter draws satisfied the bounds and constraints "
                f"after {MAX_DRAWS} attempts"
            )
        X = mean + rng.standard_normal((max(k, 256), mean.size)) @ L.T
        drawn += X.shape[0]
        ok = np.all((X >= lo) & (X <= hi), axis=1)
        for c in cons:
            ok &= np.array([abs(c.violation(x)) < 1e-12 for x in X])
        out.append(X[ok])
        have += int(ok.sum())
    return np.vstack(out)[:k]


def _fm_paths(model, P, z0, times):
    cols = tuple(P)
    m = np.full(P.shape[1], float(z0))
    v = np.zeros_like(m)
    out = np.empty((P.shape[1], times.size))
    out[:, 0] = m
    for c in range(1, times.size):
        m, _ = _continue_moments(model, cols, m, v, times[c] - times[c - 1], FM_STEPS,
                                 variance=False)
        out[:, c] = m
    return out


def forecast(model, z0, times, param, cov=None, interval: str = "confidence",
             method: Optional[str] = None, percentiles=DEFAULT_PERCENTILES, k: int = 1000,
             n: int = 1000, p_bounds=None, con=(), known_p=(), idx_known_p=(), tau: float = 0.1,
             seed=None, b_rate=None, d_rate=None, param_count=None) -> ForecastBands:
    """Percentile bands for the population at `times`, started from `z0` at
    ``times[0]``.

    Parameters are drawn `k` times from ``N(param, cov)`` (restricted to
    `p_bounds` and `con`); without `cov` every draw equals `param`.

    interval="confidence"
        Bands of the expected population. ``method="fm"`` (default) uses the
        fluid mean; a simulation method averages `n` paths per draw.
    interval="prediction"
        Bands of the population itself: one simulated path per draw
        (default method ``"gwa"`` with step `tau`).

    `param` may be the full parameter vector or only its estimated entries;
    `cov` and `p_bounds` refer to the estimated entries.
    """
    spec = get_model(model, b_rate, d_rate, param_count)
    if interval not in ("confidence", "prediction"):
        raise ValueError("interval must be 'confidence' or 'prediction'")
    method = method or ("fm" if interval == "confidence" else "gwa")
    valid = ("fm",) + SIM_METHODS if interval == "confidence" else SIM_METHODS
    if method not in valid:
        raise ValueError(f"method {method!r} is not available for {interval} bands; "
                         f"choose from {valid}")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1-d sequence")
    pmap = ParamMap(spec.param_count, known_p, idx_known_p)
    mean = pmap.free_of(param)
    ss = np.random.SeedSequence(seed)
    par_rng, sim_rng = (np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(2))
    cons = [dict(type=c["type"], fun=(lambda x, f=c["fun"]: f(pmap.full(x))))
            for c in ([con] if isinstance(con, dict) else list(con))]
    X = sample_parameters(mean, cov, k, p_bounds, cons, par_rng)
    P = pmap.full_batch(X)
    if interval == "confidence" and method == "fm":
        paths = _fm_paths(spec, P, z0, times)
    elif interval == "confidence":
        paths = np.empty((k, times.size))
        chunk = max(1, 200_000 // max(n, 1))
        for a in range(0, k, chunk):
            Pc = np.repeat(P[:, a:a + chunk], n, axis=1)
            sims = simulate_batch_paths(spec, Pc, z0, times, method, tau, rng=sim_rng)
            paths[a:a + chunk] = sims.reshape(-1, n, times.size).mean(axis=1)
    else:
        paths = simulate_batch_paths(spec, P, z0, times, method, tau, rng=sim_rng).astype(float)
    values = np.percentile(paths, percentiles, axis=0).T
    return ForecastBands(times, tuple(percentiles), values, interval, method)
