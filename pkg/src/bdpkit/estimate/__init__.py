"""Parameter estimation for birth-and-death processes.

Frameworks
----------
dnm         direct numerical maximisation of the discrete-observation likelihood
em          expectation-maximisation with optional acceleration
lse         least squares on one-step conditional means
abc         approximate Bayesian computation
continuous  maximum likelihood for fully observed paths (selected automatically
            with ``scheme="continuous"``)
"""

from __future__ import annotations

import time

import numpy as np

from ..models import carrying_capacity, get_model
from ..optimize import ConstraintSpec, as_constraints
from .abc import abc_estimate
from .continuous import loglik_continuous, mle_continuous, path_stats, stats_loglik
from .data import EstimationResult, ObservedData, ParamMap, group_by_dt
from .dnm import DiscreteLikelihood, dnm_estimate
from .em import em_estimate, em_expected_stats, expected_stats, SufficientStats
from .lse import conditional_means, lse_estimate, sum_of_squares

FRAMEWORKS = ("dnm", "em", "lse", "abc", "continuous")
SE_TYPES = ("none", "asymptotic", "simulated")

_PROB_OPTS = ("k", "lentz_eps", "laplace_method", "anchor", "normalize")
_OPTIONS = {
    "dnm": ("likelihood",) + _PROB_OPTS,
    "em": ("technique", "accelerator", "likelihood", "laplace_method", "lentz_eps",
           "max_it", "i_tol", "j_tol", "h_tol"),
    "lse": ("squares",),
    "abc": ("eps_abc", "k", "max_its", "max_q", "eps_change", "gam", "method", "tau",
            "stat", "distance", "max_proposals"),
    "continuous": (),
}

__all__ = [
    "estimate", "EstimationResult", "ObservedData", "ParamMap", "FRAMEWORKS",
    "DiscreteLikelihood", "SufficientStats", "em_expected_stats", "expected_stats",
    "loglik_continuous", "mle_continuous", "path_stats", "stats_loglik",
    "conditional_means", "sum_of_squares", "group_by_dt", "wrap_constraints",
]


def wrap_constraints(con, pmap: ParamMap) -> list:
    """Constraints written on the full parameter vector, re-expressed on the
    free entries."""
    if con is None:
        return []
    items = [con] if isinstance(con, (dict, ConstraintSpec)) else list(con)
    out = []
    for c in as_constraints(items):
        out.append(ConstraintSpec(c.kind, lambda x, f=c.fun: float(f(pmap.full(x)))))
    return out


def _check_vector(name, v, n):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (n,):
        raise ValueError(f"{name} must hold {n} entries (one per estimated parameter), "
                         f"got {v.size}")
    return v


def _check_bounds(p_bounds, n):
    b = [tuple(map(float, pair)) for pair in p_bounds]
    if len(b) != n or any(len(pair) != 2 for pair in b):
        raise ValueError(f"p_bounds must hold {n} [low, high] pairs (one per estimated "
                         "parameter)")
    if any(lo > hi for lo, hi in b):
        raise ValueError("each lower bound in p_bounds must not exceed its upper bound")
    return b


def _likelihood_options(framework, opts):
    if framework == "em":
        method = opts.get("likelihood", "expm")
        extra = {k: opts[k] for k in ("lentz_eps", "laplace_method") if k in opts}
        return method, extra if method == "ilt" else {}
    method = opts.get("likelihood", "expm")
    return method, {k: opts[k] for k in _PROB_OPTS if k in opts}


def estimate(t_data, p_data, p0, p_bounds, framework: str = "dnm", model="Verhulst",
             scheme: str = "discrete", con=(), known_p=(), idx_known_p=(),
             se_type: str | None = None, b_rate=None, d_rate=None, param_count=None,
             opt_method: str = "local", seed=None, z_trunc=None, num_samples: int = 100,
             se_step: float = 1e-4, max_iter=None, multi_start: int = 0,
             **options) -> EstimationResult:
    """Estimate model parameters from observed population counts.

    Parameters
    ----------
    t_data, p_data : list
        Observation times and counts, either for one path or as one list per
        path. With ``scheme="continuous"`` they are jump times and the states
        entered at those times (see :class:`ObservedData`).
    p0 : array_like
        Initial guess for the estimated (non-known) parameters. Ignored by abc.
    p_bounds : sequence of [low, high]
        Bounds for the estimated parameters. abc uses them as a uniform prior.
    framework : str
        One of ``FRAMEWORKS``.
    model : str or ModelSpec
        Built-in label, ``"custom"`` (with `b_rate`, `d_rate`, `param_count`)
        or a ready :class:`~bdpkit.models.ModelSpec`.
    con : dict or list of dict
        ``{"type": "ineq" | "eq", "fun": f}`` acting on the full parameter
        vector in canonical order.
    known_p, idx_known_p : sequence
        Fixed parameter values and their canonical indices.
    se_type : {"none", "asymptotic", "simulated"}
        Standard-error method. Defaults to ``"asymptotic"`` for likelihood
        frameworks and ``"none"`` for lse; abc always reports the covariance of
        its final accepted draws.
    opt_method : {"local", "differential-evolution"}
        Optimiser for dnm, lse and the continuous MLE (the EM M-step is
        always local, started from the current iterate).
    seed : int, optional
        Seeds differential evolution, abc, the sim likelihood and simulated
        standard errors.
    z_trunc : (int, int), optional
        Truncation window for matrix-based likelihoods and E-steps.
    num_samples : int
        Re-estimations behind ``se_type="simulated"``.
    se_step : float
        Relative finite-difference step of the asymptotic Hessian.
    max_iter, multi_start
        Passed to :func:`bdpkit.optimize.minimize`.
    **options
        Framework settings, for instance ``likelihood`` and ``anchor`` for
        dnm, ``technique``, ``accelerator``, ``max_it`` and the tolerances for
        em, ``squares`` for lse, or ``eps_abc``, ``k`` and ``method`` for abc.
    """
    from ..uncertainty import asymptotic_cov, simulated_cov

    t_start = time.perf_counter()
    if framework not in FRAMEWORKS:
        raise ValueError(f"unknown framework {framework!r}; choose from {FRAMEWORKS}")
    spec = get_model(model, b_rate, d_rate, param_count)
    data = ObservedData(t_data, p_data, scheme)
    if scheme == "continuous":
        if framework not in ("dnm", "continuous"):
            raise ValueError("continuously observed data are fitted by maximum likelihood; "
                             "use framework='continuous'")
        framework = "continuous"
    elif framework == "continuous":
        raise ValueError("framework 'continuous' needs scheme='continuous'")
    unknown = set(options) - set(_OPTIONS[framework])
    if unknown:
        raise TypeError(f"unexpected options for framework {framework!r}: "
                        f"{', '.join(sorted(unknown))}; valid: {', '.join(_OPTIONS[framework])}")
    if se_type is None:
        se_type = "none" if framework == "lse" else "asymptotic"
    if se_type not in SE_TYPES:
        raise ValueError(f"se_type must be one of {SE_TYPES}")
    pmap = ParamMap(spec.param_count, known_p, idx_known_p)
    bounds = _check_bounds(p_bounds, pmap.num_free)
    if framework == "abc":
        x0 = np.array([0.5 * (lo + hi) for lo, hi in bounds])
    else:
        x0 = _check_vector("p0", p0, pmap.num_free)
    cons = wrap_constraints(con, pmap)

    opt = {"method": opt_method, "seed": seed, "max_iter": max_iter,
           "multi_start": multi_start}

    def fit(d: ObservedData):
        return _run(framework, spec, d, pmap, x0, bounds, cons, opt, z_trunc, options)

    out = fit(data)
    x = out["x"]
    p_full = pmap.full(x)
    result = EstimationResult(
        p=p_full, free_idx=pmap.free, val=out["val"], framework=framework, scheme=scheme,
        p0=x0, message=out["message"], success=out["success"],
        iterations=out.get("iterations", []), samples=out.get("samples"),
        method=out.get("method"), model=spec.label, diagnostics=out.get("diagnostics", {}),
    )
    if framework == "abc":
        result.cov = out["cov"]
        result.se = np.sqrt(np.diag(result.cov))
        result.se_type = "posterior"
    elif se_type == "asymptotic":
        loglik = _loglik_for_se(framework, spec, data, pmap, options, z_trunc)
        rep = asymptotic_cov(lambda y: loglik(pmap.full(y)), x, se_step)
        result.cov, result.se, result.se_type = rep.cov, rep.se, "asymptotic"
        if rep.message:
            result.diagnostics["se"] = rep.message
    elif se_type == "simulated":
        rep = simulated_cov(lambda d: fit(d)["x"], spec, p_full, data, num_samples, seed)
        result.cov, result.se, result.se_type = rep.cov, rep.se, "simulated"
        result.diagnostics["se"] = rep.message
    result.capacity = carrying_capacity(spec, p_full, 10.0 * data.max_count())
    result.compute_time = time.perf_counter() - t_start
    return result


def _loglik_for_se(framework, spec, data, pmap, options, z_trunc):
    if framework == "continuous":
        s = path_stats(data)
        return lambda p: stats_loglik(spec, p, s.states, s.U, s.D, s.H)
    method, extra = _likelihood_options(framework, options)
    return DiscreteLikelihood(spec, data, method, z_trunc=z_trunc, **extra)


def _run(framework, spec, data, pmap, x0, bounds, cons, opt, z_trunc, options):
    seed = opt["seed"]
    if framework == "continuous":
        x, val, msg = mle_continuous(spec, data, pmap, x0, bounds, cons, **opt)
        return {"x": x, "val": val, "message": msg, "success": True}
    if framework == "dnm":
        method, extra = _likelihood_options(framework, options)
        if method == "sim":
            if seed is None:
                raise ValueError("the sim likelihood needs an explicit seed so that the "
                                 "objective is deterministic")
            extra["seed"] = seed
        lik = DiscreteLikelihood(spec, data, method, z_trunc=z_trunc, **extra)
        res = dnm_estimate(lik, pmap, x0, bounds, cons, **opt)
        return {"x": res.x, "val": res.fun, "message": res.message, "success": res.success,
                "method": method}
    if framework == "em":
        out = em_estimate(spec, data, pmap, x0, bounds, cons, z_trunc=z_trunc, **options)
        out["success"] = out["converged"]
        out["method"] = options.get("technique", "expm")
        out["diagnostics"] = {"accelerated_steps": out["accelerated"]}
        return out
    if framework == "lse":
        squares = options.get("squares", "fm")
        res = lse_estimate(spec, data, pmap, x0, bounds, cons, squares, z_trunc, **opt)
        return {"x": res.x, "val": res.fun, "message": res.message, "success": res.success,
                "method": squares}
    out = abc_estimate(spec, data, pmap, bounds, cons, seed=seed, **options)
    out.update(val=float("nan"), success=True,
               message=f"{len(out['eps'])} iteration(s), {out['proposals']} proposals",
               method=options.get("method", "gwa"),
               diagnostics={"eps": out["eps"]})
    return out
