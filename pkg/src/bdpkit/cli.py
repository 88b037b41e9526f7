"""Command-line interface: ``bdpkit {simulate,probability,estimate,forecast}``.

Exit status is 0 on success, 1 for usage or input errors (reported before any
computation starts) and 2 when the computation itself fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# value parsers


def _floats(text, name):
    try:
        return [float(v) for v in str(text).split(",") if v.strip() != ""]
    except ValueError:
        raise UsageError(f"--{name}: expected comma-separated numbers, got {text!r}") from None


def _ints(text, name):
    vals = _floats(text, name)
    if any(v != int(v) or v < 0 for v in vals):
        raise UsageError(f"--{name}: expected non-negative integers, got {text!r}")
    return [int(v) for v in vals]


def _pairs(text, name):
    out = []
    for item in str(text).split(","):
        parts = item.split(":")
        if len(parts) != 2:
            raise UsageError(f"--{name}: expected lo:hi pairs separated by commas, got {item!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise UsageError(f"--{name}: cannot read {item!r}") from None
        if lo > hi:
            raise UsageError(f"--{name}: lower bound exceeds upper bound in {item!r}")
        out.append((lo, hi))
    return out


def _window(text):
    if text is None:
        return None
    (pair,) = _pairs(text, "z-trunc")
    if pair[0] < 0 or pair[0] != int(pair[0]) or pair[1] != int(pair[1]):
        raise UsageError("--z-trunc: expected non-negative integers lo:hi")
    return (int(pair[0]), int(pair[1]))


def _seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("BDPKIT_SEED")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"BDPKIT_SEED must be an integer, got {env!r}") from None


def _model(args, n_params=None):
    from .expr import ExpressionError, rate_function
    from .models import custom_model, get_model

    if args.model == "custom":
        if not (args.birth and args.death):
            raise UsageError("--model custom needs --birth and --death rate expressions")
        try:
            fb, nb = rate_function(args.birth)
            fd, nd = rate_function(args.death)
        except ExpressionError as exc:
            raise UsageError(f"rate expression: {exc}") from None
        count = args.param_count if args.param_count is not None else max(nb, nd)
        if n_params is not None and args.param_count is None:
            count = max(count, n_params)
        return custom_model(fb, fd, count)
    try:
        return get_model(args.model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_params(spec, p):
    try:
        return spec.check_params(p)
    except ValueError as exc:
        raise UsageError(f"--params: {exc}") from None


def _constraints(texts):
    from .expr import ExpressionError, constraint

    out = []
    for t in texts or ():
        try:
            out.append(constraint(t))
        except ExpressionError as exc:
            raise UsageError(f"--con: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# parser


def _add_model(p):
    p.add_argument("--model", required=True, help="built-in label or 'custom'")
    p.add_argument("--birth", help="birth-rate expression for --model custom")
    p.add_argument("--death", help="death-rate expression for --model custom")
    p.add_argument("--param-count", type=int, help="parameter count for --model custom")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bdpkit", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap the number of BLAS/OpenMP threads")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate sample paths")
    _add_model(s)
    s.add_argument("--params", required=True)
    s.add_argument("--z0", type=int, required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--times", help="observation times (discrete output)")
    g.add_argument("--t-max", type=float, help="horizon for event-level output")
    s.add_argument("--method", default="exact", choices=("exact", "ea", "ma", "gwa"))
    s.add_argument("--tau", type=float, default=0.1)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--survival", action="store_true")
    s.add_argument("--out", default="simulate.csv")

    p = sub.add_parser("probability", help="transition probabilities")
    _add_model(p)
    p.add_argument("--params", required=True)
    p.add_argument("--z0", required=True)
    p.add_argument("--zt", required=True)
    p.add_argument("--t", required=True)
    p.add_argument("--method", default="expm")
    p.add_argument("--z-trunc")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--anchor", default="i")
    p.add_argument("--laplace-method", default="cme-talbot",
                   choices=("cme-talbot", "talbot", "euler", "gaver-stehfest"))
    p.add_argument("--lentz-eps", type=float, default=1e-6)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", default="probability.csv")

    e = sub.add_parser("estimate", help="estimate parameters from count data")
    _add_model(e)
    e.add_argument("--data", required=True, help="CSV with columns path_id,time,count (robin.csv and crane.csv are shipped)")
    e.add_argument("--framework", default="dnm",
                   choices=("dnm", "em", "lse", "abc", "continuous"))
    e.add_argument("--scheme", default="discrete", choices=("discrete", "continuous"))
    e.add_argument("--p0")
    e.add_argument("--bounds", required=True)
    e.add_argument("--known-p")
    e.add_argument("--idx-known-p")
    e.add_argument("--con", action="append", help="constraint such as 'p0>p1' (repeatable)")
    e.add_argument("--likelihood")
    e.add_argument("--technique")
    e.add_argument("--accelerator")
    e.add_argument("--squares")
    e.add_argument("--eps-abc", help="'dynamic' or comma-separated tolerances")
    e.add_argument("--k", type=int)
    e.add_argument("--max-its", type=int)
    e.add_argument("--max-it", type=int)
    e.add_argument("--i-tol", type=float)
    e.add_argument("--j-tol", type=float)
    e.add_argument("--h-tol", type=float)
    e.add_argument("--anchor")
    e.add_argument("--laplace-method",
                   choices=("cme-talbot", "talbot", "euler", "gaver-stehfest"))
    e.add_argument("--abc-method", choices=("exact", "ea", "ma", "gwa"))
    e.add_argument("--tau", type=float)
    e.add_argument("--z-trunc")
    e.add_argument("--se-type", choices=("none", "asymptotic", "simulated"))
    e.add_argument("--se-step", type=float, default=1e-4,
                   help="relative finite-difference step for asymptotic standard errors")
    e.add_argument("--num-samples", type=int, default=100)
    e.add_argument("--opt-method", default="local", choices=("local", "differential-evolution"))
    e.add_argument("--max-iter", type=int)
    e.add_argument("--multi-start", type=int, default=0)
    e.add_argument("--opt-seed", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--ci-out", help="write confidence-ellipse polylines to this CSV")
    e.add_argument("--ci-params", default="0,1",
                   help="positions (among estimated parameters) of the ellipse axes")
    e.add_argument("--ci-levels", default="0.95")
    e.add_argument("--out", default="estimate.json")

    f = sub.add_parser("forecast", help="forecast percentile bands")
    _add_model(f)
    f.add_argument("--params", required=True)
    f.add_argument("--cov", help="JSON matrix, or path to a JSON file / estimate output")
    f.add_argument("--z0", type=int, required=True)
    f.add_argument("--times", required=True)
    f.add_argument("--interval", default="confidence", choices=("confidence", "prediction"))
    f.add_argument("--method")
    f.add_argument("--percentiles")
    f.add_argument("--k", type=int, default=1000)
    f.add_argument("--n", type=int, default=1000)
    f.add_argument("--tau", type=float, default=0.1)
    f.add_argument("--bounds")
    f.add_argument("--known-p")
    f.add_argument("--idx-known-p")
    f.add_argument("--con", action="append")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", default="bands.csv")
    f.add_argument("--svg")
    return parser


# ---------------------------------------------------------------------------
# subcommands: each returns a zero-argument callable doing the computation,
# so that all validation happens before any work starts


def _prep_simulate(args):
    spec = _model(args)
    p = _check_params(spec, _floats(args.params, "params"))
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    if args.z0 < 0:
        raise UsageError("--z0 must be non-negative")
    if args.method != "exact" and not args.tau > 0:
        raise UsageError("--tau must be positive")
    seed = _seed(args)
    times = None
    if args.times is not None:
        times = _floats(args.times, "times")
        if len(times) == 0 or any(b <= a for a, b in zip(times, times[1:])):
            raise UsageError("--times must be strictly increasing")
    elif not args.t_max > 0:
        raise UsageError("--t-max must be positive")

    def run():
        from .io import write_rows
        from .simulate import simulate_continuous, simulate_discrete

        rows = []
        if times is not None:
            out = simulate_discrete(spec, p, args.z0, times, k=args.k, method=args.method,
                                    tau=args.tau, survival=args.survival, seed=seed)
            for n, row in enumerate(out):
                rows.extend((n, float(t), int(z)) for t, z in zip(times, row))
        else:
            paths = simulate_continuous(spec, p, args.z0, args.t_max, k=args.k,
                                        survival=args.survival, seed=seed)
            for n, path in enumerate(paths):
                rows.extend((n, float(t), int(z)) for t, z in zip(path.jump_times, path.states))
        write_rows(args.out, ("path_id", "time", "state"), rows)
        return f"wrote {args.k} path(s) to {args.out}"

    return run


def _prep_probability(args):
    from .probability import METHODS

    spec = _model(args)
    p = _check_params(spec, _floats(args.params, "params"))
    if args.method not in METHODS:
        raise UsageError(f"--method must be one of {', '.join(METHODS)}")
    z0, zt = _ints(args.z0, "z0"), _ints(args.zt, "zt")
    ts = _floats(args.t, "t")
    if any(t < 0 for t in ts) or any(b <= a for a, b in zip(ts, ts[1:])):
        raise UsageError("--t must be non-negative and strictly increasing")
    opts = {}
    if args.method in ("expm", "uniform", "Erlang"):
        opts["z_trunc"] = _window(args.z_trunc)
    if args.k is not None:
        opts["k"] = args.k
    if args.method == "sim":
        opts["seed"] = _seed(args)
    if args.method in ("gwa", "gwasa"):
        opts["anchor"] = args.anchor
    if args.method == "ilt":
        opts.update(laplace_method=args.laplace_method, lentz_eps=args.lentz_eps)
    if args.method in ("da", "oua"):
        opts["normalize"] = args.normalize

    def run():
        import numpy as np

        from .io import write_rows
        from .probability import probability

        P = np.asarray(probability(z0, zt, ts, spec, p, args.method, **opts))
        P = P.reshape(len(ts), len(z0), len(zt))
        rows = [(float(t), a, b, float(P[n, i, j])) for n, t in enumerate(ts)
                for i, a in enumerate(z0) for j, b in enumerate(zt)]
        write_rows(args.out, ("t", "z0", "zt", "probability"), rows)
        return f"wrote {len(rows)} probabilities to {args.out}"

    return run


_FRAMEWORK_FLAGS = {
    "dnm": {"likelihood": "likelihood", "k": "k", "anchor": "anchor",
            "laplace_method": "laplace_method"},
    "em": {"technique": "technique", "accelerator": "accelerator", "likelihood": "likelihood",
           "max_it": "max_it", "i_tol": "i_tol", "j_tol": "j_tol", "h_tol": "h_tol",
           "laplace_method": "laplace_method"},
    "lse": {"squares": "squares"},
    "abc": {"k": "k", "max_its": "max_its", "abc_method": "method", "tau": "tau"},
    "continuous": {},
}


def _prep_estimate(args):
    from .io import DataError, dataset_path, read_observations

    spec = _model(args)
    path = args.data
    stem = os.path.splitext(os.path.basename(path))[0]
    # the shipped robin and crane series are found by name when no such file exists
    if not os.path.exists(path) and stem in ("robin", "crane"):
        path = dataset_path(stem)
    try:
        data = read_observations(path, args.scheme)
    except (DataError, OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    known = _floats(args.known_p, "known-p") if args.known_p else []
    idx = _ints(args.idx_known_p, "idx-known-p") if args.idx_known_p else []
    if len(known) != len(idx):
        raise UsageError("--known-p and --idx-known-p must have the same length")
    n_free = spec.param_count - len(idx)
    bounds = _pairs(args.bounds, "bounds")
    if len(bounds) != n_free:
        raise UsageError(f"--bounds: expected {n_free} lo:hi pairs, got {len(bounds)}")
    framework = "continuous" if args.scheme == "continuous" else args.framework
    if framework == "abc":
        p0 = None
    else:
        if not args.p0:
            raise UsageError("--p0 is required for this framework")
        p0 = _floats(args.p0, "p0")
        if len(p0) != n_free:
            raise UsageError(f"--p0: expected {n_free} values, got {len(p0)}")
    options = {}
    for attr, key in _FRAMEWORK_FLAGS[framework].items():
        val = getattr(args, attr)
        if val is not None:
            options[key] = val
    if framework == "abc" and args.eps_abc is not None:
        options["eps_abc"] = ("dynamic" if args.eps_abc == "dynamic"
                              else _floats(args.eps_abc, "eps-abc"))
    ignored = [f"--{a.replace('_', '-')}" for fw, flags in _FRAMEWORK_FLAGS.items()
               if fw != framework for a in flags
               if a not in _FRAMEWORK_FLAGS[framework] and getattr(args, a) is not None]
    if args.eps_abc is not None and framework != "abc":
        ignored.append("--eps-abc")
    if ignored:
        raise UsageError(f"option(s) {', '.join(sorted(set(ignored)))} do not apply to "
                         f"framework {framework!r}")
    cons = _constraints(args.con)
    seed = _seed(args)
    if seed is None:
        seed = args.opt_seed
    ci_pos = _ints(args.ci_params, "ci-params")
    levels = _floats(args.ci_levels, "ci-levels")
    if args.ci_out and (len(ci_pos) != 2 or max(ci_pos) >= n_free):
        raise UsageError("--ci-params must name two distinct estimated parameters")
    if any(not 0 < lv < 1 for lv in levels):
        raise UsageError("--ci-levels must lie in (0, 1)")

    def run():
        from .estimate import estimate
        from .io import write_result, write_rows
        from .uncertainty import confidence_ellipse

        res = estimate(data.t_data, data.p_data, p0, bounds, framework=framework, model=spec,
                       scheme=args.scheme, con=cons, known_p=known, idx_known_p=idx,
                       se_type=args.se_type, opt_method=args.opt_method, seed=seed,
                       z_trunc=_window(args.z_trunc), num_samples=args.num_samples,
                       se_step=args.se_step, max_iter=args.max_iter,
                       multi_start=args.multi_start, **options)
        write_result(res, args.out)
        written = [args.out]
        if args.ci_out:
            if res.cov is None:
                raise RuntimeError("no covariance available for --ci-out")
            a, b = ci_pos
            mean = res.p_free[[a, b]]
            cov = res.cov[[a, b]][:, [a, b]]
            rows = []
            for lv, pts in zip(levels, confidence_ellipse(mean, cov, levels)):
                rows.extend((float(lv), float(x), float(y)) for x, y in pts)
            write_rows(args.ci_out, ("level", "x", "y"), rows)
            written.append(args.ci_out)
        p = ", ".join(f"{v:.6g}" for v in res.p)
        return f"estimate [{p}] in {res.compute_time:.2f}s; wrote {', '.join(written)}"

    return run


def _load_cov(text):
    if text is None:
        return None
    if os.path.exists(text):
        with open(text, encoding="utf-8") as fh:
            obj = json.load(fh)
    else:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError:
            raise UsageError(f"--cov: not a file or JSON matrix: {text!r}") from None
    if isinstance(obj, dict):
        obj = obj.get("cov")
        if obj is None:
            raise UsageError("--cov: the JSON object has no 'cov' entry")
    return obj


def _prep_forecast(args):
    import numpy as np

    from .uncertainty import DEFAULT_PERCENTILES

    spec = _model(args)
    params = _floats(args.params, "params")
    known = _floats(args.known_p, "known-p") if args.known_p else []
    idx = _ints(args.idx_known_p, "idx-known-p") if args.idx_known_p else []
    if len(params) not in (spec.param_count, spec.param_count - len(idx)):
        raise UsageError(f"--params: expected {spec.param_count} values (or only the "
                         "estimated ones)")
    cov = _load_cov(args.cov)
    n_free = spec.param_count - len(idx)
    if cov is not None:
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (n_free, n_free):
            raise UsageError(f"--cov: expected a {n_free}x{n_free} matrix")
    times = _floats(args.times, "times")
    if not times or any(b <= a for a, b in zip(times, times[1:])):
        raise UsageError("--times must be strictly increasing")
    pct = _floats(args.percentiles, "percentiles") if args.percentiles else DEFAULT_PERCENTILES
    if any(not 0 <= q <= 100 for q in pct):
        raise UsageError("--percentiles must lie in [0, 100]")
    bounds = _pairs(args.bounds, "bounds") if args.bounds else None
    if bounds is not None and len(bounds) != n_free:
        raise UsageError(f"--bounds: expected {n_free} lo:hi pairs")
    cons = _constraints(args.con)
    seed = _seed(args)

    def run():
        from .io import write_bands
        from .uncertainty import forecast

        bands = forecast(spec, args.z0, times, params, cov=cov, interval=args.interval,
                         method=args.method, percentiles=tuple(pct), k=args.k, n=args.n,
                         p_bounds=bounds, con=cons, known_p=known, idx_known_p=idx,
                         tau=args.tau, seed=seed)
        write_bands(bands, args.out)
        written = [args.out]
        if args.svg:
            bands.to_svg(args.svg)
            written.append(args.svg)
        return f"{args.interval} bands ({bands.method}) wrote {', '.join(written)}"

    return run


_PREP = {"simulate": _prep_simulate, "probability": _prep_probability,
         "estimate": _prep_estimate, "forecast": _prep_forecast}


def run(argv=None) -> int:
    """Parse `argv`, run one subcommand, and return the exit status."""
    try:
        args = build_parser().parse_args(argv)
        if args.threads is not None:
            if args.threads < 1:
                raise UsageError("--threads must be at least 1")
            for var in THREAD_VARS:
                os.environ[var] = str(args.threads)
        job = _PREP[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        summary = job()
    except Exception as exc:  # any failure past validation is computational
        print(f"computation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(summary)
    return 0


def main():
    sys.exit(run())
