"""Compare every transition-probability method against expm.

Reports the total-variation distance over ``j < j_max`` and the run time
for each method, for a Verhulst process started from state ``i``.
"""

from __future__ import annotations

import argparse
import time
from dataclasses import dataclass, field

import numpy as np

from bdpkit.io import write_rows
from bdpkit.models import builtin_model
from bdpkit.probability import probability


@dataclass
class ProbabilityConfig:
    model: str = "Verhulst"
    params: tuple = (0.8, 0.4, 0.025, 0.0)
    i: int = 15
    t: float = 1.0
    j_max: int = 40
    sim_samples: int = 1_000_000
    seed: int = 3
    methods: dict = field(default_factory=lambda: {
        "uniform": {}, "Erlang": {"k": 150}, "ilt": {}, "da": {}, "oua": {},
        "gwa": {}, "gwasa": {}, "sim": {},
    })
    out: str | None = None


def run(cfg: ProbabilityConfig):
    model = builtin_model(cfg.model)
    j = np.arange(cfg.j_max)
    ref = probability(cfg.i, j, cfg.t, model, cfg.params, "expm")
    table = {"expm": ref}
    for method, opts in cfg.methods.items():
        opts = dict(opts)
        if method == "sim":
            opts.update(k=cfg.sim_samples, seed=cfg.seed)
        t0 = time.perf_counter()
        vals = probability(cfg.i, j, cfg.t, model, cfg.params, method, **opts)
        dt = time.perf_counter() - t0
        tv = 0.5 * np.sum(np.abs(vals - ref))
        print(f"{method:<8} TV {tv:.3e}  [{dt:.2f}s]")
        table[method] = vals
    if cfg.out:
        names = list(table)
        write_rows(cfg.out, ["j"] + names,
                   [[int(jj)] + [float(table[m][n]) for m in names] for n, jj in enumerate(j)])
        print(f"wrote {cfg.out}")
    return table


def main(argv=None):
    cfg = ProbabilityConfig()
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--i", type=int, default=cfg.i)
    ap.add_argument("--t", type=float, default=cfg.t)
    ap.add_argument("--sim-samples", type=int, default=cfg.sim_samples)
    ap.add_argument("--out", help="optional CSV of all pmfs")
    args = ap.parse_args(argv)
    cfg.i, cfg.t, cfg.sim_samples, cfg.out = args.i, args.t, args.sim_samples, args.out
    run(cfg)


if __name__ == "__main__":
    main()
