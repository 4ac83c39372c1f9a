"""Sweep alpha and beta on the Oseen pair and tabulate accuracy and stability.

    python3 scripts/parameter_sweep.py --size 125 --alphas 10 100 --betas 0.001 0.01 1
"""
import argparse
import itertools
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fluidrefine import constraint, hs, synth
from fluidrefine.fields import div_arrays
from fluidrefine.io_reports import abs_stats, endpoint_error, write_csv
from fluidrefine.refine import RefineConfig


@dataclass
class SweepConfig:
    size: int = 125
    alphas: list = field(default_factory=lambda: [10.0, 100.0, 1000.0])
    betas: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0])


def run(cfg: SweepConfig, out: Path):
    pair = synth.oseen_pair(cfg.size)
    w_hs = hs.hs_solve(pair.frame1, pair.frame2)
    rows = [("hs", "", endpoint_error(w_hs, pair.truth), abs_stats(div_arrays(w_hs.u.data, w_hs.v.data))[1],
             "", "", "")]
    for alpha, beta in itertools.product(cfg.alphas, cfg.betas):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rcfg = RefineConfig(alpha=alpha, beta=beta)
        w, state = constraint.bca_run(pair.frame1, pair.frame2, refine_cfg=rcfg, w0=w_hs)
        tr = np.asarray(state.energy_trace)
        rises = int((np.diff(tr[3:]) > 1e-12 * np.abs(tr[3:-1])).sum())
        rows.append((alpha, beta, endpoint_error(w, pair.truth), abs_stats(div_arrays(w.u.data, w.v.data))[1],
                     rises, state.iter, state.converged))
        print(*rows[-1])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, ["alpha", "beta", "aee", "div_max", "trace_rises", "bca_iters", "converged"], rows)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    d = SweepConfig()
    ap.add_argument("--size", type=int, default=d.size)
    ap.add_argument("--alphas", type=float, nargs="+", default=d.alphas)
    ap.add_argument("--betas", type=float, nargs="+", default=d.betas)
    ap.add_argument("--out", type=Path, default=Path("runs/sweep.csv"))
    a = ap.parse_args()
    run(SweepConfig(a.size, a.alphas, a.betas), a.out)


if __name__ == "__main__":
    main()
