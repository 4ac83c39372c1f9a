"""Multiplier growth in forced BCA runs on the Oseen pair.

The default start tolerances end the run after one iteration, so this study
scales them down (``--eps0-scale``) and logs the residual, ``|f d|`` and the
multiplier deviation per iteration.

    python3 scripts/bca_multiplier_study.py --size 250 --eps0-scale 0.5 --iters 30
"""
import argparse
from dataclasses import asdict, dataclass
from pathlib import Path

from fluidrefine import constraint, hs, synth
from fluidrefine.io_reports import write_history_csv


@dataclass
class StudyConfig:
    size: int = 250
    eps0_scale: float = 0.5
    iters: int = 30
    feedback: bool = False  # feed the multiplier back into the flow update


def run(cfg: StudyConfig, out: Path):
    pair = synth.oseen_pair(cfg.size)
    w_hs = hs.hs_solve(pair.frame1, pair.frame2)
    bcfg = constraint.BcaConfig(eps0_scale=cfg.eps0_scale, max_outer=cfg.iters, multiplier_feedback=cfg.feedback)
    _, state = constraint.bca_run(pair.frame1, pair.frame2, w0=w_hs, bca_cfg=bcfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_history_csv(out, state.history)
    for r in state.history:
        print(f"{r.iter:3d} {r.step:9s} res={r.residual:.4g} fd={r.fd:.4g} dev={r.lambda_dev:.4g} inc={r.increment:.4g}")
    return state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for k, v in asdict(StudyConfig()).items():
        if isinstance(v, bool):
            ap.add_argument(f"--{k.replace('_', '-')}", action="store_true")
        else:
            ap.add_argument(f"--{k.replace('_', '-')}", type=type(v), default=v)
    ap.add_argument("--out", type=Path, default=Path("runs/bca_history.csv"))
    a = vars(ap.parse_args())
    out = a.pop("out")
    run(StudyConfig(**a), out)


if __name__ == "__main__":
    main()
