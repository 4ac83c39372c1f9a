"""Command-line entry point: generate, estimate, refine, verify, kernel-check.

Exit codes: 0 success, 2 usage, 3 I/O, 4 non-convergence, 5 property failure.
Every command that takes ``--out`` writes ``manifest.txt`` (key=value).  A
manifest or any key=value file can be passed back with ``--config``; flags
given on the command line win over its values.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

from . import checks, io_reports
from .constraint import BcaConfig, bca_run, illumination_correct
from .diffusion import PerturbationField, QuadratureError, kernel_norm_bound_check
from .fields import FlowField, GridError, curl_arrays, ddx, ddy
from .hs import HsConfig, NonConvergenceError, hs_solve
from .refine import RefineConfig, RefinementDivergedError
from .synth import OseenSpec, cloud_pair, oseen_pair

log = logging.getLogger("fluidrefine")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NONCONV, EXIT_PROPERTY = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("fluidrefine")
    except metadata.PackageNotFoundError:
        return "unknown"


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def write_manifest(out: Path, command: str, args: argparse.Namespace, configs: dict):
    lines = [f"command={command}", f"version={_version()}"]
    for key, val in sorted(vars(args).items()):
        if key in ("func", "config", "command") or val is None:
            continue
        lines.append(f"{key}={val}")
    for prefix, cfg in configs.items():
        for key, val in asdict(cfg).items():
            lines.append(f"{prefix}.{key}={val}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_pair(a, b):
    if a is None or b is None:
        raise UsageError("two frames are required")
    f1, f2 = io_reports.read_image(a), io_reports.read_image(b)
    if f1.shape != f2.shape:
        raise GridError(f"frame sizes differ: {a} is {f1.width}x{f1.height}, {b} is {f2.width}x{f2.height}")
    return f1, f2


def _truth(args, shape):
    if not getattr(args, "truth", None):
        return None
    t = io_reports.read_flo(args.truth)
    if t.shape != shape:
        raise GridError(f"ground truth {t.shape} does not match frames {shape}")
    return t


def _hs_config(args) -> HsConfig:
    return HsConfig(alpha_hs=args.alpha_hs, max_iters=args.hs_max_iters, tol=args.hs_tol,
                    presmooth_sigma=args.sigma)


def _write_reports(out: Path, stem: str, w: FlowField, truth, row, trace=None):
    row = w.height // 2 if row is None else row
    rep = io_reports.flow_report(w, truth, row, trace)
    io_reports.write_report_csv(out / f"{stem}_report.csv", rep)
    for comp in ("u", "v"):
        tp = None if truth is None else io_reports.extract_profile(truth, row, comp)
        io_reports.write_profile_csv(out / f"{stem}_profile_{comp}.csv", io_reports.extract_profile(w, row, comp),
                                     tp, component=comp)
    return rep


# -- commands -----------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.size < 16:
        raise UsageError("--size must be at least 16")
    if args.preset == "cloud" and (args.gamma is not None or args.r0 is not None or args.density is not None):
        raise UsageError("--gamma, --r0 and --density apply to --preset oseen only")
    if args.preset == "oseen":
        spec = OseenSpec.reference_pair(args.size)
        if args.gamma is not None:
            spec.strengths = [args.gamma, -args.gamma]
        if args.r0 is not None:
            if args.r0 <= 0:
                raise UsageError("--r0 must be positive")
            spec.core_radius = args.r0
        pair = oseen_pair(args.size, frame_dt=args.frame_dt, density=0.05 if args.density is None else args.density,
                          seed=args.seed, spec=spec)
    else:
        pair = cloud_pair(args.size, frame_dt=args.frame_dt, seed=args.seed)
    out = _outdir(args.out)
    io_reports.write_image(out / "frame1.png", pair.frame1, bits=16)
    io_reports.write_image(out / "frame2.png", pair.frame2, bits=16)
    io_reports.write_flo(out / "truth.flo", pair.truth)
    io_reports.magnitude_raster(pair.truth, out / "truth_magnitude.png")
    write_manifest(out, "generate", args, {})
    print(f"wrote {out}/frame1.png, frame2.png, truth.flo")
    return EXIT_OK


def cmd_estimate(args) -> int:
    f1, f2 = _read_pair(args.frame1, args.frame2)
    cfg = _hs_config(args)
    out = _outdir(args.out)
    truth = _truth(args, f1.shape)
    code = EXIT_OK
    try:
        w = hs_solve(f1, f2, cfg)
    except NonConvergenceError as exc:
        log.error("%s", exc)
        w, code = exc.result, EXIT_NONCONV
    io_reports.write_flo(out / "hs.flo", w)
    io_reports.magnitude_raster(w, out / "hs_magnitude.png")
    rep = _write_reports(out, "hs", w, truth, args.row)
    write_manifest(out, "estimate", args, {"hs": cfg})
    print(f"hs: div_max={rep.div_stats[1]:.6g} curl_max={rep.curl_stats[1]:.6g}"
          + ("" if rep.aee is None else f" aee={rep.aee:.6g}"))
    return code


def cmd_refine(args) -> int:
    f1, f2 = _read_pair(args.frame1, args.frame2)
    if args.illum_correct:
        f1, f2 = illumination_correct(f1, f2, args.illum_sigma)
    hs_cfg = _hs_config(args)
    ref_cfg = RefineConfig(alpha=args.alpha, beta=args.beta, a0=args.a0, phi=args.phi, psi=args.psi,
                           max_iters=args.max_iters, tol=args.tol)
    bca_cfg = BcaConfig(mu_c=args.mu_c, max_outer=args.max_outer)
    out = _outdir(args.out)
    truth = _truth(args, f1.shape)
    code = EXIT_OK
    try:
        w0 = hs_solve(f1, f2, hs_cfg)
    except NonConvergenceError as exc:
        log.warning("%s; refining from the last iterate", exc)
        w0, code = exc.result, EXIT_NONCONV
    w, state = bca_run(f1, f2, hs_cfg, ref_cfg, bca_cfg, w0=w0)
    if not state.converged:
        code = EXIT_NONCONV
    io_reports.write_flo(out / "hs.flo", w0)
    io_reports.write_flo(out / "refined.flo", w)
    io_reports.magnitude_raster(w, out / "refined_magnitude.png")
    _write_reports(out, "hs", w0, truth, args.row)
    rep = _write_reports(out, "refined", w, truth, args.row, state.energy_trace)
    io_reports.write_trace_csv(out / "energy.csv", state.energy_trace)
    io_reports.write_history_csv(out / "history.csv", state.history)
    write_manifest(out, "refine", args, {"hs": hs_cfg, "refine": ref_cfg, "bca": bca_cfg})
    print(f"refined: bca_iters={state.iter} converged={state.converged} div_max={rep.div_stats[1]:.6g} "
          f"curl_max={rep.curl_stats[1]:.6g}" + ("" if rep.aee is None else f" aee={rep.aee:.6g}"))
    return code


def _bad_curl(u, v, dx=1.0, dy=1.0):
    # deliberate sign error for mutation testing of the verify command
    return ddy(u, dy) + ddx(v, dx)


def cmd_verify(args) -> int:
    curl_op = _bad_curl if args.inject_curl_sign_error else curl_arrays
    results = checks.run_all(args.grid, curl_op=curl_op)
    for r in results:
        print(r.line())
    if args.out:
        out = _outdir(args.out)
        io_reports.write_csv(out / "verify.csv", ["check", "passed"], [(r.name, r.passed) for r in results])
        write_manifest(out, "verify", args, {})
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ",".join(failed), file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_kernel_check(args) -> int:
    n = args.grid
    if args.k_min == args.k_max:
        k = PerturbationField.constant(args.k_min, n, n, args.dx, args.dx)
    else:
        k = checks.varying_k(n, args.dx, args.k_min, args.k_max)
    rows = []
    ok = True
    for p in args.p:
        for t in args.t:
            norm, bound = kernel_norm_bound_check(k, p, t)
            ok &= norm <= bound * (1 + 1e-12)
            rows.append((p, t, norm, bound))
            print(f"p={p:g} t={t:g} norm={norm:.9g} bound={bound:.9g} {'ok' if norm <= bound * (1 + 1e-12) else 'VIOLATED'}")
    if args.out:
        out = _outdir(args.out)
        io_reports.write_csv(out / "kernel_check.csv", ["p", "t", "norm", "bound"], rows)
        write_manifest(out, "kernel-check", args, {})
    return EXIT_OK if ok else EXIT_PROPERTY


# -- parser -------------------------------------------------------------------------

def _add_hs_flags(p):
    p.add_argument("--alpha-hs", type=float, default=20.0)
    p.add_argument("--hs-tol", type=float, default=1e-4)
    p.add_argument("--hs-max-iters", type=int, default=20000)
    p.add_argument("--sigma", type=float, default=1.0, help="presmoothing of the frames (pixels)")
    p.add_argument("--truth", help="ground-truth .flo for endpoint error and profiles")
    p.add_argument("--row", type=int, help="profile row (default: middle row)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluidrefine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=_version())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; explicit flags win")
    common.add_argument("--threads", type=int, default=1, help="worker threads for data-parallel kernels")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthetic frame pair with ground truth")
    g.add_argument("--preset", choices=["oseen", "cloud"], default="oseen")
    g.add_argument("--size", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--gamma", type=float, help="vortex circulation (px^2/s), pair is +gamma/-gamma")
    g.add_argument("--r0", type=float, help="vortex core radius (px)")
    g.add_argument("--density", type=float, help="particles per px^2")
    g.add_argument("--frame-dt", type=float, default=0.02)
    g.add_argument("--out", default="data")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("estimate", parents=[common], help="Horn-Schunck flow")
    e.add_argument("frame1", nargs="?")
    e.add_argument("frame2", nargs="?")
    _add_hs_flags(e)
    e.add_argument("--out", default="out")
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("refine", parents=[common], help="Horn-Schunck followed by constrained refinement")
    r.add_argument("frame1", nargs="?")
    r.add_argument("frame2", nargs="?")
    _add_hs_flags(r)
    r.add_argument("--phi", choices=["f2", "one"], default="f2")
    r.add_argument("--psi", choices=["div", "curl"], default="div")
    r.add_argument("--alpha", type=float, default=100.0)
    r.add_argument("--beta", type=float, default=0.01)
    r.add_argument("--a0", type=float, default=1.0)
    r.add_argument("--mu-c", type=float, default=0.1)
    r.add_argument("--max-outer", type=int, default=50)
    r.add_argument("--max-iters", type=int, default=3000, help="sweeps per refinement solve")
    r.add_argument("--tol", type=float, default=1e-5)
    r.add_argument("--illum-correct", action="store_true")
    r.add_argument("--illum-sigma", type=float, default=10.0)
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_refine)

    v = sub.add_parser("verify", parents=[common], help="run the property checks")
    v.add_argument("--grid", type=int, default=256)
    v.add_argument("--out")
    v.add_argument("--inject-curl-sign-error", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("kernel-check", parents=[common], help="kernel L^p norms against their bound")
    k.add_argument("--p", type=float, nargs="+", default=[1.0, 2.0])
    k.add_argument("--t", type=float, nargs="+", default=[0.5, 1.0, 4.0])
    k.add_argument("--k-min", type=float, default=1.0)
    k.add_argument("--k-max", type=float, default=2.0)
    k.add_argument("--grid", type=int, default=129)
    k.add_argument("--dx", type=float, default=0.5)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kernel_check)
    return parser


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, val in values.items():
        act = known.get(key)
        if act is None or key in ("config", "help"):
            continue
        if isinstance(act, argparse._StoreTrueAction):
            if val.lower() not in _BOOL:
                raise UsageError(f"config key {key}: expected a boolean, got {val!r}")
            defaults[key] = _BOOL[val.lower()]
        elif act.nargs in ("+", "*"):
            defaults[key] = [act.type(x) if act.type else x for x in val.strip("[]").replace(",", " ").split()]
        else:
            defaults[key] = act.type(val) if act.type and val != "None" else (None if val == "None" else val)
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"fluidrefine: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"fluidrefine: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("fluidrefine: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"fluidrefine: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, io_reports.ImageFormatError, io_reports.FlowFormatError, GridError) as exc:
        print(f"fluidrefine: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonConvergenceError, RefinementDivergedError) as exc:
        print(f"fluidrefine: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    except QuadratureError as exc:
        print(f"fluidrefine: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except ValueError as exc:
        print(f"fluidrefine: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
