"""Property checks shared by ``fluidrefine verify`` and the test suite.

Each check returns a CheckResult with the measured numbers, so a failure
names the property and the value that broke it.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .constraint import augmented_lagrangian, l2norm
from .diffusion import PerturbationField, energy_balance_step, kdelta_stability_bound, kernel_norm_bound_check, weighted_energy
from .fields import FlowField, ScalarField, curl_arrays, div_arrays
from .hs import ofc_data
from .refine import RefineConfig, cross_term_k, diagonalization_residual, energy_jc, energy_jhs, energy_jr

DIAG_TOL = 1e-2
DIAG_TREND = 3.0
KERNEL_EQ_RTOL = 1e-3
ENERGY_TOL_COARSE = 0.05
ENERGY_TOL_FINE = 0.01
DECOMP_RTOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        vals = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.values.items())
        return f"{self.name}={'pass' if self.passed else 'fail'} {vals}".rstrip()


def trig_case(n: int, a0: float = 1.0) -> tuple[FlowField, ScalarField]:
    """Smooth trigonometric flow and image on the unit square, ``n x n`` samples."""
    h = 1.0 / (n - 1)
    x = np.arange(n) * h
    X, Y = np.meshgrid(x, x)
    u = np.sin(2 * np.pi * X) * np.cos(np.pi * Y) + 0.5 * np.cos(3 * np.pi * X * Y)
    v = np.cos(2 * np.pi * X + 1.0) * np.sin(2 * np.pi * Y)
    f = 0.5 + 0.4 * np.sin(np.pi * X) * np.cos(2 * np.pi * Y)
    return FlowField.from_arrays(u, v, h, h), ScalarField(f, h, h)


def check_diagonalization(n: int = 256, curl_op=curl_arrays, a0: float = 1.0) -> CheckResult:
    """Residual at ``n`` is below DIAG_TOL and drops DIAG_TREND-fold on the
    ``2n`` grid over the same square."""
    r1 = diagonalization_residual(*trig_case(n), a0, curl_op=curl_op)
    r2 = diagonalization_residual(*trig_case(2 * n), a0, curl_op=curl_op)
    ratio = r1 / r2 if r2 > 0 else np.inf
    return CheckResult("diagonalization", bool(r1 <= DIAG_TOL and ratio >= DIAG_TREND),
                       {"grid": n, "residual": r1, "residual_fine": r2, "ratio": float(ratio)})


def varying_k(n: int, dx: float, lo: float = 1.0, hi: float = 2.0) -> PerturbationField:
    """Smooth ``k`` sweeping the whole range ``[lo, hi]``."""
    c = (n - 1) / 2.0
    y, x = np.mgrid[0:n, 0:n]
    s = 0.5 + 0.5 * np.cos(2 * np.pi * (x - c) / n) * np.cos(2 * np.pi * (y - c) / n)
    s = (s - s.min()) / (s.max() - s.min())
    return PerturbationField(ScalarField(lo + (hi - lo) * s, dx, dx), lo, hi)


def check_kernel_bounds(n: int = 129, dx: float = 0.5, ps=(1.0, 2.0), ts=(0.5, 1.0, 4.0)) -> CheckResult:
    """Quadrature ``||G_k(., t)||_p`` against ``C_k t^((1-p)/p)``."""
    worst_eq = 0.0
    worst_ratio = 0.0
    ok = True
    cases = [("constant", PerturbationField.constant(1.5, n, n, dx, dx)), ("varying", varying_k(n, dx))]
    for label, k in cases:
        for p in ps:
            for t in ts:
                norm, bound = kernel_norm_bound_check(k, p, t)
                worst_ratio = max(worst_ratio, norm / bound)
                ok &= norm <= bound * (1 + 1e-12)
                if label == "constant":
                    rel = abs(norm - bound) / bound
                    worst_eq = max(worst_eq, rel)
                    ok &= rel <= KERNEL_EQ_RTOL
    return CheckResult("kernel_bound", bool(ok), {"max_norm_over_bound": worst_ratio, "constant_k_rel_gap": worst_eq})


def bump_case(n: int = 64) -> tuple[ScalarField, PerturbationField]:
    c = (n - 1) / 2.0
    y, x = np.mgrid[0:n, 0:n]
    eta = np.exp(-((x - c) ** 2 + (y - c) ** 2) / (2 * (n / 8.0) ** 2))
    return ScalarField(eta), varying_k(n, 1.0)


def balance_error(eta: ScalarField, k: PerturbationField, dt: float, steps: int) -> tuple[float, bool]:
    """Worst per-step relative discrepancy and whether sigma never rose."""
    worst = 0.0
    mono = True
    for _ in range(steps):
        s0 = weighted_energy(eta, k)
        eta, bal = energy_balance_step(eta, k, dt)
        worst = max(worst, bal.relative_discrepancy)
        mono &= weighted_energy(eta, k) <= s0
    return worst, mono


def check_energy_balance(n: int = 64, steps: int = 40) -> CheckResult:
    """Monotone weighted energy and first-order agreement of the discrete balance."""
    eta, k = bump_case(n)
    dt = 0.5 * kdelta_stability_bound(k.a2)
    coarse, mono1 = balance_error(eta, k, dt, steps)
    fine, mono2 = balance_error(eta, k, dt / 8.0, 8 * steps)
    ok = mono1 and mono2 and coarse <= ENERGY_TOL_COARSE and fine <= ENERGY_TOL_FINE
    return CheckResult("energy_balance", bool(ok), {"discrepancy_half_cfl": coarse, "discrepancy_eighth": fine,
                                                     "monotone": bool(mono1 and mono2)})


def random_frames(n: int, rng) -> tuple[ScalarField, ScalarField]:
    a = ndimage.gaussian_filter(rng.random((n, n)), 2.0, mode="wrap")
    b = ndimage.gaussian_filter(rng.random((n, n)), 2.0, mode="wrap")
    a = (a - a.min()) / np.ptp(a)
    b = 0.9 * a + 0.1 * (b - b.min()) / np.ptp(b)
    return ScalarField(a), ScalarField(b)


def random_flow(n: int, rng, scale: float = 1.0) -> FlowField:
    u = ndimage.gaussian_filter(rng.standard_normal((n, n)), 3.0) * scale
    v = ndimage.gaussian_filter(rng.standard_normal((n, n)), 3.0) * scale
    return FlowField.from_arrays(u, v)


def decomposition_terms(w: FlowField, f1: ScalarField, f2: ScalarField, alpha_hs: float = 1.0,
                        alpha_r: float = 100.0, scale: float = 255.0) -> dict:
    """``J_C`` with ``alpha_hs + alpha_r`` against ``J_HS + J_R + K``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = RefineConfig(alpha=alpha_r, beta=1.0, phi="image_squared", psi="divergence", intensity_scale=scale)
    fmean = f1.like(0.5 * (f1.data + f2.data))
    jc = energy_jc(w, f1, f2, alpha_hs + alpha_r, scale=scale)
    jhs = energy_jhs(w, f1, f2, alpha_hs, scale=scale)
    jr = energy_jr(w, fmean, cfg)
    k = cross_term_k(w, f1, f2, scale=scale)
    ofc = ofc_data(f1, f2, 0.0, scale)
    r = ofc.bu.data * w.u.data + ofc.bv.data * w.v.data - ofc.c.data
    fd = ofc.f.data * div_arrays(w.u.data, w.v.data)
    k_bound = 2.0 * l2norm(r[1:-1, 1:-1]) * l2norm(fd[1:-1, 1:-1])
    return {"jc": jc, "sum": jhs + jr + k, "k": k, "k_bound": k_bound}


def check_decomposition(n: int = 64, count: int = 50, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    k_ok = True
    for _ in range(count):
        f1, f2 = random_frames(n, rng)
        t = decomposition_terms(random_flow(n, rng), f1, f2)
        worst = max(worst, abs(t["jc"] - t["sum"]) / abs(t["jc"]))
        k_ok &= abs(t["k"]) <= t["k_bound"] * (1 + 1e-12)
    return CheckResult("decomposition", bool(worst <= DECOMP_RTOL and k_ok),
                       {"max_rel_gap": worst, "k_within_bound": bool(k_ok), "cases": count})


def check_lagrangian(n: int = 64, count: int = 10, seed: int = 1) -> CheckResult:
    """The two forms of the augmented Lagrangian agree (raises inside otherwise)."""
    rng = np.random.default_rng(seed)
    try:
        for _ in range(count):
            f1, f2 = random_frames(n, rng)
            ofc = ofc_data(f1, f2, 0.0, 255.0)
            lam = f1.like(rng.standard_normal((n, n)))
            augmented_lagrangian(random_flow(n, rng), lam, float(rng.uniform(0.01, 10)), ofc, 100.0)
    except ArithmeticError as exc:
        return CheckResult("lagrangian_identity", False, {"error": str(exc)})
    return CheckResult("lagrangian_identity", True, {"cases": count})


def run_all(grid: int = 256, curl_op=curl_arrays) -> list[CheckResult]:
    """All property checks; ``grid`` sets the diagonalization size and caps
    the others at 64."""
    small = min(grid, 64)
    return [
        check_diagonalization(grid, curl_op=curl_op),
        check_kernel_bounds(),
        check_energy_balance(small),
        check_decomposition(small),
        check_lagrangian(small),
    ]
