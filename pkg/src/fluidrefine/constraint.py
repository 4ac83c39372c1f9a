"""Augmented-Lagrangian pieces and the Bounded Constraint Algorithm (BCA).

The flow update of each BCA iteration minimises the refinement functional
plus the quadratic OFC penalty ``mu_c/2 |B v - c|^2`` (see
``refine.refine_iterate``).  The multiplier follows the Uzawa rule
``lambda += 2 f d + rho (B v - c)`` with ``d`` propagated by the diffusion
semigroup, ``d(n) = S(t) d(n-1)``.  By default the multiplier does not feed
back into the flow update, matching the discrete Euler-Lagrange update
which carries no multiplier term; ``BcaConfig.multiplier_feedback`` adds the
``<lambda, B v - c>`` term for experiments.

Norms are discrete L2 norms ``sqrt(sum a^2 dx dy)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .diffusion import semigroup_apply
from .fields import FlowField, GridError, ScalarField, div_arrays
from .hs import HsConfig, NonConvergenceError, OfcData, hs_solve, ofc_data
from .refine import RefineConfig, perturbation_for, refine_iterate, smoothness

log = logging.getLogger(__name__)

__all__ = [
    "OfcData", "BcaConfig", "BcaState", "BcaRecord", "LagrangianIdentityError", "ofc_residual",
    "augmented_lagrangian", "uzawa_update", "bca_run", "illumination_correct", "l2norm",
]


class LagrangianIdentityError(ArithmeticError):
    """The two algebraic forms of the augmented Lagrangian disagree."""


def l2norm(a, dx: float = 1.0, dy: float = 1.0) -> float:
    if isinstance(a, ScalarField):
        a = a.data
    return float(np.sqrt(np.sum(a * a) * dx * dy))


def ofc_residual(w: FlowField, ofc: OfcData) -> ScalarField:
    """Pointwise ``f_x u + f_y v - c``."""
    if not w.u.same_grid(ofc.bu):
        raise GridError(f"flow {w.shape} and constraint {ofc.shape} grids differ")
    return w.u.like(ofc.bu.data * w.u.data + ofc.bv.data * w.v.data - ofc.c.data)


def _inner(a, b, dx, dy) -> float:
    return float(np.sum(a[1:-1, 1:-1] * b[1:-1, 1:-1])) * dx * dy


def augmented_lagrangian(w: FlowField, lambda1: ScalarField, mu_c: float, ofc: OfcData, alpha: float,
                         rtol: float = 1e-8) -> float:
    """``L = J_C(w) + mu_c/2 |B w - c|^2 + <lambda1, B w - c>``.

    Also evaluates the rearranged form
    ``J_R(w) + (1 + mu_c/2) |B w - c|^2 + <lambda1 + 2 f div w, B w - c>``
    (``J_R`` with ``beta = 1``, ``phi = f^2``, divergence penalty) and raises
    LagrangianIdentityError when the two differ by more than ``rtol``.  The
    ``1 +`` is the squared residual carried inside ``J_C``.  Sums run over
    interior pixels; ``f`` is ``ofc.f``.
    """
    if not (w.u.same_grid(ofc.bu) and lambda1.same_grid(ofc.bu)):
        raise GridError("flow, multiplier and constraint grids differ")
    dx, dy = w.dx, w.dy
    r = ofc_residual(w, ofc).data
    fd = ofc.f.data * div_arrays(w.u.data, w.v.data, dx, dy)
    lam = lambda1.data
    smooth = alpha * smoothness(w)
    jc = _inner(r + fd, r + fd, dx, dy) + smooth
    rr = _inner(r, r, dx, dy)
    form19 = jc + 0.5 * mu_c * rr + _inner(lam, r, dx, dy)
    jr = _inner(fd, fd, dx, dy) + smooth
    form21 = jr + (1.0 + 0.5 * mu_c) * rr + _inner(lam + 2.0 * fd, r, dx, dy)
    scale = max(abs(jc), rr, abs(_inner(lam, r, dx, dy)), 1e-300)
    if abs(form19 - form21) > rtol * scale:
        raise LagrangianIdentityError(f"Lagrangian forms differ: {form19!r} vs {form21!r}")
    return form19


def uzawa_update(lambda1: ScalarField, f: ScalarField, d: ScalarField, rho: float, residual: ScalarField) -> ScalarField:
    """``lambda1 + 2 f d + rho * residual``, pointwise."""
    for other in (f, d, residual):
        if not lambda1.same_grid(other):
            raise GridError("uzawa_update inputs live on different grids")
    return lambda1.like(lambda1.data + 2.0 * f.data * d.data + rho * residual.data)


@dataclass
class BcaConfig:
    rho0: float = 1.0
    # penalty on |B v - c|^2 at the refinement intensity scale (8-bit counts)
    mu_c: float = 0.1
    mu_cap: float = 1e9
    max_outer: int = 50
    halving_iters: int = 5  # halve tolerances this many times, then M/(n+1)^2
    semigroup_t: float | None = None  # defaults to RefineConfig.dt
    multiplier_feedback: bool = False
    eps0_scale: float = 1.0  # initial tolerances as a fraction of the starting residual norms

    def __post_init__(self):
        if not (self.rho0 > 0 and self.mu_c > 0 and self.mu_cap >= self.mu_c):
            raise ValueError("rho0 and mu_c must be positive and mu_c <= mu_cap")
        if self.max_outer < 1 or self.halving_iters < 0:
            raise ValueError("max_outer must be >= 1 and halving_iters >= 0")
        if not self.eps0_scale > 0:
            raise ValueError("eps0_scale must be positive")
        if self.semigroup_t is not None and self.semigroup_t < 0:
            raise ValueError("semigroup_t must be non-negative")


@dataclass
class BcaRecord:
    iter: int
    residual: float  # |B v - c|
    fd: float  # |f d|
    lambda_dev: float  # |lambda - lambda(0)| after this iteration
    increment: float  # |lambda(n+1) - lambda(n)|, 0 when lambda is kept
    rho: float
    eps1: float
    eps2: float
    mu_c: float
    step: str  # "terminate", "inner" or "outer"
    sweeps: int


@dataclass
class BcaState:
    flow: FlowField
    lambda1: ScalarField
    rho: float
    eps1: float
    eps2: float
    mu_c: float
    delta_hs: float
    iter: int = 0
    converged: bool = False
    initial_flow: FlowField | None = None
    energy_trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    _schedule: tuple | None = None

    def __post_init__(self):
        if not (self.rho > 0 and self.mu_c > 0 and self.eps1 >= 0 and self.eps2 >= 0):
            raise ValueError("rho and mu_c must be positive and tolerances non-negative")

    def tighten(self, n: int, halving_iters: int):
        """Halve both tolerances for the first ``halving_iters`` iterations, then
        follow ``M/(n+1)^2`` with ``M`` fixed where the halving stopped."""
        if n <= halving_iters:
            self.eps1 *= 0.5
            self.eps2 *= 0.5
            return
        if self._schedule is None:
            self._schedule = (self.eps1 * (n + 1) ** 2, self.eps2 * (n + 1) ** 2)
        m1, m2 = self._schedule
        self.eps1 = min(self.eps1, m1 / (n + 2) ** 2)
        self.eps2 = min(self.eps2, m2 / (n + 2) ** 2)


def bca_run(f1: ScalarField, f2: ScalarField, hs_cfg: HsConfig | None = None, refine_cfg: RefineConfig | None = None,
            bca_cfg: BcaConfig | None = None, w0: FlowField | None = None) -> tuple[FlowField, BcaState]:
    """Run the Bounded Constraint Algorithm on a frame pair.

    ``w0`` replaces the Horn-Schunck start when given.  The run stops when
    ``|B v - c| <= max(eps1, 2 delta_HS)`` and ``|f d| <= eps2`` hold, where
    ``delta_HS`` is the OFC residual norm of the starting flow.  Otherwise the
    multiplier is updated (residual inside the bound) or ``rho`` and ``mu_c``
    grow a hundredfold (residual outside); both branches tighten the
    tolerances.  Hitting ``max_outer`` returns the last state with
    ``converged = False``.
    """
    hs_cfg = hs_cfg or HsConfig()
    refine_cfg = refine_cfg or RefineConfig()
    bca_cfg = bca_cfg or BcaConfig()
    if not f1.same_grid(f2):
        raise GridError(f"frame grids differ: {f1.shape} vs {f2.shape}")
    if w0 is None:
        w0 = hs_solve(f1, f2, hs_cfg)
    dx, dy = w0.dx, w0.dy
    ofc = ofc_data(f1, f2, hs_cfg.presmooth_sigma, refine_cfg.intensity_scale)
    f_unit = ofc.f.like(ofc.f.data / refine_cfg.intensity_scale)
    kfield = perturbation_for(f_unit, refine_cfg)
    t = refine_cfg.dt if bca_cfg.semigroup_t is None else bca_cfg.semigroup_t
    fimg = ofc.f.data

    d = w0.u.like(div_arrays(w0.u.data, w0.v.data, dx, dy))
    r0 = ofc_residual(w0, ofc)
    delta_hs = l2norm(r0, dx, dy)
    state = BcaState(
        flow=w0, lambda1=w0.u.like(np.zeros(w0.shape)), rho=bca_cfg.rho0,
        eps1=bca_cfg.eps0_scale * delta_hs, eps2=bca_cfg.eps0_scale * l2norm(fimg * d.data, dx, dy), mu_c=bca_cfg.mu_c, delta_hs=delta_hs, initial_flow=w0,
    )
    lam0 = state.lambda1
    flow = w0
    for n in range(1, bca_cfg.max_outer + 1):
        state.iter = n
        lam = state.lambda1 if bca_cfg.multiplier_feedback else None
        flow, trace = refine_iterate(flow, f_unit, refine_cfg, ofc=ofc, mu=state.mu_c, lam=lam, strict=False)
        state.energy_trace.extend(trace if n == 1 else trace[1:])
        state.flow = flow
        d = semigroup_apply(d, kfield, t)
        res = ofc_residual(flow, ofc)
        rn = l2norm(res, dx, dy)
        fdn = l2norm(fimg * d.data, dx, dy)
        rec = dict(iter=n, residual=rn, fd=fdn, rho=state.rho, eps1=state.eps1, eps2=state.eps2,
                   mu_c=state.mu_c, sweeps=len(trace) - 1)
        if rn <= max(state.eps1, 2.0 * state.delta_hs):
            if fdn <= state.eps2:
                state.converged = True
                state.history.append(BcaRecord(lambda_dev=l2norm(state.lambda1.data - lam0.data, dx, dy),
                                               increment=0.0, step="terminate", **rec))
                log.info("BCA terminated at iteration %d", n)
                break
            new = uzawa_update(state.lambda1, ofc.f, d, state.rho, res)
            inc = l2norm(new.data - state.lambda1.data, dx, dy)
            state.lambda1 = new
            step = "inner"
        else:
            inc = 0.0
            state.rho *= 100.0
            state.mu_c = min(100.0 * state.mu_c, bca_cfg.mu_cap)
            step = "outer"
        state.history.append(BcaRecord(lambda_dev=l2norm(state.lambda1.data - lam0.data, dx, dy),
                                       increment=inc, step=step, **rec))
        state.tighten(n, bca_cfg.halving_iters)
    else:
        log.warning("BCA stopped at the iteration cap (%d) without meeting both tolerances", bca_cfg.max_outer)
    return flow, state


def illumination_correct(f1: ScalarField, f2: ScalarField, sigma: float, eps: float = 1e-6) -> tuple[ScalarField, ScalarField]:
    """Rescale both frames to [0, 1], then multiply ``f2`` by
    ``G_sigma * f1 / (G_sigma * f2 + eps)`` to even out slow illumination changes."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not f1.same_grid(f2):
        raise GridError("frame grids differ")

    def unit(a):
        lo, hi = a.min(), a.max()
        return (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)

    a, b = unit(f1.data), unit(f2.data)
    ratio = ndimage.gaussian_filter(a, sigma, mode="nearest") / (ndimage.gaussian_filter(b, sigma, mode="nearest") + eps)
    return f1.like(a), f2.like(b * ratio)


def hs_or_best(f1: ScalarField, f2: ScalarField, cfg: HsConfig) -> tuple[FlowField, bool]:
    """Horn-Schunck flow and whether it converged (the last iterate otherwise)."""
    try:
        return hs_solve(f1, f2, cfg), True
    except NonConvergenceError as exc:
        return exc.result, False
