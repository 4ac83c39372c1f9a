"""Constraint-based refinement: energies and the discrete Euler-Lagrange sweep.

The refinement functional is

    J_R(w) = beta * sum phi(f) psi(w)^2 + alpha * S(w)

with ``psi`` the divergence or the curl and ``S`` the Dirichlet form of the
nine-point Laplacian, ``S(u) = <u, -M u>``.  All sums run over interior
pixels (the boundary ring is excluded) and carry the cell area ``dx * dy``.
Using the form of ``M`` for the smoothness keeps the recorded energy exactly
the quantity the sweep descends.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .diffusion import PerturbationField, StabilityError, phi_of
from .fields import FlowField, GridError, ScalarField, curl_arrays, ddx, ddy, div_arrays, lap9
from .hs import NonConvergenceError, OfcData, ofc_data

log = logging.getLogger(__name__)

KAPPA9 = 20.0 / 6.0  # centre weight of the nine-point stencil
PHI_ALIASES = {"image_squared": "image_squared", "f2": "image_squared", "one": "one", "1": "one"}
PSI_ALIASES = {"divergence": "divergence", "div": "divergence", "curl": "curl"}


class RefinementDivergedError(RuntimeError):
    """The refinement energy rose for several consecutive sweeps."""

    def __init__(self, message, result=None, trace=None):
        super().__init__(message)
        self.result = result
        self.trace = trace


@dataclass
class RefineConfig:
    alpha: float = 100.0
    beta: float = 0.01
    a0: float = 1.0
    phi: str = "image_squared"
    psi: str = "divergence"
    max_iters: int = 3000
    tol: float = 1e-5
    dt: float = 0.1  # step of the evolutionary form and default semigroup time
    # frames in [0, 1] are multiplied by this before phi and the OFC data;
    # alpha = 100, beta = 0.01 are only meaningful for 8-bit intensities
    intensity_scale: float = 255.0
    divergence_window: int = 5

    def __post_init__(self):
        try:
            self.phi = PHI_ALIASES[self.phi]
            self.psi = PSI_ALIASES[self.psi]
        except KeyError as exc:
            raise ValueError(f"unknown phi/psi choice {exc.args[0]!r}") from None
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if not self.a0 > 0:
            raise ValueError("a0 must be positive")
        if self.beta / self.alpha > 1e-2:
            raise ValueError(f"beta/alpha = {self.beta / self.alpha:g} exceeds 1e-2")
        if self.beta / self.alpha > 1e-4:
            warnings.warn(f"beta/alpha = {self.beta / self.alpha:g} is above the recommended 1e-4", stacklevel=2)
        if self.max_iters < 1 or self.tol <= 0 or self.dt <= 0 or self.intensity_scale <= 0:
            raise ValueError("max_iters, tol, dt and intensity_scale must be positive")


def interior_mask(shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    m[1:-1, 1:-1] = True
    return m


def _square_cells(s: ScalarField) -> float:
    if s.dx != s.dy:
        raise GridError("the nine-point stencil needs dx == dy")
    return s.dx


def phi_weight(f: ScalarField, cfg: RefineConfig) -> np.ndarray:
    """``phi`` evaluated on ``f * intensity_scale``."""
    return phi_of(f.data * cfg.intensity_scale, cfg.phi)


def _psi(u, v, psi, dx, dy):
    return div_arrays(u, v, dx, dy) if psi == "divergence" else curl_arrays(u, v, dx, dy)


def smoothness(w: FlowField) -> float:
    """``<u, -M u> + <v, -M v>``, the quadrature of the integral of |grad u|^2 + |grad v|^2."""
    h = _square_cells(w.u)
    u, v = w.u.data, w.v.data
    return -float(np.sum(u * lap9(u, h)) + np.sum(v * lap9(v, h))) * w.dx * w.dy


def _interior_sum(a: np.ndarray, dx: float, dy: float) -> float:
    return float(np.sum(a[1:-1, 1:-1])) * dx * dy


def energy_jr(w: FlowField, f: ScalarField, cfg: RefineConfig) -> float:
    """Refinement functional ``beta sum phi psi^2 + alpha S``."""
    if not w.u.same_grid(f):
        raise GridError("flow and image grids differ")
    ps = _psi(w.u.data, w.v.data, cfg.psi, w.dx, w.dy)
    val = cfg.beta * _interior_sum(phi_weight(f, cfg) * ps * ps, w.dx, w.dy)
    return val + cfg.alpha * smoothness(w) if cfg.alpha else val


def _residual(w: FlowField, ofc: OfcData) -> np.ndarray:
    if not w.u.same_grid(ofc.bu):
        raise GridError(f"flow {w.shape} and constraint {ofc.shape} grids differ")
    return ofc.bu.data * w.u.data + ofc.bv.data * w.v.data - ofc.c.data


def _ofc(f1, f2, sigma, scale) -> OfcData:
    return ofc_data(f1, f2, sigma, scale)


def energy_jhs(w: FlowField, f1: ScalarField, f2: ScalarField, alpha: float, *, sigma: float = 0.0,
               scale: float = 1.0) -> float:
    """Horn-Schunck functional: squared OFC residual plus ``alpha S``."""
    r = _residual(w, _ofc(f1, f2, sigma, scale))
    return _interior_sum(r * r, w.dx, w.dy) + alpha * smoothness(w)


def energy_jc(w: FlowField, f1: ScalarField, f2: ScalarField, alpha: float, *, sigma: float = 0.0,
              scale: float = 1.0) -> float:
    """Continuity-equation functional ``sum (f_t + div(f w))^2 + alpha S``.

    ``div(f w)`` is expanded as ``grad f . w + f div w`` so that the identity
    with ``J_HS + J_R + K`` is exact on the grid.
    """
    ofc = _ofc(f1, f2, sigma, scale)
    r = _residual(w, ofc) + ofc.f.data * div_arrays(w.u.data, w.v.data, w.dx, w.dy)
    return _interior_sum(r * r, w.dx, w.dy) + alpha * smoothness(w)


def cross_term_k(w: FlowField, f1: ScalarField, f2: ScalarField, *, sigma: float = 0.0, scale: float = 1.0) -> float:
    """``K = 2 sum (B w - c) f div w``."""
    ofc = _ofc(f1, f2, sigma, scale)
    fd = ofc.f.data * div_arrays(w.u.data, w.v.data, w.dx, w.dy)
    return 2.0 * _interior_sum(_residual(w, ofc) * fd, w.dx, w.dy)


# -- the sweep ----------------------------------------------------------------

@dataclass
class _Problem:
    """Arrays of the quadratic objective descended by ``refine_iterate``."""

    alpha: float
    beta_phi: np.ndarray  # beta * phi, zero on the boundary ring
    psi: str
    h: float
    bu: np.ndarray | None = None
    bv: np.ndarray | None = None
    c: np.ndarray | None = None
    mu: float = 0.0
    lam: np.ndarray | None = None

    @property
    def constrained(self) -> bool:
        return self.bu is not None and (self.mu > 0 or self.lam is not None)

    def energy(self, u, v) -> float:
        h = self.h
        s = -(np.sum(u * lap9(u, h)) + np.sum(v * lap9(v, h)))
        ps = _psi(u, v, self.psi, h, h)
        e = self.alpha * s + np.sum(self.beta_phi * ps * ps)
        if self.constrained:
            r = (self.bu * u + self.bv * v - self.c)[1:-1, 1:-1]
            e += 0.5 * self.mu * np.sum(r * r)
            if self.lam is not None:
                e += np.sum(self.lam[1:-1, 1:-1] * r)
        return float(e) * h * h

    def sweep(self, u, v, diag):
        h = self.h
        ps = _psi(u, v, self.psi, h, h)
        g = self.beta_phi * ps
        # R = -grad(E)/2 of the smoothness and constraint parts
        ru = self.alpha * lap9(u, h)
        rv = self.alpha * lap9(v, h)
        if self.psi == "divergence":
            ru += ddx(g, h)
            rv += ddy(g, h)
        else:
            ru += ddy(g, h)
            rv -= ddx(g, h)
        gu, gv = -ru, -rv
        a11 = a22 = diag
        a12 = 0.0
        if self.constrained:
            r = self.bu * u + self.bv * v - self.c
            s = self.mu * r
            if self.lam is not None:
                s = s + self.lam
            gu = gu + 0.5 * self.bu * s
            gv = gv + 0.5 * self.bv * s
            a11 = diag + 0.5 * self.mu * self.bu * self.bu
            a22 = diag + 0.5 * self.mu * self.bv * self.bv
            a12 = 0.5 * self.mu * self.bu * self.bv
        det = a11 * a22 - a12 * a12
        un = u - (a22 * gu - a12 * gv) / det
        vn = v - (a11 * gv - a12 * gu) / det
        _zero_ring(un)
        _zero_ring(vn)
        return un, vn


def _zero_ring(a: np.ndarray):
    a[0, :] = 0.0
    a[-1, :] = 0.0
    a[:, 0] = 0.0
    a[:, -1] = 0.0


def _problem(f: ScalarField, cfg: RefineConfig, ofc: OfcData | None, mu: float, lam) -> _Problem:
    h = _square_cells(f)
    bphi = cfg.beta * phi_weight(f, cfg) * interior_mask(f.shape)
    prob = _Problem(cfg.alpha, bphi, cfg.psi, h)
    if ofc is not None:
        if not ofc.bu.same_grid(f):
            raise GridError("constraint and image grids differ")
        inside = interior_mask(f.shape)
        prob.bu = ofc.bu.data * inside
        prob.bv = ofc.bv.data * inside
        prob.c = ofc.c.data * inside
        prob.mu = float(mu)
        prob.lam = None if lam is None else np.asarray(getattr(lam, "data", lam), dtype=np.float64)
    return prob


def sweep_diagonal(f: ScalarField, cfg: RefineConfig) -> np.ndarray:
    """Jacobi diagonal ``(alpha * 20/6 + 2 beta phi_max) / h^2``.

    ``phi_max`` is the largest ``phi`` in the 3x3 neighbourhood, which bounds
    the row sums of the constraint term and makes every sweep a descent step.
    """
    h = _square_cells(f)
    bphi = cfg.beta * phi_weight(f, cfg) * interior_mask(f.shape)
    return (cfg.alpha * KAPPA9 + 2.0 * ndimage.maximum_filter(bphi, size=3, mode="constant")) / (h * h)


def refine_iterate(w0: FlowField, f: ScalarField, cfg: RefineConfig | None = None, *, ofc: OfcData | None = None,
                   mu: float = 0.0, lam=None, strict: bool = True, callback=None):
    """Jacobi sweeps on the refinement functional, from ``w0``.

    Without ``ofc`` this minimises ``J_R`` alone (pure diffusion towards zero
    under the Dirichlet boundary).  With ``ofc`` the objective gains the
    penalty ``mu/2 |B w - c|^2`` and, if ``lam`` is given, ``<lam, B w - c>``.

    Each sweep solves ``P w_new = b(w_old)`` pixelwise: ``P`` is the Jacobi
    diagonal (a 2x2 block when the penalty couples u and v) and ``b`` holds
    ``alpha M*u`` and the forcing ``beta d/dx[phi psi]``.  The boundary ring is
    reset to zero after every sweep.

    Returns ``(flow, trace)`` where ``trace[i]`` is the objective after
    sweep ``i`` (``trace[0]`` is the objective at ``w0`` with its boundary ring zeroed).  Stops when the
    max-norm update falls below ``tol`` times the max flow magnitude.
    Raises NonConvergenceError after ``max_iters`` sweeps when ``strict``,
    and RefinementDivergedError when the objective grows for
    ``divergence_window`` consecutive sweeps.
    """
    cfg = cfg or RefineConfig()
    if not w0.u.same_grid(f):
        raise GridError("flow and image grids differ")
    prob = _problem(f, cfg, ofc, mu, lam)
    diag = sweep_diagonal(f, cfg)
    u, v = w0.u.data.copy(), w0.v.data.copy()
    # the start is projected onto the Dirichlet constraint so sweeps only descend
    for a in (u, v):
        a[0, :] = a[-1, :] = 0.0
        a[:, 0] = a[:, -1] = 0.0
    trace = [prob.energy(u, v)]
    rises = 0
    for it in range(1, cfg.max_iters + 1):
        un, vn = prob.sweep(u, v, diag)
        change = max(np.abs(un - u).max(), np.abs(vn - v).max())
        size = max(np.abs(un).max(), np.abs(vn).max())
        u, v = un, vn
        trace.append(prob.energy(u, v))
        if callback is not None:
            callback(it, u, v, trace[-1])
        rises = rises + 1 if trace[-1] - trace[-2] > 1e-12 * abs(trace[-2]) else 0
        if rises >= cfg.divergence_window:
            flow = FlowField(w0.u.like(u), w0.v.like(v))
            raise RefinementDivergedError(f"energy increased for {rises} consecutive sweeps at sweep {it}",
                                          result=flow, trace=trace)
        if change <= cfg.tol * size or size == 0.0:
            log.debug("refinement converged after %d sweeps", it)
            return FlowField(w0.u.like(u), w0.v.like(v)), trace
    flow = FlowField(w0.u.like(u), w0.v.like(v))
    if strict:
        err = NonConvergenceError(f"refinement did not reach tol={cfg.tol} in {cfg.max_iters} sweeps",
                                  result=flow, iterations=cfg.max_iters)
        err.trace = trace
        raise err
    return flow, trace


# -- the evolutionary system and its diagonalisation ---------------------------

def pde_rhs(w: FlowField, f: ScalarField, a0: float, phi: str = "image_squared"):
    """Discrete right side ``A w`` of the evolutionary system.

    ``A w = (M u + a0 d/dx[phi d], M v + a0 d/dy[phi d])`` with ``d = div w``,
    ``M`` the nine-point Laplacian and central differences of the product.
    ``f`` must be normalised to [0, 1].
    """
    h = _square_cells(w.u)
    ph = phi_of(f.data, phi)
    g = ph * div_arrays(w.u.data, w.v.data, h, h)
    return lap9(w.u.data, h) + a0 * ddx(g, h), lap9(w.v.data, h) + a0 * ddy(g, h)


def evolve_pde(w: FlowField, f: ScalarField, a0: float, dt: float, steps: int, phi: str = "image_squared") -> FlowField:
    """Explicit Euler steps of ``w_t = A w`` with the Dirichlet ring held at zero."""
    h = _square_cells(w.u)
    bound = h * h / (4.0 * (1.0 + a0 * float(phi_of(f.data, phi).max())))
    if not 0 < dt <= bound:
        raise StabilityError(f"dt={dt} outside the stable range (0, {bound}]")
    u, v = w.u.data.copy(), w.v.data.copy()
    _zero_ring(u)
    _zero_ring(v)
    for _ in range(steps):
        au, av = pde_rhs(FlowField(w.u.like(u), w.v.like(v)), f, a0, phi)
        u = u + dt * au
        v = v + dt * av
        _zero_ring(u)
        _zero_ring(v)
    return FlowField(w.u.like(u), w.v.like(v))


def diagonalization_residual(w: FlowField, f: ScalarField, a0: float, *, phi: str = "image_squared",
                             margin: int = 3, curl_op=curl_arrays) -> float:
    """How far the discrete system is from its diagonal (decoupled) form.

    Computes ``r1 = curl(A w) - M curl(w)`` and ``r2 = div(A w) - M (k div w)``
    with ``k = 1 + a0 phi(f)`` over the interior (``margin`` pixels in) and
    returns the larger of their L2 norms relative to ``M curl w`` and
    ``M (k div w)``.  References below ``1e-4 |w| / h^2`` are floored there
    so exact cases (polynomials) do not divide rounding noise by rounding
    noise.  ``curl_op`` exists for mutation testing.
    """
    h = _square_cells(w.u)
    u, v = w.u.data, w.v.data
    au, av = pde_rhs(w, f, a0, phi)
    k = 1.0 + a0 * phi_of(f.data, phi)
    ref1 = lap9(curl_op(u, v, h, h), h)
    ref2 = lap9(k * div_arrays(u, v, h, h), h)
    r1 = curl_op(au, av, h, h) - ref1
    r2 = div_arrays(au, av, h, h) - ref2
    sl = (slice(margin, -margin), slice(margin, -margin))
    floor = 1e-4 * float(np.sqrt(np.mean(u * u + v * v))) / (h * h)
    out = 0.0
    for r, ref in ((r1, ref1), (r2, ref2)):
        num = float(np.linalg.norm(r[sl]))
        den = max(float(np.linalg.norm(ref[sl])), floor * np.sqrt(r[sl].size))
        out = max(out, num / den if den > 0 else (0.0 if num == 0 else np.inf))
    return out


def perturbation_for(f: ScalarField, cfg: RefineConfig) -> PerturbationField:
    """``k = 1 + a0 phi(f)`` on the [0, 1] image, as used by the semigroup."""
    return PerturbationField.from_image(f.like(np.clip(f.data, 0.0, 1.0)), cfg.a0, cfg.phi)
