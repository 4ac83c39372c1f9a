"""Horn-Schunck initial flow estimator."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fields import FlowField, GridError, ScalarField, ddx, ddy

log = logging.getLogger(__name__)

# classical Horn-Schunck local average; Laplacian ~ KAPPA * (avg - u)
HS_AVERAGE = np.array([[1.0, 2.0, 1.0], [2.0, 0.0, 2.0], [1.0, 2.0, 1.0]]) / 12.0
HS_KAPPA = 3.0


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    ``result`` holds the last iterate so callers can still use it.
    """

    def __init__(self, message, result=None, iterations=0):
        super().__init__(message)
        self.result = result
        self.iterations = iterations


@dataclass
class HsConfig:
    alpha_hs: float = 20.0
    max_iters: int = 20000
    tol: float = 1e-4
    presmooth_sigma: float = 1.0
    # frames arrive in [0, 1] and are multiplied by this before differencing;
    # with alpha_hs = 20 a scale of 16 gives the smooth, core-underestimating
    # estimate that the refinement starts from
    intensity_scale: float = 16.0

    def __post_init__(self):
        if self.alpha_hs <= 0:
            raise ValueError("alpha_hs must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.intensity_scale <= 0:
            raise ValueError("intensity_scale must be positive")


@dataclass(frozen=True)
class OfcData:
    """Linearised brightness constancy ``bu*u + bv*v = c`` for a frame pair.

    ``f`` is the image used by the image-driven terms (mean of the frames),
    at the same intensity scale as the derivatives.
    """

    bu: ScalarField
    bv: ScalarField
    c: ScalarField
    f: ScalarField

    @property
    def shape(self):
        return self.bu.shape


def _check_pair(f1: ScalarField, f2: ScalarField):
    if not f1.same_grid(f2):
        raise GridError(f"frame grids differ: {f1.shape} vs {f2.shape}")


def presmooth(f: ScalarField, sigma: float) -> ScalarField:
    if sigma <= 0:
        return f
    return f.like(ndimage.gaussian_filter(f.data, sigma, mode="nearest"))


def image_derivatives(f1: ScalarField, f2: ScalarField, sigma: float = 0.0):
    """Return ``(fx, fy, ft)``: spatial derivatives averaged over both frames
    and the frame difference ``f2 - f1``."""
    _check_pair(f1, f2)
    a = presmooth(f1, sigma)
    b = presmooth(f2, sigma)
    fx = 0.5 * (ddx(a.data, a.dx) + ddx(b.data, b.dx))
    fy = 0.5 * (ddy(a.data, a.dy) + ddy(b.data, b.dy))
    return f1.like(fx), f1.like(fy), f1.like(b.data - a.data)


def ofc_data(f1: ScalarField, f2: ScalarField, sigma: float = 0.0, scale: float = 1.0) -> OfcData:
    """Build the constraint operator from a frame pair (intensities times ``scale``)."""
    _check_pair(f1, f2)
    s1 = f1.like(f1.data * scale)
    s2 = f2.like(f2.data * scale)
    fx, fy, ft = image_derivatives(s1, s2, sigma)
    a = presmooth(s1, sigma)
    b = presmooth(s2, sigma)
    return OfcData(fx, fy, ft.like(-ft.data), f1.like(0.5 * (a.data + b.data)))


def hs_energy(w: FlowField, f1: ScalarField, f2: ScalarField, cfg: HsConfig | None = None) -> float:
    """The discrete functional that the Jacobi sweeps of ``hs_solve`` descend.

    ``sum (fx u + fy v + ft)^2 + alpha_hs * <u, KAPPA (u - avg u)>`` (and the
    same for ``v``) over all pixels, where ``avg`` is the Horn-Schunck local
    average with replicated edges.  That averaging is symmetric with spectrum
    in [-1, 1], which makes each Jacobi sweep a descent step.  Unlike
    ``refine.energy_jhs`` the boundary here is Neumann, not Dirichlet.
    """
    cfg = cfg or HsConfig()
    ofc = ofc_data(f1, f2, cfg.presmooth_sigma, cfg.intensity_scale)
    u, v = w.u.data, w.v.data
    r = ofc.bu.data * u + ofc.bv.data * v - ofc.c.data
    smooth = 0.0
    for a in (u, v):
        smooth += float(np.sum(a * (a - ndimage.correlate(a, HS_AVERAGE, mode="nearest"))))
    return float(np.sum(r * r)) + cfg.alpha_hs * HS_KAPPA * smooth


def hs_solve(f1: ScalarField, f2: ScalarField, cfg: HsConfig | None = None, callback=None) -> FlowField:
    """Horn-Schunck flow in pixels/frame by Jacobi sweeps.

    Stops once the max-norm flow update, relative to the max flow magnitude,
    drops below ``cfg.tol``.  ``callback(iteration, u, v)`` runs after each
    sweep.  Raises NonConvergenceError (carrying the last iterate) when
    ``cfg.max_iters`` is exhausted.
    """
    cfg = cfg or HsConfig()
    ofc = ofc_data(f1, f2, cfg.presmooth_sigma, cfg.intensity_scale)
    fx, fy, ft = ofc.bu.data, ofc.bv.data, -ofc.c.data
    denom = cfg.alpha_hs * HS_KAPPA + fx * fx + fy * fy
    u = np.zeros_like(fx)
    v = np.zeros_like(fx)
    for it in range(1, cfg.max_iters + 1):
        ub = ndimage.correlate(u, HS_AVERAGE, mode="nearest")
        vb = ndimage.correlate(v, HS_AVERAGE, mode="nearest")
        t = (fx * ub + fy * vb + ft) / denom
        un = ub - fx * t
        vn = vb - fy * t
        change = max(np.abs(un - u).max(), np.abs(vn - v).max())
        size = max(np.abs(un).max(), np.abs(vn).max())
        u, v = un, vn
        if callback is not None:
            callback(it, u, v)
        if change <= cfg.tol * size or size == 0.0:
            log.debug("HS converged after %d sweeps", it)
            return FlowField(f1.like(u), f1.like(v))
    flow = FlowField(f1.like(u), f1.like(v))
    raise NonConvergenceError(
        f"Horn-Schunck did not reach tol={cfg.tol} in {cfg.max_iters} sweeps", result=flow, iterations=cfg.max_iters
    )
