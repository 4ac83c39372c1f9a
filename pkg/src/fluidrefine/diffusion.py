"""Decoupled diffusion processes for the curl and the weighted divergence.

The refinement system splits into a heat flow for the curl and a
multiplicatively perturbed flow ``eta_t = k Laplace(eta)`` for ``eta = k * div``,
where ``k = 1 + a0 * phi(f)``.  This module provides explicit steps for both,
the Gaussian kernel ``G_k``, its L^p bound, and the semigroup ``S(t)``
realised as a spatially varying convolution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import GridError, ScalarField, lap5

TAIL_MASS = 1e-6


class StabilityError(ValueError):
    """Explicit step size above the stability bound."""


class QuadratureError(RuntimeError):
    """A kernel integral could not be evaluated to the required accuracy."""


def phi_of(f: np.ndarray, phi: str = "image_squared") -> np.ndarray:
    """Image weight ``phi(f)``: ``f**2`` or ``1``."""
    if phi == "image_squared":
        return f * f
    if phi == "one":
        return np.ones_like(f)
    raise ValueError(f"unknown phi {phi!r}")


@dataclass(frozen=True)
class PerturbationField:
    """Strictly positive multiplier ``k`` with bounds ``a1 <= k <= a2``."""

    k: ScalarField
    a1: float
    a2: float

    def __post_init__(self):
        if not self.a1 > 0:
            raise ValueError(f"a1 must be positive, got {self.a1}")
        if self.a2 < self.a1:
            raise ValueError(f"a2={self.a2} is below a1={self.a1}")
        kmin, kmax = self.k.data.min(), self.k.data.max()
        tol = 1e-12 * max(1.0, abs(self.a2))
        if kmin < self.a1 - tol or kmax > self.a2 + tol:
            raise ValueError(f"k spans [{kmin}, {kmax}], outside [{self.a1}, {self.a2}]")

    @classmethod
    def from_field(cls, k: ScalarField, a1: float | None = None, a2: float | None = None) -> "PerturbationField":
        """Wrap ``k``; the bounds default to its extreme values."""
        return cls(k, float(k.data.min()) if a1 is None else a1, float(k.data.max()) if a2 is None else a2)

    @classmethod
    def constant(cls, value: float, width: int, height: int, dx: float = 1.0, dy: float = 1.0) -> "PerturbationField":
        return cls(ScalarField(np.full((height, width), float(value)), dx, dy), float(value), float(value))

    @classmethod
    def from_image(cls, f: ScalarField, a0: float = 1.0, phi: str = "image_squared") -> "PerturbationField":
        """``k = 1 + a0 * phi(f)`` for an image ``f`` with values in [0, 1].

        The bounds are those of ``phi`` on [0, 1], so ``k`` lies in
        ``[1, 1 + a0]`` for ``phi = f**2``.
        """
        if a0 <= 0:
            raise ValueError("a0 must be positive")
        if f.data.min() < 0 or f.data.max() > 1:
            raise ValueError("image must be normalised to [0, 1]")
        k = f.like(1.0 + a0 * phi_of(f.data, phi))
        if phi == "one":
            return cls(k, 1.0 + a0, 1.0 + a0)
        return cls(k, 1.0, 1.0 + a0)


# -- explicit time stepping ---------------------------------------------------

def heat_stability_bound(dx: float = 1.0, dy: float = 1.0) -> float:
    return dx * dx * dy * dy / (2.0 * (dx * dx + dy * dy))


def kdelta_stability_bound(a2: float, dx: float = 1.0, dy: float = 1.0) -> float:
    """Largest stable explicit step for ``k Laplace``; ``dx^2 / (4 a2)`` on square cells."""
    return heat_stability_bound(dx, dy) / a2


def heat_step(xi: ScalarField, dt: float) -> ScalarField:
    """One explicit Euler step of ``xi_t = Laplace(xi)``, zero outside the grid."""
    bound = heat_stability_bound(xi.dx, xi.dy)
    if not 0 <= dt <= bound:
        raise StabilityError(f"dt={dt} outside the stable range [0, {bound}]")
    return xi.like(xi.data + dt * lap5(xi.data, xi.dx, xi.dy))


def kdelta_step(eta: ScalarField, k: PerturbationField, dt: float) -> ScalarField:
    """One explicit Euler step of ``eta_t = k Laplace(eta)``, zero outside the grid."""
    if not eta.same_grid(k.k):
        raise GridError("eta and k live on different grids")
    bound = kdelta_stability_bound(k.a2, eta.dx, eta.dy)
    if not 0 <= dt <= bound:
        raise StabilityError(f"dt={dt} outside the stable range [0, {bound}]")
    return eta.like(eta.data + dt * k.k.data * lap5(eta.data, eta.dx, eta.dy))


# -- energy balance -------------------------------------------------------------

def weighted_energy(eta: ScalarField, k: PerturbationField) -> float:
    """``sigma = 1/2 * sum(eta^2 / k) dx dy``."""
    return 0.5 * float(np.sum(eta.data ** 2 / k.k.data)) * eta.dx * eta.dy


def gradient_energy(eta: ScalarField) -> float:
    """Squared L2 norm of the forward-difference gradient, counting the
    edges to the zero ghost cells.

    With this definition ``sum(eta * lap5(eta)) dx dy = -gradient_energy(eta)``
    holds exactly.
    """
    p = np.pad(eta.data, 1)
    gx = np.diff(p[1:-1, :], axis=1) / eta.dx
    gy = np.diff(p[:, 1:-1], axis=0) / eta.dy
    return float(np.sum(gx * gx) + np.sum(gy * gy)) * eta.dx * eta.dy


@dataclass(frozen=True)
class EnergyBalance:
    dsigma: float  # sigma(n+1) - sigma(n)
    dissipation: float  # dt * |grad eta(n)|^2
    remainder: float  # dsigma + dissipation, second order in dt

    @property
    def relative_discrepancy(self) -> float:
        return abs(self.remainder) / self.dissipation if self.dissipation > 0 else 0.0


def energy_balance_step(eta: ScalarField, k: PerturbationField, dt: float) -> tuple[ScalarField, EnergyBalance]:
    """Advance one ``k Laplace`` step and report the discrete energy budget."""
    nxt = kdelta_step(eta, k, dt)
    ds = weighted_energy(nxt, k) - weighted_energy(eta, k)
    diss = dt * gradient_energy(eta)
    return nxt, EnergyBalance(ds, diss, ds + diss)


# -- kernels --------------------------------------------------------------------

def gaussian_kernel_gk(x, t: float, k_at_x):
    """``G_k(x, t) = exp(-|x|^2 / (4 k t)) / (4 pi k t)`` in two dimensions.

    ``x`` is an offset vector or an array of them with trailing axis of
    length 2; ``k_at_x`` broadcasts against the leading axes.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    k = np.asarray(k_at_x, dtype=np.float64)
    if np.any(k <= 0):
        raise ValueError("k must be positive")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (2,):
        raise ValueError("x must have a trailing axis of length 2")
    r2 = np.sum(x * x, axis=-1)
    return np.exp(-r2 / (4.0 * k * t)) / (4.0 * np.pi * k * t)


def kernel_bound(a1: float, a2: float, p: float, t: float) -> float:
    """``C_k t^((1-p)/p)`` with ``C_k = (1/(4 pi a1)) (4 pi a2 / p)^(1/p)``."""
    ck = (1.0 / (4.0 * np.pi * a1)) * (4.0 * np.pi * a2 / p) ** (1.0 / p)
    return ck * t ** ((1.0 - p) / p)


def kernel_norm_bound_check(k: PerturbationField, p: float, t: float) -> tuple[float, float]:
    """Quadrature L^p norm of ``x -> G_k(x, t)`` and its analytic bound.

    The kernel is centred on the middle sample of ``k``'s grid, so ``k`` is
    read at the offset ``x`` itself.  Raises QuadratureError when the grid
    clips more than ``TAIL_MASS`` of the kernel or under-resolves it.
    """
    if p < 1:
        raise ValueError(f"p must be at least 1, got {p}")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    grid = k.k
    h, w = grid.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    reach = min(cx * grid.dx, cy * grid.dy)
    if np.exp(-reach * reach / (4.0 * k.a2 * t)) > TAIL_MASS:
        raise QuadratureError(f"grid of half-width {reach} truncates the kernel at t={t}")
    if np.sqrt(2.0 * k.a1 * t) < 0.75 * max(grid.dx, grid.dy):
        raise QuadratureError(f"kernel width {np.sqrt(2 * k.a1 * t):.3g} is below the grid spacing")
    xs = (np.arange(w) - cx) * grid.dx
    ys = (np.arange(h) - cy) * grid.dy
    off = np.stack(np.broadcast_arrays(xs[None, :], ys[:, None]), axis=-1)
    g = gaussian_kernel_gk(off, t, grid.data)
    norm = float(np.sum(g ** p) * grid.dx * grid.dy) ** (1.0 / p)
    return norm, kernel_bound(k.a1, k.a2, p, t)


def truncation_radius(a2: float, t: float) -> float:
    """Smallest radius whose Gaussian tail mass is below ``TAIL_MASS``."""
    return float(np.sqrt(4.0 * a2 * t * np.log(1.0 / TAIL_MASS)))


def _variable_convolution(s: ScalarField, k: PerturbationField, t: float) -> ScalarField:
    if not s.same_grid(k.k):
        raise GridError("field and k live on different grids")
    radius = truncation_radius(k.a2, t)
    rx = int(np.ceil(radius / s.dx))
    ry = int(np.ceil(radius / s.dy))
    h, w = s.shape
    padded = np.pad(s.data, ((ry, ry), (rx, rx)))
    inv = 1.0 / (4.0 * k.k.data * t)
    acc = np.zeros((h, w))
    mass = np.zeros((h, w))
    for oy in range(-ry, ry + 1):
        for ox in range(-rx, rx + 1):
            r2 = (ox * s.dx) ** 2 + (oy * s.dy) ** 2
            if r2 > radius * radius:
                continue
            g = np.exp(-r2 * inv)
            mass += g
            acc += g * padded[ry + oy:ry + oy + h, rx + ox:rx + ox + w]
    # dividing by the lattice mass instead of 4 pi k t keeps narrow kernels
    # (width below a pixel) from amplifying; the two agree once resolved
    return s.like(acc / mass)


def semigroup_apply(s: ScalarField, k: PerturbationField, t: float) -> ScalarField:
    """``S(t) s``: convolve with ``G_k(., t)``, reading ``k`` at the output point.

    Samples outside the grid count as zero.  ``t = 0`` returns ``s``.
    """
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if t == 0:
        return s
    return _variable_convolution(s, k, t)


def anisotropic_integral_operator(s: ScalarField, k: PerturbationField, m: int) -> ScalarField:
    """Positive integral operator with kernel ``(m / 4 pi k(x)) exp(-m |x-y|^2 / 4 k(x))``.

    This is ``G_k`` at time ``1/m``; the operator tends to the identity as
    ``m`` grows.
    """
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m}")
    return _variable_convolution(s, k, 1.0 / m)
