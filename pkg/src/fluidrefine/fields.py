"""Grid containers and finite-difference operators.

Arrays are stored with shape ``(height, width)`` in C order, so sample
``(x, y)`` lives at flat index ``y * width + x``.  Axis 0 is ``y`` and
axis 1 is ``x``.

Derivatives are central in the interior and one-sided second order on the
boundary.  Stencil operators (Laplacians) read zero outside the domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


class GridError(ValueError):
    """Raised for grids that are too small or do not match."""


@dataclass(frozen=True)
class ScalarField:
    """A 2-D grid of real samples with uniform spacing."""

    data: np.ndarray
    dx: float = 1.0
    dy: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise GridError(f"expected a 2-D array, got shape {arr.shape}")
        if not (self.dx > 0 and self.dy > 0):
            raise GridError(f"grid spacing must be positive, got dx={self.dx}, dy={self.dy}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains NaN or Inf samples")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def zeros(cls, width: int, height: int, dx: float = 1.0, dy: float = 1.0) -> "ScalarField":
        return cls(np.zeros((height, width)), dx, dy)

    @classmethod
    def from_function(cls, fn, width: int, height: int, dx: float = 1.0, dy: float = 1.0) -> "ScalarField":
        """Sample ``fn(x, y)`` at ``x = i*dx``, ``y = j*dy``."""
        x, y = coordinates(width, height, dx, dy)
        return cls(np.broadcast_to(fn(x, y), (height, width)).copy(), dx, dy)

    def like(self, data: np.ndarray) -> "ScalarField":
        """New field on the same grid."""
        return ScalarField(data, self.dx, self.dy)

    def flat(self) -> np.ndarray:
        """Row-major samples, index ``y * width + x``."""
        return self.data.ravel()

    def same_grid(self, other: "ScalarField") -> bool:
        return self.shape == other.shape and self.dx == other.dx and self.dy == other.dy


@dataclass(frozen=True)
class FlowField:
    """Motion estimate ``(u, v)``; both components share one grid."""

    u: ScalarField
    v: ScalarField

    def __post_init__(self):
        if not self.u.same_grid(self.v):
            raise GridError(
                f"u and v differ: {self.u.shape}/{self.u.dx},{self.u.dy} vs "
                f"{self.v.shape}/{self.v.dx},{self.v.dy}"
            )

    @property
    def width(self) -> int:
        return self.u.width

    @property
    def height(self) -> int:
        return self.u.height

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def dx(self) -> float:
        return self.u.dx

    @property
    def dy(self) -> float:
        return self.u.dy

    @classmethod
    def from_arrays(cls, u: np.ndarray, v: np.ndarray, dx: float = 1.0, dy: float = 1.0) -> "FlowField":
        return cls(ScalarField(u, dx, dy), ScalarField(v, dx, dy))

    @classmethod
    def zeros_like(cls, s: ScalarField) -> "FlowField":
        z = np.zeros(s.shape)
        return cls(s.like(z), s.like(z.copy()))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.data, self.v.data)

    def scaled(self, factor: float) -> "FlowField":
        return FlowField(self.u.like(self.u.data * factor), self.v.like(self.v.data * factor))


def coordinates(width: int, height: int, dx: float = 1.0, dy: float = 1.0):
    """Broadcastable ``(x, y)`` sample positions for a ``height x width`` grid."""
    x = np.arange(width, dtype=np.float64)[None, :] * dx
    y = np.arange(height, dtype=np.float64)[:, None] * dy
    return x, y


def _require_min_size(a: np.ndarray, n: int = 3):
    if a.shape[0] < n or a.shape[1] < n:
        raise GridError(f"grid {a.shape[1]}x{a.shape[0]} is smaller than {n}x{n}")


# -- array-level kernels, used directly by the iterative solvers --------------

def ddx(a: np.ndarray, dx: float = 1.0) -> np.ndarray:
    return np.gradient(a, dx, axis=1, edge_order=2)


def ddy(a: np.ndarray, dy: float = 1.0) -> np.ndarray:
    return np.gradient(a, dy, axis=0, edge_order=2)


# nine-point Laplacian, (1/6)[1 4 1; 4 -20 4; 1 4 1] / h^2
LAPLACIAN9 = np.array([[1.0, 4.0, 1.0], [4.0, -20.0, 4.0], [1.0, 4.0, 1.0]]) / 6.0
LAPLACIAN5 = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def lap9(a: np.ndarray, h: float = 1.0) -> np.ndarray:
    return ndimage.correlate(a, LAPLACIAN9, mode="constant", cval=0.0) / (h * h)


def lap5(a: np.ndarray, dx: float = 1.0, dy: float = 1.0) -> np.ndarray:
    """Five-point Laplacian with zero ghost cells (anisotropic spacing allowed)."""
    p = np.pad(a, 1)
    return (p[1:-1, 2:] - 2.0 * a + p[1:-1, :-2]) / (dx * dx) + (p[2:, 1:-1] - 2.0 * a + p[:-2, 1:-1]) / (dy * dy)


def div_arrays(u: np.ndarray, v: np.ndarray, dx: float = 1.0, dy: float = 1.0) -> np.ndarray:
    return ddx(u, dx) + ddy(v, dy)


def curl_arrays(u: np.ndarray, v: np.ndarray, dx: float = 1.0, dy: float = 1.0) -> np.ndarray:
    # sign convention u_y - v_x
    return ddy(u, dy) - ddx(v, dx)


# -- field-level operators ---------------------------------------------------

def gradient(s: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Return ``(d/dx s, d/dy s)``."""
    _require_min_size(s.data)
    return s.like(ddx(s.data, s.dx)), s.like(ddy(s.data, s.dy))


def orthogonal_gradient(s: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Return ``(d/dy s, -d/dx s)``."""
    _require_min_size(s.data)
    return s.like(ddy(s.data, s.dy)), s.like(-ddx(s.data, s.dx))


def divergence(w: FlowField) -> ScalarField:
    _require_min_size(w.u.data)
    return w.u.like(div_arrays(w.u.data, w.v.data, w.dx, w.dy))


def curl(w: FlowField) -> ScalarField:
    """Scalar curl ``u_y - v_x``."""
    _require_min_size(w.u.data)
    return w.u.like(curl_arrays(w.u.data, w.v.data, w.dx, w.dy))


def laplacian9(s: ScalarField) -> ScalarField:
    """Nine-point Laplacian with zero values outside the domain.

    Only square cells (``dx == dy``) are supported; the compact stencil has
    no standard anisotropic form.
    """
    _require_min_size(s.data)
    if s.dx != s.dy:
        raise GridError("laplacian9 needs dx == dy")
    return s.like(lap9(s.data, s.dx))


def laplacian5(s: ScalarField) -> ScalarField:
    _require_min_size(s.data)
    return s.like(lap5(s.data, s.dx, s.dy))


def interior(a: np.ndarray, margin: int = 1) -> np.ndarray:
    """View of ``a`` without a ``margin``-wide boundary ring."""
    if margin == 0:
        return a
    return a[margin:-margin, margin:-margin]
