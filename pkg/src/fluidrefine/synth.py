"""Synthetic ground truth: Oseen vortices, particle textures, image warping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .fields import FlowField, ScalarField, coordinates

PARTICLE_SIGMA = 1.5


@dataclass
class OseenSpec:
    """Superposed Oseen vortices on a ``width x height`` pixel grid.

    Strengths are circulations in pixels^2/s; positions and core radius in
    pixels.
    """

    centers: list[tuple[float, float]] = field(default_factory=lambda: [(166.7, 250.0), (333.3, 250.0)])
    strengths: list[float] = field(default_factory=lambda: [7000.0, -7000.0])
    core_radius: float = 15.0
    width: int = 500
    height: int = 500

    def __post_init__(self):
        if self.core_radius <= 0:
            raise ValueError(f"core_radius must be positive, got {self.core_radius}")
        if len(self.centers) != len(self.strengths):
            raise ValueError("centers and strengths must have the same length")
        if self.width < 3 or self.height < 3:
            raise ValueError("grid must be at least 3x3")
        for cx, cy in self.centers:
            if not (0 <= cx <= self.width - 1 and 0 <= cy <= self.height - 1):
                raise ValueError(f"vortex center {(cx, cy)} lies outside the grid")

    @classmethod
    def reference_pair(cls, size: int = 500) -> "OseenSpec":
        """The counter-rotating pair, scaled to a ``size x size`` grid.

        At 500 px: centers (166.7, 250) and (333.3, 250), strengths +/-7000,
        core radius 15.  Other sizes scale positions and core radius by
        ``size/500`` and the strengths by the same factor.
        """
        s = size / 500.0
        return cls(
            centers=[(166.7 * s, 250.0 * s), (333.3 * s, 250.0 * s)],
            strengths=[7000.0 * s, -7000.0 * s],
            core_radius=15.0 * s,
            width=size,
            height=size,
        )


def azimuthal_speed(r, gamma: float, r0: float):
    """Circumferential velocity ``(gamma / 2 pi r) (1 - exp(-r^2/r0^2))``, 0 at r = 0."""
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gamma / (2 * np.pi * r) * -np.expm1(-(r * r) / (r0 * r0))
    return np.where(r == 0, 0.0, out)


def oseen_vorticity(r, gamma: float, r0: float):
    """Analytic vorticity ``v_x - u_y`` of one vortex; the curl here is its negative."""
    return gamma / (np.pi * r0 * r0) * np.exp(-(np.asarray(r) ** 2) / (r0 * r0))


def oseen_flow(spec: OseenSpec, dx: float = 1.0, dy: float = 1.0) -> FlowField:
    """Velocity field of the vortex superposition, in pixels/s."""
    x, y = coordinates(spec.width, spec.height, dx, dy)
    u = np.zeros((spec.height, spec.width))
    v = np.zeros_like(u)
    r0sq = spec.core_radius ** 2
    for (cx, cy), gamma in zip(spec.centers, spec.strengths):
        rx = x - cx
        ry = y - cy
        r2 = rx * rx + ry * ry
        # v_theta / r, with the analytic limit gamma / (2 pi r0^2) at the center
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(r2 > 0, -np.expm1(-r2 / r0sq) / r2, 1.0 / r0sq) * (gamma / (2 * np.pi))
        u -= g * ry
        v += g * rx
    return FlowField.from_arrays(u, v, dx, dy)


def particle_texture(width: int, height: int, density: float, seed: int | None = 0,
                     sigma: float = PARTICLE_SIGMA) -> ScalarField:
    """Seeded PIV-style image of Gaussian particles on a black background.

    ``density`` is particles per pixel^2.  Overlapping particles saturate
    smoothly (``tanh``), keeping intensities in [0, 1).
    """
    if not (0.0 <= density <= 1.0):
        raise ValueError(f"density must lie in [0, 1], got {density}")
    rng = np.random.default_rng(seed)
    n = int(round(density * width * height))
    if n == 0:
        return ScalarField(np.zeros((height, width)))
    px = rng.uniform(0, width, n)
    py = rng.uniform(0, height, n)
    amp = rng.uniform(0.6, 1.0, n)
    return ScalarField(np.tanh(_render_particles(px, py, amp, width, height, sigma)))


def _render_particles(px, py, amp, width, height, sigma):
    rad = int(np.ceil(4 * sigma))
    offs = np.arange(-rad, rad + 1)
    ix0 = np.floor(px).astype(int)
    iy0 = np.floor(py).astype(int)
    cols = ix0[:, None] + offs[None, :]
    rows = iy0[:, None] + offs[None, :]
    gx = np.exp(-((cols - px[:, None]) ** 2) / (2 * sigma * sigma))
    gy = np.exp(-((rows - py[:, None]) ** 2) / (2 * sigma * sigma))
    patch = amp[:, None, None] * gy[:, :, None] * gx[:, None, :]
    rr = np.broadcast_to(rows[:, :, None], patch.shape)
    cc = np.broadcast_to(cols[:, None, :], patch.shape)
    keep = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
    img = np.zeros((height, width))
    np.add.at(img, (rr[keep], cc[keep]), patch[keep])
    return img


def smooth_texture(width: int, height: int, seed: int | None = 0, sigma: float = 3.0) -> ScalarField:
    """Band-limited random texture in [0, 1] (cloud-like)."""
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((height, width)), sigma, mode="wrap")
    noise -= noise.min()
    peak = noise.max()
    return ScalarField(noise / peak if peak > 0 else noise)


def advect_image(f: ScalarField, w: FlowField, dt: float = 1.0) -> ScalarField:
    """Backward warp: ``out(x) = f(x - w(x) dt)``, bilinear, zero outside."""
    if not f.same_grid(w.u):
        raise ValueError("image and flow grids differ")
    h, wd = f.shape
    yy, xx = np.mgrid[0:h, 0:wd].astype(np.float64)
    src_x = xx - w.u.data * dt / f.dx
    src_y = yy - w.v.data * dt / f.dy
    out = ndimage.map_coordinates(f.data, [src_y, src_x], order=1, mode="constant", cval=0.0)
    return f.like(out)


@dataclass
class SyntheticPair:
    frame1: ScalarField
    frame2: ScalarField
    truth: FlowField  # displacement in pixels/frame
    meta: dict = field(default_factory=dict)


def _symmetric_pair(texture: ScalarField, disp: FlowField, pad: int) -> tuple[ScalarField, ScalarField]:
    # frame1 = T(x + w/2), frame2 = T(x - w/2): the pair is centred on the texture
    f1 = advect_image(texture, disp, -0.5)
    f2 = advect_image(texture, disp, 0.5)
    crop = (slice(pad, -pad), slice(pad, -pad)) if pad else (slice(None), slice(None))
    return ScalarField(f1.data[crop]), ScalarField(f2.data[crop])


def oseen_pair(size: int = 500, frame_dt: float = 0.02, density: float = 0.05, seed: int = 0,
               spec: OseenSpec | None = None) -> SyntheticPair:
    """Particle image pair advected by the Oseen vortex pair.

    ``frame_dt`` is the frame interval in seconds; the returned ground truth
    is the per-frame displacement ``velocity * frame_dt``.  Frames are
    rendered on a padded canvas so the warp never reads outside the texture.
    """
    spec = spec or OseenSpec.reference_pair(size)
    truth = oseen_flow(spec).scaled(frame_dt)
    pad = int(np.ceil(0.5 * np.abs(truth.magnitude()).max())) + 2
    big = OseenSpec(
        centers=[(cx + pad, cy + pad) for cx, cy in spec.centers],
        strengths=list(spec.strengths),
        core_radius=spec.core_radius,
        width=spec.width + 2 * pad,
        height=spec.height + 2 * pad,
    )
    texture = particle_texture(big.width, big.height, density, seed)
    f1, f2 = _symmetric_pair(texture, oseen_flow(big).scaled(frame_dt), pad)
    meta = {
        "preset": "oseen", "size": spec.width, "frame_dt": frame_dt, "density": density, "seed": seed,
        "core_radius": spec.core_radius, "centers": spec.centers, "strengths": spec.strengths,
    }
    return SyntheticPair(f1, f2, truth, meta)


def cloud_pair(size: int = 256, n_vortices: int = 30, strength_std: float = 3000.0, core_radius: float = 12.0,
               frame_dt: float = 0.01, seed: int = 0) -> SyntheticPair:
    """Cloud-like analog: Gaussian-distributed vortex strengths at random centers
    advecting a smoothed random texture."""
    rng = np.random.default_rng(seed)
    margin = min(2 * core_radius, size / 4)
    centers = [tuple(c) for c in rng.uniform(margin, size - 1 - margin, size=(n_vortices, 2))]
    strengths = list(rng.normal(0.0, strength_std, n_vortices))
    spec = OseenSpec(centers=centers, strengths=strengths, core_radius=core_radius, width=size, height=size)
    truth = oseen_flow(spec).scaled(frame_dt)
    texture = smooth_texture(size, size, seed=seed + 1)
    f1, f2 = _symmetric_pair(texture, truth, 0)
    meta = {"preset": "cloud", "size": size, "frame_dt": frame_dt, "seed": seed, "n_vortices": n_vortices,
            "strength_std": strength_std, "core_radius": core_radius}
    return SyntheticPair(f1, f2, truth, meta)
