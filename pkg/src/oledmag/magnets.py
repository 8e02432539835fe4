"""Fields of axially magnetized cylindrical permanent magnets.

The magnet is modelled with equivalent surface charges on its two end
disks; the field outside is

    B(p) = (Br / 4 pi) * [ int_north - int_south ] (p - p') / |p - p'|^3 dA'

evaluated with tensor-product Gauss-Legendre quadrature in radius x angle
on each disk.  An analytic on-axis expression serves as the validation
oracle.  Also provides plane field maps with superposition over several
magnets, and the similarity score used to compare measured and simulated
field curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError

_DEFAULT_QUAD_ORDER = 64


@dataclass
class CylindricalMagnet:
    """Axially magnetized cylinder: geometry, remanence and pose.

    ``center`` is the geometric centre of the cylinder; ``axis`` points from
    the south face towards the north face.
    """

    diameter: float
    length: float
    remanence_br: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if not (self.diameter > 0 and self.length > 0 and self.remanence_br > 0):
            raise DomainError("diameter, length and remanence_br must be positive")
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = np.linalg.norm(self.axis)
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"axis must be a unit vector, |axis| = {norm}")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    def local_frame(self) -> tuple[np.ndarray, np.ndarray]:
        """Two unit vectors orthogonal to the axis (right-handed with it)."""
        ref = np.array([1.0, 0.0, 0.0])
        if abs(np.dot(ref, self.axis)) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = np.cross(self.axis, ref)
        u /= np.linalg.norm(u)
        v = np.cross(self.axis, u)
        return u, v

    def contains(self, points: np.ndarray, pad: float = 0.0) -> np.ndarray:
        """Boolean mask of points inside the (padded) cylinder body."""
        rel = np.atleast_2d(points) - self.center
        z = rel @ self.axis
        rho2 = np.einsum("ij,ij->i", rel, rel) - z * z
        half = 0.5 * self.length + pad
        return (np.abs(z) <= half) & (rho2 <= (self.radius + pad) ** 2)


@dataclass
class FieldGrid:
    """A plane of field-magnitude samples.

    Grid point (i, j) sits at ``origin + (i + 1/2) * pitch * u_axis +
    (j + 1/2) * pitch * v_axis`` so the origin is the corner of the sampled
    rectangle, matching the camera-pixel convention used elsewhere.
    ``values`` may be None for a bare geometry spec awaiting evaluation.
    """

    origin: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    pitch: float
    nu: int
    nv: int
    values: np.ndarray | None = None

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.u_axis = np.asarray(self.u_axis, dtype=float).reshape(3)
        self.v_axis = np.asarray(self.v_axis, dtype=float).reshape(3)
        if not self.pitch > 0:
            raise DomainError("pitch must be positive")
        if self.nu < 1 or self.nv < 1:
            raise DomainError("grid counts must be >= 1")
        for name, vec in (("u_axis", self.u_axis), ("v_axis", self.v_axis)):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
                raise DomainError(f"{name} must be a unit vector")
        if abs(np.dot(self.u_axis, self.v_axis)) > 1e-9:
            raise DomainError("u_axis and v_axis must be orthogonal")
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (self.nu, self.nv):
                raise DomainError(
                    f"values shape {self.values.shape} != ({self.nu}, {self.nv})"
                )
            if np.any(self.values < 0):
                raise DomainError("field magnitudes must be non-negative")

    def points(self) -> np.ndarray:
        """All grid-point positions, shape (nu, nv, 3)."""
        i = (np.arange(self.nu) + 0.5) * self.pitch
        j = (np.arange(self.nv) + 0.5) * self.pitch
        return (
            self.origin
            + i[:, None, None] * self.u_axis
            + j[None, :, None] * self.v_axis
        )


def on_axis_field(m: CylindricalMagnet, z) -> float | np.ndarray:
    """Analytic signed axial field at distance ``z`` from the near (north) face.

    Valid outside the body only: z > 0 or z < -length.
    """
    z = np.asarray(z, dtype=float)
    inside = (z < 0) & (z > -m.length)  # the faces themselves are allowed
    if np.any(inside):
        raise DomainError("on-axis point lies inside the magnet body")
    R = m.radius
    L = m.length
    out = 0.5 * m.remanence_br * (
        (z + L) / np.sqrt((z + L) ** 2 + R**2) - z / np.sqrt(z**2 + R**2)
    )
    return float(out) if out.ndim == 0 else out


def _disk_nodes(m: CylindricalMagnet, order: int):
    """Quadrature nodes/weights on both end disks, in lab coordinates.

    Returns (points (2*order^2, 3), signed_weights) where weights carry the
    surface-charge sign (+ north face, - south face) and the area element.
    """
    xr, wr = np.polynomial.legendre.leggauss(order)
    # radius on [0, R], angle on [0, 2*pi)
    r = 0.5 * m.radius * (xr + 1.0)
    wr = 0.5 * m.radius * wr
    xt, wt = np.polynomial.legendre.leggauss(order)
    th = np.pi * (xt + 1.0)
    wt = np.pi * wt

    u, v = m.local_frame()
    rr, tt = np.meshgrid(r, th, indexing="ij")
    ww = (wr[:, None] * wt[None, :]) * rr  # dA = r dr dtheta
    offsets = rr[..., None] * (
        np.cos(tt)[..., None] * u + np.sin(tt)[..., None] * v
    )

    north = m.center + 0.5 * m.length * m.axis + offsets
    south = m.center - 0.5 * m.length * m.axis + offsets
    pts = np.concatenate([north.reshape(-1, 3), south.reshape(-1, 3)])
    w = np.concatenate([ww.ravel(), -ww.ravel()])
    return pts, w


def field_at(
    m: CylindricalMagnet | list[CylindricalMagnet],
    p,
    order: int = _DEFAULT_QUAD_ORDER,
) -> np.ndarray:
    """Field vector(s) in tesla at point(s) ``p`` (shape (3,) or (N, 3)).

    Superposes over a list of magnets.  Points inside or within 1 nm of a
    magnet body raise DomainError.
    """
    magnets = m if isinstance(m, (list, tuple)) else [m]
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    if pts.shape[-1] != 3:
        raise UsageError("points must have 3 components")

    total = np.zeros_like(pts)
    for mag in magnets:
        if np.any(mag.contains(pts, pad=1e-9)):
            raise DomainError("evaluation point inside (or on) a magnet body")
        nodes, w = _disk_nodes(mag, order)
        scale = mag.remanence_br / (4.0 * np.pi)
        # chunk over evaluation points to bound the (points x nodes) temporary
        chunk = max(1, int(4e6 // len(nodes)))
        for s in range(0, len(pts), chunk):
            d = pts[s : s + chunk, None, :] - nodes[None, :, :]
            inv_r3 = np.einsum("pnk,pnk->pn", d, d) ** -1.5
            total[s : s + chunk] += scale * np.einsum("pn,pnk->pk", w * inv_r3, d)

    return total[0] if np.asarray(p).ndim == 1 else total


def field_map(
    m: CylindricalMagnet | list[CylindricalMagnet],
    grid: FieldGrid,
    order: int = _DEFAULT_QUAD_ORDER,
) -> FieldGrid:
    """Evaluate |B| of one or more magnets on a plane grid.

    Raises DomainError naming the offending grid indices if any point falls
    inside a magnet.
    """
    magnets = m if isinstance(m, (list, tuple)) else [m]
    pts = grid.points().reshape(-1, 3)
    for mag in magnets:
        bad = mag.contains(pts, pad=1e-9)
        if np.any(bad):
            ii, jj = np.unravel_index(np.nonzero(bad)[0], (grid.nu, grid.nv))
            raise DomainError(
                f"grid points inside magnet at indices {list(zip(ii[:5], jj[:5]))}"
                + ("..." if bad.sum() > 5 else "")
            )
    b = field_at(magnets, pts, order=order)
    mags = np.linalg.norm(b, axis=1).reshape(grid.nu, grid.nv)
    return FieldGrid(
        origin=grid.origin,
        u_axis=grid.u_axis,
        v_axis=grid.v_axis,
        pitch=grid.pitch,
        nu=grid.nu,
        nv=grid.nv,
        values=mags,
    )


def similarity(p, q) -> float:
    """Normalized mean absolute fractional difference score, 1 at equality.

    s = 1 - (1/N) * sum |p_i - q_i| / ((p_i + q_i) / 2)
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape or p.size < 1:
        raise UsageError(f"length mismatch: {p.size} vs {q.size}")
    denom = 0.5 * (p + q)
    if np.any(denom == 0):
        raise DomainError("p_i + q_i = 0 encountered; similarity undefined")
    return float(1.0 - np.mean(np.abs(p - q) / denom))
