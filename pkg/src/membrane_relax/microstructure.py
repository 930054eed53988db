"""Explicit zig-zag laminates on the unit square and their Vitali refinement.

Geometry
--------
The unit square ``Y`` is cut into ``n`` vertical strips of width ``1/n``.  In
local strip coordinates ``s = x1 - k/n`` the strip splits into

* a middle band ``1/n <= x2 <= 1 - 1/n`` holding ``A-`` (``s <= (1-t)/n``) and
  ``A+`` (the rest),
* a bottom band ``x2 <= 1/n`` holding the wedges ``B``, ``B-`` and ``B+``,
* a top band ``x2 >= 1 - 1/n`` holding ``C``, ``C-``, ``C+``, the mirror images
  of the bottom wedges under ``x2 -> 1 - x2``.

The scalar function ``sigma_n`` is continuous, piecewise affine, vanishes on
the boundary of ``Y`` and has gradient ``(-t, 0)`` on ``A-``, ``(1-t, 0)`` on
``A+``, ``B+``, ``C+``, ``(-t, -t)`` on ``B-``, ``(-t, t)`` on ``C-`` and zero on
``B`` and ``C``.  The vector field ``theta = sigma_n * b`` therefore realizes
the two gradients of a rank-one split, up to boundary layers of area ``O(1/n)``.

For the top wedges the inequality systems are taken mirrored at the top edge
(``1 - 1/n <= x2 <= 1``); see :data:`TOP_WEDGE_NOTE`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .densities import PlanarDensity
from .envelopes import LaminateParams, two_point_value
from .tensor_core import ExtendedEnergy, as_mat32, outer_32, wedge

__all__ = [
    "TOP_WEDGE_NOTE",
    "Region",
    "RegionLabel",
    "LaminateGeometry",
    "Rect",
    "CellCover",
    "CoverageError",
    "classify_points",
    "classify_and_sigma",
    "region_measures",
    "grouped_measures",
    "region_polygons",
    "sigma_values",
    "laminate_field",
    "perturbed_direction",
    "gradient_table",
    "laminate_energy_quadrature",
    "closed_form_energy",
    "sigma_lp_norm",
    "sigma_lp_bound",
    "triangle_rule",
    "vitali_cover",
    "refinement_field",
    "verify_cell_refinement",
    "region_raster",
]

TOP_WEDGE_NOTE = (
    "C-family wedges are attached to the top edge: their x2-range is "
    "[1 - 1/n, 1], not [0, 1/n] as a literal reading of the inequalities gives."
)


class Region(Enum):
    AMINUS = 0
    APLUS = 1
    BMINUS = 2
    BPLUS = 3
    CMINUS = 4
    CPLUS = 5
    B = 6
    C = 7


class RegionLabel(NamedTuple):
    region: Region
    k: int


# local sigma gradients (strip frame, a = (1, 0)) as functions of t
def _local_gradients(t: float) -> dict:
    return {
        Region.AMINUS: (-t, 0.0),
        Region.APLUS: (1.0 - t, 0.0),
        Region.BPLUS: (1.0 - t, 0.0),
        Region.CPLUS: (1.0 - t, 0.0),
        Region.BMINUS: (-t, -t),
        Region.CMINUS: (-t, t),
        Region.B: (0.0, 0.0),
        Region.C: (0.0, 0.0),
    }


@dataclass(frozen=True)
class LaminateGeometry:
    """``n`` strips, volume fraction ``t``, and the angle of ``a`` (``0`` means ``a = (1, 0)``)."""

    n: int
    t: float
    angle: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ValueError("n must be an integer >= 3")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")

    @classmethod
    def from_params(cls, n: int, params: LaminateParams) -> "LaminateGeometry":
        return cls(n, params.t, params.angle)

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    @property
    def a(self) -> np.ndarray:
        return self.rotation[:, 0]

    @property
    def a_perp(self) -> np.ndarray:
        return self.rotation[:, 1]


def classify_points(geom: LaminateGeometry, X):
    """Vectorized classification of points of ``[0, 1]^2``.

    Returns ``(codes, k, sigma, grad)`` where ``codes`` holds :class:`Region`
    values, ``k`` the strip index, and ``grad`` the gradient of ``sigma_n`` in
    the physical frame (rotated by the geometry's angle).  Ties on region
    boundaries go to the first match in the order A-, A+, B-, B+, C-, C+, B, C.
    """
    X = np.asarray(X, dtype=float)
    if np.any(X < 0.0) or np.any(X > 1.0):
        raise ValueError("points must lie in the closed unit square")
    n, t = geom.n, geom.t
    h = 1.0 / n
    x1, x2 = X[..., 0], X[..., 1]
    k = np.minimum(np.floor(x1 * n), n - 1).astype(int)
    s = x1 - k / n
    # distance to the right strip edge; k / n and (k + 1) / n are exact at strip edges
    r = x1 - (k + 1) / n
    yb = x2
    yt = 1.0 - x2

    middle = (x2 >= h) & (x2 <= 1.0 - h)
    bottom = x2 <= h
    top = x2 >= 1.0 - h
    conds = [
        middle & (s <= (1.0 - t) * h),
        middle & (s >= (1.0 - t) * h),
        bottom & (s >= h - yb) & (s <= h - t * yb),
        bottom & (s >= h - t * yb),
        top & (s >= h - yt) & (s <= h - t * yt),
        top & (s >= h - t * yt),
        bottom & (s <= h - yb),
        top & (s <= h - yt),
    ]
    codes = np.select(conds, [r.value for r in Region], default=-1)
    if np.any(codes < 0):
        raise RuntimeError("classification left a point unassigned")

    sig_plus = (1.0 - t) * r
    sigma = np.select(
        [codes == Region.AMINUS.value,
         np.isin(codes, (Region.APLUS.value, Region.BPLUS.value, Region.CPLUS.value)),
         codes == Region.BMINUS.value,
         codes == Region.CMINUS.value],
        [-t * s, sig_plus, -t * (s + yb - h), -t * (s + yt - h)],
        default=0.0,
    )
    table = _local_gradients(t)
    local = np.array([table[r] for r in Region])[codes]
    grad = local @ geom.rotation.T
    return codes, k, sigma, grad


def classify_and_sigma(geom: LaminateGeometry, x):
    """Region label, ``sigma_n(x)`` and its gradient at a single point."""
    codes, k, sigma, grad = classify_points(geom, np.asarray(x, dtype=float)[None])
    return RegionLabel(Region(int(codes[0])), int(k[0])), float(sigma[0]), grad[0]


def sigma_values(geom: LaminateGeometry, X) -> np.ndarray:
    return classify_points(geom, X)[2]


def laminate_field(geom: LaminateGeometry, b, X) -> np.ndarray:
    """``theta(x) = sigma_n(x) b`` at points ``X`` of the unit square."""
    return sigma_values(geom, X)[..., None] * np.asarray(b, dtype=float)


def region_measures(geom: LaminateGeometry) -> dict:
    """Closed-form total area of each region family over all strips."""
    n, t = geom.n, geom.t
    return {
        Region.AMINUS: (1.0 - t) * (1.0 - 2.0 / n),
        Region.APLUS: t * (1.0 - 2.0 / n),
        Region.BMINUS: (1.0 - t) / (2.0 * n),
        Region.BPLUS: t / (2.0 * n),
        Region.CMINUS: (1.0 - t) / (2.0 * n),
        Region.CPLUS: t / (2.0 * n),
        Region.B: 1.0 / (2.0 * n),
        Region.C: 1.0 / (2.0 * n),
    }


def grouped_measures(geom: LaminateGeometry) -> dict:
    """Areas grouped the way the energy identity groups them."""
    m = region_measures(geom)
    return {
        "A-": m[Region.AMINUS],
        "A+": m[Region.APLUS],
        "B+C+": m[Region.BPLUS] + m[Region.CPLUS],
        "B-": m[Region.BMINUS],
        "C-": m[Region.CMINUS],
        "BC": m[Region.B] + m[Region.C],
    }


def region_polygons(geom: LaminateGeometry, k: int) -> dict:
    """Vertex lists (counter-clockwise) of the eight regions of strip ``k``."""
    n, t = geom.n, geom.t
    h = 1.0 / n
    x0 = k * h
    xm = x0 + (1.0 - t) * h
    x1 = x0 + h
    return {
        Region.AMINUS: [(x0, h), (xm, h), (xm, 1 - h), (x0, 1 - h)],
        Region.APLUS: [(xm, h), (x1, h), (x1, 1 - h), (xm, 1 - h)],
        Region.B: [(x0, 0.0), (x1, 0.0), (x0, h)],
        Region.BMINUS: [(x1, 0.0), (xm, h), (x0, h)],
        Region.BPLUS: [(x1, 0.0), (x1, h), (xm, h)],
        Region.C: [(x0, 1.0), (x0, 1 - h), (x1, 1.0)],
        Region.CMINUS: [(x1, 1.0), (x0, 1 - h), (xm, 1 - h)],
        Region.CPLUS: [(x1, 1.0), (xm, 1 - h), (x1, 1 - h)],
    }


def perturbed_direction(b, xi, ell: int) -> np.ndarray:
    """``b`` if it leaves the image plane of ``xi``, else ``b + nu / ell`` with ``nu`` the unit normal."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    xi = as_mat32(xi)
    b = np.asarray(b, dtype=float)
    n = wedge(xi)
    norm = float(np.linalg.norm(n))
    if norm < 1e-14:
        raise ValueError("xi must have rank 2")
    nu = n / norm
    if abs(float(b @ nu)) > 1e-12 * float(np.linalg.norm(b)):
        return b.copy()
    return b + nu / ell


def gradient_table(geom: LaminateGeometry, b) -> dict:
    """``grad theta`` on each region: ``b (x) grad sigma_n``."""
    table = _local_gradients(geom.t)
    R = geom.rotation
    return {r: outer_32(b, R @ np.array(g)) for r, g in table.items()}


def laminate_energy_quadrature(f: PlanarDensity, xi, geom: LaminateGeometry, b) -> ExtendedEnergy:
    """``int_Y f(xi + grad theta)`` as an exact region-weighted sum."""
    xi = as_mat32(xi)
    grads = gradient_table(geom, b)
    areas = region_measures(geom)
    regions = [r for r in Region if areas[r] > 0.0]
    vals = f.batch(np.stack([xi + grads[r] for r in regions]))
    total = 0.0
    for r, v in zip(regions, vals):
        if np.isinf(v):
            return ExtendedEnergy(math.inf)
        total += areas[r] * float(v)
    return ExtendedEnergy(total)


def closed_form_energy(f: PlanarDensity, xi, geom: LaminateGeometry, b) -> ExtendedEnergy:
    """The same integral written as the grouped combination over n."""
    xi = as_mat32(xi)
    n, t = geom.n, geom.t
    a, ap = geom.a, geom.a_perp
    P = np.stack([
        xi - t * outer_32(b, a),
        xi + (1.0 - t) * outer_32(b, a),
        xi - t * outer_32(b, a + ap),
        xi - t * outer_32(b, a - ap),
        xi,
    ])
    fm, fp, fbm, fcm, f0 = f.batch(P)
    if t == 0.0:
        fp = 0.0 if np.isinf(fp) else fp
    if t == 1.0:
        fm = fbm = fcm = 0.0 if np.isinf(fm) else fm
    value = (1.0 - 2.0 / n) * ((1.0 - t) * fm + t * fp) \
        + (1.0 / n) * (t * fp + 0.5 * (1.0 - t) * (fbm + fcm) + f0)
    return ExtendedEnergy(value)


# --- quadrature of |sigma_n|^p ---------------------------------------------------


def triangle_rule(order: int):
    """Collapsed Gauss-Legendre rule on the reference triangle (0,0),(1,0),(0,1).

    Exact for polynomials of total degree ``<= 2 * order - 2``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    U, V = np.meshgrid(x, x, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    xi_ = U.ravel()
    eta = (V * (1.0 - U)).ravel()
    weights = (WU * WV * (1.0 - U)).ravel()
    return np.stack([xi_, eta], axis=-1), weights


def _triangles(poly):
    p = np.asarray(poly, dtype=float)
    return [(p[0], p[i], p[i + 1]) for i in range(1, len(p) - 1)]


def sigma_lp_norm(geom: LaminateGeometry, p: float, order: int = 8) -> float:
    """``int_Y |sigma_n|^p`` by per-strip triangle quadrature."""
    if p < 1:
        raise ValueError("p must be >= 1")
    ref, w = triangle_rule(order)
    total = 0.0
    for k in range(geom.n):
        for poly in region_polygons(geom, k).values():
            for p0, p1, p2 in _triangles(poly):
                J = np.column_stack([p1 - p0, p2 - p0])
                area2 = abs(np.linalg.det(J))
                if area2 == 0.0:
                    continue
                pts = p0 + ref @ J.T
                # shrink toward the centroid so boundary ties cannot misassign nodes
                c = (p0 + p1 + p2) / 3.0
                pts = c + (1.0 - 1e-12) * (pts - c)
                sig = sigma_values(geom, np.clip(pts, 0.0, 1.0))
                total += area2 * float(np.sum(w * np.abs(sig) ** p))
    return total


def sigma_lp_bound(geom: LaminateGeometry, p: float) -> float:
    t = geom.t
    return t ** p * (1.0 - t) ** p / geom.n ** p


# --- Vitali covering by dyadic squares ---------------------------------------------


class CoverageError(RuntimeError):
    """Greedy dyadic packing could not reach the requested residual."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("empty rectangle")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def shrink(self, q: int) -> "Rect":
        """Points at distance more than ``1/q`` from the boundary."""
        d = 1.0 / q
        return Rect(self.x0 + d, self.y0 + d, self.x1 - d, self.y1 - d)


@dataclass
class CellCover:
    """Disjoint squares ``r + rho * Y`` inside a rectangle."""

    squares: list = field(default_factory=list)
    covered: Fraction = Fraction(0)
    area: float = 0.0

    @property
    def residual(self) -> float:
        return self.area - float(self.covered)

    def corners(self) -> np.ndarray:
        return np.array([r for r, _ in self.squares]) if self.squares else np.zeros((0, 2))

    def sides(self) -> np.ndarray:
        return np.array([rho for _, rho in self.squares])


def vitali_cover(rect: Rect, residual_target: float, max_level: int = 24) -> CellCover:
    """Greedy quadtree packing of ``rect`` with dyadic squares.

    Squares of side ``2**-L`` are accepted level by level when they lie
    inside ``rect``; squares cutting the boundary are split.  Stops as soon as
    the uncovered area is at most ``residual_target``.
    """
    if not residual_target > 0:
        raise ValueError("residual_target must be positive")
    cover = CellCover(area=rect.area)
    side0 = 1
    i0, i1 = math.floor(rect.x0), math.ceil(rect.x1)
    j0, j1 = math.floor(rect.y0), math.ceil(rect.y1)
    active = [(i, j) for i in range(i0, i1) for j in range(j0, j1)]
    for level in range(max_level + 1):
        size = Fraction(side0, 2 ** level)
        nxt = []
        for i, j in active:
            xa, ya = float(i * size), float(j * size)
            xb, yb = float((i + 1) * size), float((j + 1) * size)
            if xa >= rect.x0 and xb <= rect.x1 and ya >= rect.y0 and yb <= rect.y1:
                cover.squares.append(((xa, ya), float(size)))
                cover.covered += size * size
            elif xb > rect.x0 and xa < rect.x1 and yb > rect.y0 and ya < rect.y1:
                nxt.extend([(2 * i, 2 * j), (2 * i + 1, 2 * j), (2 * i, 2 * j + 1),
                            (2 * i + 1, 2 * j + 1)])
        if cover.residual <= residual_target:
            return cover
        active = nxt
    raise CoverageError(
        f"residual {cover.residual:.3e} above target {residual_target:.3e} at level {max_level}",
        cover.residual)


def refinement_field(cover: CellCover, geom: LaminateGeometry, b, X) -> np.ndarray:
    """``phi(x) = rho_m theta((x - r_m) / rho_m)`` on covered cells, zero elsewhere."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[:-1] + (3,))
    for r, rho in cover.squares:
        local = (X - np.asarray(r)) / rho
        inside = np.all((local >= 0.0) & (local <= 1.0), axis=-1)
        if np.any(inside):
            out[inside] = rho * laminate_field(geom, b, local[inside])
    return out


def verify_cell_refinement(f: PlanarDensity, xi, params: LaminateParams, rect: Rect,
                           n_seq, ell_seq, q_seq, residual_target: float | None = None):
    """Energies of the refined laminates over ``rect`` for every ``(n, ell, q)``.

    Each row holds the energy ``sum rho_m^2 * cell + (|V| - sum rho_m^2) f(xi)``,
    the target ``|V| * two_point_value(params)`` and the absolute gap.
    """
    xi = as_mat32(xi)
    f0 = float(f(xi))
    target = rect.area * float(two_point_value(f, xi, params))
    rows = []
    for q in q_seq:
        inner = rect.shrink(q)
        tol = residual_target if residual_target is not None else 1e-3 * inner.area
        cover = vitali_cover(inner, tol)
        covered = float(cover.covered)
        for ell in ell_seq:
            b_ell = perturbed_direction(params.b, xi, ell)
            for n in n_seq:
                geom = LaminateGeometry(n, params.t, params.angle)
                cell = float(laminate_energy_quadrature(f, xi, geom, b_ell))
                energy = covered * cell + (rect.area - covered) * f0
                rows.append({
                    "n": n, "ell": ell, "q": q, "t": params.t,
                    "energy": energy, "closed_form": target,
                    "abs_err": abs(energy - target),
                    "cells": len(cover.squares), "covered": covered,
                })
    return rows


def region_raster(geom: LaminateGeometry, resolution: int = 64) -> str:
    """Plain-text raster of region labels (row 0 is the top edge)."""
    symbols = {Region.AMINUS: "a", Region.APLUS: "A", Region.BMINUS: "b", Region.BPLUS: "B",
               Region.CMINUS: "c", Region.CPLUS: "C", Region.B: ".", Region.C: ":"}
    c = (np.arange(resolution) + 0.5) / resolution
    X1, X2 = np.meshgrid(c, c[::-1])
    codes = classify_points(geom, np.stack([X1, X2], axis=-1))[0]
    lookup = {r.value: symbols[r] for r in Region}
    return "\n".join("".join(lookup[int(v)] for v in row) for row in codes)
