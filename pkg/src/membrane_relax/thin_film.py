"""Thin-film energies on ``Sigma x (-eps/2, eps/2)`` and recovery-sequence sweeps.

All integrals use the rescaled slab ``Sigma x (-1/2, 1/2)`` with
``Sigma = (0, 1)^2``.  For the ansatz ``u(x, x3) = v(x) + x3 phi(x)`` the
rescaled deformation gradient at ``(x, eps * x3)`` is
``(grad v(x) + eps x3 grad phi(x) | phi(x))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .densities import PlanarDensity
from .energy_models import (FiberSolverConfig, StoredEnergy, fiber_relax, fiber_relax_constrained,
                            normal_field)
from .tensor_core import ExtendedEnergy, adjoin_column, as_mat32, det3

__all__ = [
    "FilmAnsatz",
    "FilmConfig",
    "ExperimentReport",
    "PreconditionError",
    "affine_ansatz",
    "identity_ansatz",
    "sine_director_ansatz",
    "planar_rule",
    "transverse_rule",
    "film_energy",
    "film_energy_details",
    "midplane_average",
    "limit_energy",
    "slab_min_det",
    "detect_threshold",
    "recovery_experiment",
    "membrane_energy",
    "gamma_gap_report",
]

Field = Callable[[np.ndarray], np.ndarray]


class PreconditionError(ValueError):
    """The planar determinant bound fails; ``node`` is the worst planar point."""

    def __init__(self, message, node, value):
        super().__init__(message)
        self.node = node
        self.value = value


@dataclass
class FilmAnsatz:
    """``u(x, x3) = v(x) + x3 phi(x)``; every field maps ``(N, 2)`` points to arrays."""

    v: Field
    grad_v: Field
    phi: Field
    grad_phi: Field
    label: str = "ansatz"

    def deformation_gradient(self, X, eps: float, x3) -> np.ndarray:
        """Rescaled ``grad u`` at planar points ``X`` and transverse points ``x3``: shape ``(N, K, 3, 3)``."""
        Gv = self.grad_v(X)[:, None]
        Gp = self.grad_phi(X)[:, None]
        ph = self.phi(X)[:, None]
        z = np.asarray(x3, dtype=float)[None, :, None, None]
        return adjoin_column(Gv + eps * z * Gp, np.broadcast_to(ph, (len(X), len(np.atleast_1d(x3)), 3)))


def affine_ansatz(A, director, offset=None, label: str = "affine") -> FilmAnsatz:
    """Affine ``v(x) = A x + offset`` with a constant director."""
    A = as_mat32(A)
    d = np.asarray(director, dtype=float)
    c = np.zeros(3) if offset is None else np.asarray(offset, dtype=float)
    return FilmAnsatz(
        v=lambda X: X @ A.T + c,
        grad_v=lambda X: np.broadcast_to(A, (len(X), 3, 2)),
        phi=lambda X: np.broadcast_to(d, (len(X), 3)),
        grad_phi=lambda X: np.zeros((len(X), 3, 2)),
        label=label,
    )


def identity_ansatz() -> FilmAnsatz:
    """``v(x) = (x1, x2, 0)`` with director ``e3``: the undeformed film."""
    return affine_ansatz(np.eye(3)[:, :2], [0.0, 0.0, 1.0], label="identity")


def sine_director_ansatz(A=None, amplitude: float = 0.1, label: str = "sine-director") -> FilmAnsatz:
    """Affine ``v`` with director ``Phi(A) + amplitude * s(x)``.

    ``s(x) = (sin 2 pi x1, sin 2 pi x2, sin 2 pi x1 sin 2 pi x2)``, so the
    director varies smoothly across the film.
    """
    A = np.eye(3)[:, :2] if A is None else as_mat32(A)
    base = normal_field(A)
    k = 2.0 * math.pi
    amp = float(amplitude)

    def phi(X):
        s1, s2 = np.sin(k * X[:, 0]), np.sin(k * X[:, 1])
        return base + amp * np.stack([s1, s2, s1 * s2], axis=-1)

    def grad_phi(X):
        s1, s2 = np.sin(k * X[:, 0]), np.sin(k * X[:, 1])
        c1, c2 = np.cos(k * X[:, 0]), np.cos(k * X[:, 1])
        G = np.zeros((len(X), 3, 2))
        G[:, 0, 0] = k * c1
        G[:, 1, 1] = k * c2
        G[:, 2, 0] = k * c1 * s2
        G[:, 2, 1] = k * s1 * c2
        return amp * G

    return FilmAnsatz(
        v=lambda X: X @ A.T,
        grad_v=lambda X: np.broadcast_to(A, (len(X), 3, 2)),
        phi=phi,
        grad_phi=grad_phi,
        label=label,
    )


@dataclass(frozen=True)
class FilmConfig:
    eps: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    planar_order: int = 4
    transverse_order: int = 2
    j: int = 1
    threshold_scan: int = 33
    eps_max: float = 0.5

    def __post_init__(self):
        if any(not 0.0 < e < 1.0 for e in self.eps):
            raise ValueError("thicknesses must lie in (0, 1)")
        if self.planar_order < 1 or self.transverse_order < 1:
            raise ValueError("quadrature orders must be >= 1")
        if self.j < 1:
            raise ValueError("j must be >= 1")

    @property
    def det_margin(self) -> float:
        return 1.0 / (4.0 * self.j)


def planar_rule(order: int):
    """Tensor Gauss-Legendre nodes and weights on the unit square."""
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    W1, W2 = np.meshgrid(w, w, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], axis=-1), (W1 * W2).ravel()


def transverse_rule(order: int):
    """Gauss-Legendre nodes and weights on ``(-1/2, 1/2)``; weights sum to one."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * x, 0.5 * w


def _integrate(vals, wp, wz=None) -> float:
    # the rules integrate constants exactly in exact arithmetic; apply them to
    # the deviation from one node value so constant integrands come out exact
    ref = float(vals.flat[0])
    dev = vals - ref
    q = wp @ dev if wz is None else wp @ dev @ wz
    return ref + float(q)


def film_energy_details(W: StoredEnergy, u: FilmAnsatz, eps: float, cfg: FilmConfig = FilmConfig()):
    """``(energy, min_det, worst_node)`` on the rescaled slab.

    ``worst_node`` is the ``(x1, x2, x3)`` quadrature node with the smallest
    determinant; the energy is infinite when that determinant is not positive.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    X, wp = planar_rule(cfg.planar_order)
    z, wz = transverse_rule(cfg.transverse_order)
    F = u.deformation_gradient(X, eps, z)
    dets = det3(F)
    i, k = np.unravel_index(np.argmin(dets), dets.shape)
    worst = (float(X[i, 0]), float(X[i, 1]), float(z[k]))
    min_det = float(dets[i, k])
    if min_det <= 0.0:
        return ExtendedEnergy(math.inf), min_det, worst
    vals = W.batch(F.reshape(-1, 3, 3)).reshape(dets.shape)
    return ExtendedEnergy(_integrate(vals, wp, wz)), min_det, worst


def film_energy(W: StoredEnergy, u: FilmAnsatz, eps: float, cfg: FilmConfig = FilmConfig()) -> ExtendedEnergy:
    """``(1/eps) int_{Sigma_eps} W(grad u)`` by tensor Gauss quadrature."""
    return film_energy_details(W, u, eps, cfg)[0]


def midplane_average(u: FilmAnsatz, eps: float, cfg: FilmConfig = FilmConfig(),
                     quadratic: Optional[Field] = None, points=None) -> np.ndarray:
    """Transverse average of ``u`` at the planar quadrature nodes (or at ``points``).

    ``quadratic`` adds ``x3^2 w(x)`` to the deformation, which shifts the
    average by ``eps^2 w / 12``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    X = planar_rule(cfg.planar_order)[0] if points is None else np.asarray(points, dtype=float)
    order = max(cfg.transverse_order, 2) if quadratic is not None else cfg.transverse_order
    z, wz = transverse_rule(order)
    x3 = eps * z
    vals = u.v(X)[:, None, :] + x3[None, :, None] * u.phi(X)[:, None, :]
    if quadratic is not None:
        vals = vals + (x3 ** 2)[None, :, None] * quadratic(X)[:, None, :]
    return np.einsum("nkc,k->nc", vals, wz)


def limit_energy(W: StoredEnergy, u: FilmAnsatz, cfg: FilmConfig = FilmConfig()) -> ExtendedEnergy:
    """``int_Sigma W(grad v | phi)``."""
    X, wp = planar_rule(cfg.planar_order)
    F = adjoin_column(u.grad_v(X), u.phi(X))
    return ExtendedEnergy(_integrate(W.batch(F), wp))


def _check_points(cfg: FilmConfig):
    # planar quadrature nodes plus a uniform grid including the boundary
    Xq = planar_rule(cfg.planar_order)[0]
    g = np.linspace(0.0, 1.0, cfg.threshold_scan)
    G1, G2 = np.meshgrid(g, g, indexing="ij")
    return np.concatenate([Xq, np.stack([G1.ravel(), G2.ravel()], -1)])


def slab_min_det(u: FilmAnsatz, eps: float, cfg: FilmConfig = FilmConfig()) -> float:
    """Smallest ``det grad u(x, eps x3)`` over check points and ``x3`` in ``[-1/2, 1/2]``.

    The determinant is a quadratic polynomial in ``x3``; its minimum on the
    interval is attained at an end point or at the vertex, all of which are
    evaluated.
    """
    X = _check_points(cfg)
    z = np.array([-0.5, 0.0, 0.5])
    d = det3(u.deformation_gradient(X, eps, z))
    # fit d(x3) = c0 + c1 x3 + c2 x3^2 through the three samples
    c0 = d[:, 1]
    c1 = d[:, 2] - d[:, 0]
    c2 = 2.0 * (d[:, 2] + d[:, 0] - 2.0 * d[:, 1])
    out = d.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        zv = np.where(c2 > 0, -c1 / (2.0 * c2), 1.0)
    inner = (c2 > 0) & (np.abs(zv) < 0.5)
    out[inner] = np.minimum(out[inner], (c0 + c1 * zv + c2 * zv * zv)[inner])
    return float(out.min())


def detect_threshold(u: FilmAnsatz, cfg: FilmConfig = FilmConfig(), iterations: int = 60) -> float:
    """Bisection for the largest ``eta <= eps_max`` with slab determinant at least ``1/(4j)``."""
    margin = cfg.det_margin
    hi = cfg.eps_max
    if slab_min_det(u, hi, cfg) >= margin:
        return hi
    lo = hi
    while slab_min_det(u, lo, cfg) < margin:
        lo *= 0.5
        if lo < 1e-12:
            return 0.0
    hi = 2.0 * lo
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if slab_min_det(u, mid, cfg) >= margin:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class ExperimentReport:
    label: str
    j: int
    eps: list
    energies: list
    min_dets: list
    limit: float
    threshold: float
    det_margin: float
    margins_ok: list
    slope: float
    intercept: float
    projection_error: float
    notes: list = field(default_factory=list)

    @property
    def gaps(self) -> list:
        return [abs(e - self.limit) for e in self.energies]

    @property
    def margins_pass(self) -> bool:
        return all(ok for e, ok in zip(self.eps, self.margins_ok) if e <= self.threshold)

    def rows(self):
        for e, en, md, g in zip(self.eps, self.energies, self.min_dets, self.gaps):
            yield {"eps": e, "energy": en, "min_det": md, "limit": self.limit, "abs_gap": g}

    def to_json(self) -> str:
        d = asdict(self)
        d["gaps"] = self.gaps
        d["margins_pass"] = self.margins_pass
        return json.dumps(d, indent=2, sort_keys=True, default=float)


def fit_slope(eps, gaps):
    """Least-squares slope and intercept of ``log gap`` against ``log eps``."""
    e = np.asarray(eps, dtype=float)
    g = np.asarray(gaps, dtype=float)
    keep = g > 0
    if keep.sum() < 2:
        return math.nan, math.nan
    slope, intercept = np.polyfit(np.log(e[keep]), np.log(g[keep]), 1)
    return float(slope), float(intercept)


def recovery_experiment(W: StoredEnergy, u: FilmAnsatz, cfg: FilmConfig = FilmConfig()) -> ExperimentReport:
    """Energy trace, determinant margins and convergence slope for one ansatz."""
    Xc = _check_points(cfg)
    base = det3(adjoin_column(u.grad_v(Xc), u.phi(Xc)))
    worst = int(np.argmin(base))
    if base[worst] < 1.0 / (2.0 * cfg.j):
        raise PreconditionError(
            f"det(grad v | phi) = {base[worst]:.6g} < 1/(2j) at {tuple(Xc[worst])}",
            tuple(Xc[worst]), float(base[worst]))
    eta = detect_threshold(u, cfg)
    limit = float(limit_energy(W, u, cfg))
    energies, dets, oks = [], [], []
    for e in cfg.eps:
        energies.append(float(film_energy(W, u, e, cfg)))
        md = slab_min_det(u, e, cfg)
        dets.append(md)
        oks.append(md >= cfg.det_margin)
    slope, intercept = fit_slope(cfg.eps, [abs(x - limit) for x in energies])
    Xq = planar_rule(cfg.planar_order)[0]
    proj = max(float(np.max(np.abs(midplane_average(u, e, cfg) - u.v(Xq)))) for e in cfg.eps)
    return ExperimentReport(u.label, cfg.j, list(cfg.eps), energies, dets, limit, eta,
                            cfg.det_margin, oks, slope, intercept, proj)


def membrane_energy(grad_v: Field, density: PlanarDensity, order: int = 4) -> ExtendedEnergy:
    """``int_Sigma density(grad v)`` by tensor Gauss quadrature.

    Uses ``density.batch``; for laminated densities that is the vectorized
    inner search, which can sit above the scalar value.
    """
    X, wp = planar_rule(order)
    vals = density.batch(np.asarray(grad_v(X), dtype=float))
    if np.any(np.isinf(vals)):
        return ExtendedEnergy(math.inf)
    return ExtendedEnergy(_integrate(vals, wp))


def gamma_gap_report(W: StoredEnergy, A, directors, js=(1, 2, 5, 10, 100, 1000),
                     cfg: FilmConfig = FilmConfig(), solver: FiberSolverConfig = FiberSolverConfig(),
                     tol: float = 1e-9) -> dict:
    """Recovery side against constrained and unconstrained fiber relaxations for affine ``v``.

    ``a`` is the best limit energy over the constant ``directors``; ``a_j``
    restricts to directors with ``det(A | zeta) >= 1/j``; ``b_j`` is the
    constrained relaxation and ``c`` the unconstrained one (all times ``|Sigma| = 1``).
    """
    A = as_mat32(A)
    Z = np.atleast_2d(np.asarray(directors, dtype=float))
    F = adjoin_column(A, Z)
    dets = det3(F)
    limits = np.array([float(limit_energy(W, affine_ansatz(A, z), cfg)) if d > 0 else math.inf
                       for z, d in zip(Z, dets)])
    a = float(limits.min())
    a_j, b_j = [], []
    for j in js:
        admissible = dets >= 1.0 / j
        a_j.append(float(limits[admissible].min()) if np.any(admissible) else math.inf)
        b_j.append(float(fiber_relax_constrained(W, A, j, solver)))
    c = float(fiber_relax(W, A, solver))
    return {
        "a": a, "a_j": a_j, "b_j": b_j, "c": c, "js": list(js),
        "a_ge_c": a >= c - tol,
        "a_j_ge_b_j": all(x >= y - tol for x, y in zip(a_j, b_j)),
        "b_monotone": all(y <= x + tol for x, y in zip(b_j, b_j[1:])),
        "b_to_c": abs(b_j[-1] - c),
    }
