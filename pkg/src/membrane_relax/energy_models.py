"""Stored energies with a determinant barrier and their fiber relaxation.

The stored energies handled here have the form ``W(F) = h(det F) + |F|^p``
where ``h`` is a barrier profile that is infinite for ``det F <= 0``.  For
such energies the infimum over the third column ``zeta`` can be restricted to
multiples of the unit normal of the image plane of ``xi``, which reduces the
fiber relaxation to a one-dimensional minimization over ``s > 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .densities import PlanarDensity
from .tensor_core import (
    INFINITY,
    ExtendedEnergy,
    adjoin_column,
    as_mat32,
    cross_product,
    det3,
    wedge,
)

__all__ = [
    "sample_nondegenerate",
    "sample_rank_deficient",
    "BarrierProfile",
    "StoredEnergy",
    "FiberSolverConfig",
    "SampleSpec",
    "DensityReport",
    "DegenerateMatrixError",
    "DEGENERACY_THRESHOLD",
    "inverse_square_barrier",
    "make_barrier_energy",
    "default_energy",
    "fiber_relax",
    "fiber_minimizer",
    "fiber_relax_batch",
    "fiber_relax_constrained",
    "fiber_relax_grid_oracle",
    "normal_field",
    "base_density",
    "w0_growth_constant",
    "check_density_properties",
]

DEGENERACY_THRESHOLD = 1e-14
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DegenerateMatrixError(ValueError):
    """Raised when an operation needs ``xi_1 ^ xi_2 != 0``."""


@dataclass(frozen=True)
class BarrierProfile:
    """Barrier ``h`` acting on the determinant.

    ``h`` must be vectorized, return ``inf`` for arguments ``<= 0`` and be
    bounded by ``r_delta(delta)`` on ``[delta, inf)``.  ``dh`` is optional; a
    central difference is used when it is missing.
    """

    h: Callable[[np.ndarray], np.ndarray]
    r_delta: Callable[[float], float]
    dh: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, np.inf)
        pos = t > 0
        out[pos] = self.h(t[pos])
        return out

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.dh is not None:
            return self.dh(t)
        eps = 1e-6 * np.maximum(t, 1e-12)
        return (self.h(t + eps) - self.h(t - eps)) / (2 * eps)


def inverse_square_barrier() -> BarrierProfile:
    """``h(d) = (1/d - 1)^2`` for ``d > 0``; zero at ``d = 1``, tends to 1 at infinity."""

    def h(d):
        # overflow to +inf is the intended value for d -> 0+
        with np.errstate(over="ignore"):
            return (1.0 / d - 1.0) ** 2

    def dh(d):
        with np.errstate(over="ignore"):
            return -2.0 * (1.0 / d - 1.0) / (d * d)

    return BarrierProfile(
        h=h,
        dh=dh,
        r_delta=lambda delta: max((1.0 / delta - 1.0) ** 2, 1.0),
        name="inverse-square",
    )


@dataclass(frozen=True)
class StoredEnergy:
    """3D density ``W: M^{3x3} -> [0, inf]`` with its structural constants.

    ``evaluator`` is vectorized over ``(..., 3, 3)``.  ``growth(delta)`` is the
    constant ``c_delta`` with ``W(F) <= c_delta (1 + |F|^p)`` on ``det F >= delta``.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    p: float
    coercivity: float
    growth: Callable[[float], float]
    barrier: Optional[BarrierProfile] = None
    name: str = "custom"

    def batch(self, F) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(F, dtype=float)), dtype=float)

    def __call__(self, F) -> ExtendedEnergy:
        return ExtendedEnergy(self.batch(np.asarray(F, dtype=float)[None])[0])


def make_barrier_energy(h: BarrierProfile, p: float) -> StoredEnergy:
    """``W(F) = h(det F) + |F|^p`` (Frobenius norm), with ``C = 1`` and ``c_delta = max(r_delta, 1)``."""
    if not p > 1:
        raise ValueError(f"exponent p must exceed 1, got {p}")
    p = float(p)

    def evaluator(F):
        F = np.asarray(F, dtype=float)
        norm2 = np.sum(F * F, axis=(-2, -1))
        return h(det3(F)) + norm2 ** (p / 2.0)

    return StoredEnergy(
        evaluator=evaluator,
        p=p,
        coercivity=1.0,
        growth=lambda delta: max(h.r_delta(delta), 1.0),
        barrier=h,
        name=f"{h.name}+|F|^{p:g}",
    )


def default_energy() -> StoredEnergy:
    return make_barrier_energy(inverse_square_barrier(), 2.0)


@dataclass(frozen=True)
class FiberSolverConfig:
    """Settings of the fiber minimizer.

    The coarse stage scans ``grid_points`` geometrically spaced values of the
    out-of-plane stretch between ``radius * span`` and ``radius``; ``radius``
    defaults to the coercivity bound derived from a few probe values.  The
    bracket around the best grid value is then shrunk by golden section for
    ``stages`` iterations, until the energy difference drops below ``tol`` or
    until the bracket is narrower than ``rel_width`` times its upper end.
    ``contraction`` is the step factor of the 3D pattern search used for
    energies without a barrier structure.
    """

    radius: Optional[float] = None
    grid_points: int = 32
    span: float = 1e-8
    stages: int = 80
    rel_width: float = 1e-7
    contraction: float = 0.5
    tol: float = 1e-13

    def __post_init__(self):
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")


# --- one-dimensional reduction ------------------------------------------------


def _profile(W: StoredEnergy, xi2, d, s):
    """``h(s d) + (|xi|^2 + s^2)^{p/2}`` with broadcasting."""
    r2 = xi2 + s * s
    radial = r2 if W.p == 2.0 else r2 ** (W.p / 2.0)
    # s and d are positive here, so the barrier's own masking is skipped
    return W.barrier.h(s * d) + radial


def _reduced_minimize(W: StoredEnergy, xi2, d, cfg: FiberSolverConfig, s_min=None):
    """Minimize the 1D profile for each row; returns ``(value, s)`` arrays."""
    xi2 = np.asarray(xi2, dtype=float)
    d = np.asarray(d, dtype=float)
    probes = np.stack([1.0 / d, np.ones_like(d), np.sqrt(xi2) + 1e-3], axis=-1)
    if s_min is not None:
        s_min = np.broadcast_to(np.asarray(s_min, dtype=float), d.shape)
        probes = np.maximum(probes, s_min[:, None])
    pvals = _profile(W, xi2[:, None], d[:, None], probes)
    best_probe = np.min(pvals, axis=1)
    if cfg.radius is None:
        # s^p <= W(xi | s n) for every candidate, so no minimizer lies beyond this
        upper = best_probe ** (1.0 / W.p)
    else:
        upper = np.full(d.shape, float(cfg.radius))
    lower = upper * cfg.span
    if s_min is not None:
        upper = np.maximum(upper, s_min)
        lower = s_min.copy()
    upper = np.maximum(upper, lower * (1.0 + 1e-12))

    frac = np.linspace(0.0, 1.0, cfg.grid_points)
    grid = lower[:, None] * (upper / lower)[:, None] ** frac[None, :]
    gvals = _profile(W, xi2[:, None], d[:, None], grid)
    k = np.argmin(gvals, axis=1)
    rows = np.arange(d.size)
    lo = grid[rows, np.maximum(k - 1, 0)]
    hi = grid[rows, np.minimum(k + 1, cfg.grid_points - 1)]

    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    f1 = _profile(W, xi2, d, x1)
    f2 = _profile(W, xi2, d, x2)
    for _ in range(cfg.stages):
        left = f1 < f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        new_x = np.where(left, hi - _GOLDEN * (hi - lo), lo + _GOLDEN * (hi - lo))
        new_f = _profile(W, xi2, d, new_x)
        x1, x2 = np.where(left, new_x, x2), np.where(left, x1, new_x)
        f1, f2 = np.where(left, new_f, f2), np.where(left, f1, new_f)
        if np.all(np.abs(f1 - f2) < cfg.tol) or np.all(hi - lo < cfg.rel_width * hi):
            break

    cand_s = np.stack([grid[rows, k], x1, x2, probes[:, 0], probes[:, 1], probes[:, 2]], axis=-1)
    cand_v = np.concatenate([gvals[rows, k][:, None], f1[:, None], f2[:, None], pvals], axis=-1)
    if s_min is not None:
        cand_s = np.concatenate([cand_s, s_min[:, None]], axis=-1)
        cand_v = np.concatenate([cand_v, _profile(W, xi2, d, s_min)[:, None]], axis=-1)
    j = np.argmin(cand_v, axis=1)
    return cand_v[rows, j], cand_s[rows, j]


# --- generic 3D fallback --------------------------------------------------------


def _pattern_search_3d(W: StoredEnergy, xi, cfg: FiberSolverConfig, det_min: float = 0.0):
    n = wedge(xi)
    radius = cfg.radius or 5.0
    g = np.linspace(-radius, radius, 21)
    Z = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    Z = Z[Z @ n > det_min]
    if Z.size == 0:
        return INFINITY, None
    vals = W.batch(adjoin_column(xi, Z))
    z = Z[np.argmin(vals)]
    best = float(np.min(vals))
    step = g[1] - g[0]
    dirs = np.concatenate([np.eye(3), -np.eye(3)])
    while step > 1e-10:
        trial = z + step * dirs
        trial = trial[trial @ n > det_min]
        if trial.size:
            tv = W.batch(adjoin_column(xi, trial))
            i = int(np.argmin(tv))
            if tv[i] < best - cfg.tol:
                best, z = float(tv[i]), trial[i]
                continue
        step *= cfg.contraction
    return ExtendedEnergy(best), z


# --- public operations ----------------------------------------------------------


def fiber_relax_batch(W: StoredEnergy, X, cfg: FiberSolverConfig = FiberSolverConfig(),
                      return_stretch: bool = False):
    """Vectorized ``W_0`` for barrier models over ``X`` of shape ``(N, 3, 2)``."""
    if W.barrier is None:
        raise TypeError("batched fiber relaxation needs a barrier-structured energy")
    X = as_mat32(X)
    n = wedge(X)
    d = np.sqrt(np.sum(n * n, axis=-1))
    xi2 = np.sum(X * X, axis=(-2, -1))
    out = np.full(d.shape, np.inf)
    s = np.full(d.shape, np.nan)
    ok = d >= DEGENERACY_THRESHOLD
    if np.any(ok):
        v, sv = _reduced_minimize(W, xi2[ok], d[ok], cfg)
        out[ok] = v
        s[ok] = sv
    if return_stretch:
        return out, s
    return out


def fiber_minimizer(W: StoredEnergy, xi, cfg: FiberSolverConfig = FiberSolverConfig()):
    """Return ``(W_0(xi), zeta*)``; ``zeta*`` is ``None`` for degenerate ``xi``."""
    xi = as_mat32(xi)
    n = wedge(xi)
    d = float(np.linalg.norm(n))
    if d < DEGENERACY_THRESHOLD:
        return INFINITY, None
    if W.barrier is None:
        return _pattern_search_3d(W, xi, cfg)
    v, s = _reduced_minimize(W, np.array([np.sum(xi * xi)]), np.array([d]), cfg)
    return ExtendedEnergy(v[0]), s[0] * n / d


def fiber_relax(W: StoredEnergy, xi, cfg: FiberSolverConfig = FiberSolverConfig()) -> ExtendedEnergy:
    """Upper approximation of ``inf_zeta W(xi | zeta)``; exactly ``inf`` iff ``xi_1 ^ xi_2 = 0``."""
    return fiber_minimizer(W, xi, cfg)[0]


def fiber_relax_constrained(W: StoredEnergy, xi, j: int,
                            cfg: FiberSolverConfig = FiberSolverConfig()) -> ExtendedEnergy:
    """``inf { W(xi | zeta) : det(xi | zeta) >= 1/j }``."""
    if j < 1:
        raise ValueError("j must be a positive integer")
    xi = as_mat32(xi)
    n = wedge(xi)
    d = float(np.linalg.norm(n))
    if d < DEGENERACY_THRESHOLD:
        raise DegenerateMatrixError("constraint set is empty for rank-deficient xi")
    if W.barrier is None:
        return _pattern_search_3d(W, xi, cfg, det_min=1.0 / j)[0]
    # tangential components of zeta raise |F| and leave det unchanged
    xi2, dd, s_min = np.array([np.sum(xi * xi)]), np.array([d]), 1.0 / (j * d)
    v_free, s_free = _reduced_minimize(W, xi2, dd, cfg)
    if s_free[0] >= s_min:
        # inactive constraint: reuse the free value so the sequence in j is monotone to the bit
        return ExtendedEnergy(v_free[0])
    v, _ = _reduced_minimize(W, xi2, dd, cfg, s_min=np.array([s_min]))
    return ExtendedEnergy(max(v[0], v_free[0]))


def fiber_relax_grid_oracle(W: StoredEnergy, xi, half_width: float = 5.0, step: float = 0.01,
                            refine: bool = True):
    """Brute-force ``min W(xi | zeta)`` over a cubic grid of ``zeta``.

    Independent of the 1D reduction: every grid point of ``[-half_width,
    half_width]^3`` is evaluated, then one refinement grid with a tenth of the
    step is laid around the best point.  Returns ``(value, zeta)``.
    """
    xi = as_mat32(xi)
    m = int(round(half_width / step))
    g = np.arange(-m, m + 1) * step
    Z1, Z2 = np.meshgrid(g, g, indexing="ij")
    xi2 = float(np.sum(xi * xi))
    n = wedge(xi)
    best, arg = np.inf, None
    if W.barrier is not None:
        base = n[0] * Z1 + n[1] * Z2
        r2 = xi2 + Z1 * Z1 + Z2 * Z2
        for z3 in g:
            vals = W.barrier(base + n[2] * z3) + (r2 + z3 * z3) ** (W.p / 2.0)
            k = int(np.argmin(vals))
            if vals.flat[k] < best:
                best, arg = float(vals.flat[k]), (Z1.flat[k], Z2.flat[k], z3)
    else:
        plane = np.stack([Z1.ravel(), Z2.ravel()], axis=-1)
        for z3 in g:
            Z = np.concatenate([plane, np.full((plane.shape[0], 1), z3)], axis=-1)
            vals = W.batch(adjoin_column(xi, Z))
            k = int(np.argmin(vals))
            if vals[k] < best:
                best, arg = float(vals[k]), tuple(Z[k])
    if arg is None:
        return INFINITY, None
    arg = np.array(arg)
    if refine:
        h = step / 10.0
        r = np.arange(-10, 11) * h
        Z = arg + np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        vals = W.batch(adjoin_column(xi, Z))
        k = int(np.argmin(vals))
        if vals[k] < best:
            best, arg = float(vals[k]), Z[k]
    return ExtendedEnergy(best), arg


def normal_field(xi) -> np.ndarray:
    """``(xi_1 ^ xi_2) / |xi_1 ^ xi_2|^2``, so that ``det(xi | Phi) = 1``."""
    xi = as_mat32(xi)
    n = wedge(xi)
    d2 = np.sum(n * n, axis=-1)
    if np.any(np.sqrt(d2) < DEGENERACY_THRESHOLD):
        raise DegenerateMatrixError("normal field undefined for rank-deficient xi")
    return n / d2[..., None]


def base_density(W: StoredEnergy, cfg: FiberSolverConfig = FiberSolverConfig()) -> PlanarDensity:
    """``W_0`` as a :class:`PlanarDensity` with an envelope-theorem gradient."""

    def batch(X):
        return fiber_relax_batch(W, X, cfg)

    def value_and_grad(X):
        X = as_mat32(X)
        vals, s = fiber_relax_batch(W, X, cfg, return_stretch=True)
        n = wedge(X)
        d = np.sqrt(np.sum(n * n, axis=-1))
        G = np.zeros_like(X)
        ok = np.isfinite(vals)
        if not np.any(ok):
            return vals, G
        zeta = (s[ok] / d[ok])[:, None] * n[ok]
        Xo = X[ok]
        det = s[ok] * d[ok]
        dh = W.barrier.derivative(det)
        norm2 = np.sum(Xo * Xo, axis=(-2, -1)) + s[ok] ** 2
        radial = W.p * norm2 ** (W.p / 2.0 - 1.0)
        g1 = dh[:, None] * cross_product(Xo[:, :, 1], zeta) + radial[:, None] * Xo[:, :, 0]
        g2 = dh[:, None] * cross_product(zeta, Xo[:, :, 0]) + radial[:, None] * Xo[:, :, 1]
        G[ok] = np.stack([g1, g2], axis=-1)
        return vals, G

    f = PlanarDensity(batch, kind="base", grad=lambda X: value_and_grad(X)[1], label=f"W0[{W.name}]")
    f.value_and_grad = value_and_grad
    return f


# --- property checks ------------------------------------------------------------


def w0_growth_constant(W: StoredEnergy, delta: float) -> float:
    """A constant ``c`` with ``W_0(xi) <= c (1 + |xi|^p)`` whenever ``|xi_1 ^ xi_2| >= delta``.

    Uses the competitor ``zeta = Phi(xi)`` (determinant one, ``|zeta| <= 1/delta``)
    and ``(a + b)^{p/2} <= K (a^{p/2} + b^{p/2})`` with ``K = 2^{max(p/2 - 1, 0)}``.
    Only valid for barrier models built by :func:`make_barrier_energy`.
    """
    if W.barrier is None:
        raise TypeError("growth constant is derived from the barrier profile")
    K = 2.0 ** max(W.p / 2.0 - 1.0, 0.0)
    r1 = W.barrier.r_delta(1.0)
    return max(r1 + K * delta ** (-W.p), K)


def sample_nondegenerate(rng: np.random.Generator, count: int, scale: float = 0.5,
                         min_wedge: float = 0.2) -> np.ndarray:
    """``count`` matrices ``I + scale * N(0, 1)`` with ``|xi_1 ^ xi_2| >= min_wedge``."""
    base = np.eye(3)[:, :2]
    out = []
    while len(out) < count:
        x = base + scale * rng.standard_normal((3, 2))
        if np.linalg.norm(wedge(x)) >= min_wedge:
            out.append(x)
    return np.array(out).reshape(count, 3, 2)


def sample_rank_deficient(rng: np.random.Generator, count: int, scale: float = 1.0) -> np.ndarray:
    """Matrices with parallel columns (exactly, in floating point).

    The second column is a power-of-two multiple of the first, or zero, so
    the cross product vanishes without rounding.
    """
    out = np.empty((count, 3, 2))
    for i in range(count):
        c = scale * rng.standard_normal(3)
        k = int(rng.integers(-3, 4))
        lam = 0.0 if k == 0 else math.copysign(2.0 ** k, rng.standard_normal())
        if rng.random() < 0.5:
            out[i] = np.stack([c, lam * c], axis=-1)
        else:
            out[i] = np.stack([lam * c, c], axis=-1)
    return out


@dataclass(frozen=True)
class SampleSpec:
    n_samples: int = 200
    deltas: tuple = (0.1, 0.5, 1.0)
    scale: float = 1.5
    ball_radii: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    n_centers: int = 10
    probes_per_ball: int = 20
    seed: int = 0


@dataclass
class DensityReport:
    coercivity_margin: float
    growth_violations: dict = field(default_factory=dict)
    growth_constants: dict = field(default_factory=dict)
    continuity: dict = field(default_factory=dict)
    n_samples: int = 0


def check_density_properties(W: StoredEnergy, spec: SampleSpec = SampleSpec(),
                             cfg: FiberSolverConfig = FiberSolverConfig()) -> DensityReport:
    """Spot-check coercivity, conditional growth and continuity of ``W_0``."""
    rng = np.random.default_rng(spec.seed)
    X = rng.uniform(-spec.scale, spec.scale, size=(spec.n_samples, 3, 2))
    vals = fiber_relax_batch(W, X, cfg)
    norms = np.sqrt(np.sum(X * X, axis=(-2, -1)))
    margin = float(np.min(vals / norms ** W.p))

    d = np.linalg.norm(wedge(X), axis=-1)
    violations, constants = {}, {}
    for delta in spec.deltas:
        c = w0_growth_constant(W, delta)
        mask = d >= delta
        violations[delta] = int(np.sum(vals[mask] > c * (1.0 + norms[mask] ** W.p)))
        constants[delta] = c

    centers = []
    while len(centers) < spec.n_centers:
        x = rng.uniform(-spec.scale, spec.scale, size=(3, 2))
        if np.linalg.norm(wedge(x)) >= 0.2:
            centers.append(x)
    centers = np.array(centers)
    c_vals = fiber_relax_batch(W, centers, cfg)
    continuity = {}
    for r in spec.ball_radii:
        dirs = rng.normal(size=(spec.n_centers, spec.probes_per_ball, 3, 2))
        dirs /= np.sqrt(np.sum(dirs * dirs, axis=(-2, -1)))[..., None, None]
        radii = r * rng.uniform(0, 1, size=(spec.n_centers, spec.probes_per_ball, 1, 1))
        P = centers[:, None] + radii * dirs
        pv = fiber_relax_batch(W, P.reshape(-1, 3, 2), cfg).reshape(spec.n_centers, -1)
        continuity[r] = float(np.max(np.abs(pv - c_vals[:, None])))
    return DensityReport(margin, violations, constants, continuity, spec.n_samples)
