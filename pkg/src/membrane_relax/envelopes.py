"""Sequential lamination envelopes of planar densities.

``R_{i+1} f(xi)`` is the infimum over ``a`` (unit, in the plane), ``b`` in R^3
and ``t`` in [0, 1] of

    (1 - t) R_i f(xi - t a (x) b) + t R_i f(xi + (1 - t) a (x) b).

Every computed value is an upper bound of the true envelope.  The level-``i``
density is always offered as the ``t = 0`` candidate, so the computed sequence
is nonincreasing by construction.

Two evaluation paths exist for a laminated density: a vectorized ``batch``
path that only scans a small candidate grid (used when the density appears
inside a deeper recursion), and a scalar ``__call__`` path that scans a larger
grid and polishes the best candidates with a pattern search.  Scalar values are
memoized on ``(level, xi)`` with ``xi`` quantized to 1e-9.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .densities import PlanarDensity
from .tensor_core import INFINITY, ExtendedEnergy, as_mat32, outer_32

__all__ = [
    "LaminateParams",
    "SearchGrid",
    "LaminationSearchConfig",
    "MemoizationLimitError",
    "LaminationCache",
    "LaminatedDensity",
    "laminate_step",
    "laminate_envelope",
    "laminated_density",
    "two_point_value",
    "rank_one_midpoint_check",
]


class MemoizationLimitError(RuntimeError):
    """The lamination memo table reached its configured bound."""


@dataclass(frozen=True)
class LaminateParams:
    a: np.ndarray
    b: np.ndarray
    t: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if not math.isclose(float(np.linalg.norm(a)), 1.0, rel_tol=1e-9):
            raise ValueError("a must be a unit vector")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))

    @classmethod
    def from_angle(cls, angle: float, b, t: float) -> "LaminateParams":
        return cls(np.array([math.cos(angle), math.sin(angle)]), b, t)

    @property
    def angle(self) -> float:
        return math.atan2(self.a[1], self.a[0])

    @property
    def direction(self) -> np.ndarray:
        """The rank-one matrix ``a (x) b``."""
        return outer_32(self.b, self.a)


def _sphere_points(n: int) -> np.ndarray:
    """Fibonacci lattice on the unit sphere."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


@dataclass(frozen=True)
class SearchGrid:
    """Tensor grid of lamination candidates.

    Angles of ``a`` cover ``[0, pi)``; ``b`` runs over ``n_directions`` sphere
    points times ``n_radii`` fractions of the search radius; ``t`` over
    ``n_t`` interior points of (0, 1).
    """

    n_angles: int = 8
    n_directions: int = 20
    n_radii: int = 4
    n_t: int = 7

    def __post_init__(self):
        if min(self.n_angles, self.n_directions, self.n_radii, self.n_t) < 1:
            raise ValueError("search grids must be nonempty")

    def size(self) -> int:
        return self.n_angles * self.n_directions * self.n_radii * self.n_t

    def arrays(self):
        """``(angles, unit_b * fraction, t)`` flattened to one candidate per row."""
        ang = np.arange(self.n_angles) * math.pi / self.n_angles
        dirs = _sphere_points(self.n_directions)
        fr = np.arange(1, self.n_radii + 1) / self.n_radii
        ts = np.arange(1, self.n_t + 1) / (self.n_t + 1)
        A, D, R, T = np.meshgrid(np.arange(ang.size), np.arange(dirs.shape[0]), fr, ts,
                                 indexing="ij")
        return ang[A.ravel()], dirs[D.ravel()] * R.ravel()[:, None], T.ravel()


@dataclass(frozen=True)
class LaminationSearchConfig:
    """Search settings.

    ``top`` is scanned for a scalar level-1 evaluation, ``upper`` for scalar
    evaluations at deeper levels and ``inner`` inside the vectorized recursion.
    The radius of ``b`` is ``radius_factor * (1 + |xi|)``.  ``extra_angles`` and
    ``extra_b`` (absolute vectors) are appended to every top-level scan.
    """

    top: SearchGrid = SearchGrid(8, 20, 4, 7)
    upper: SearchGrid = SearchGrid(3, 8, 2, 3)
    inner: SearchGrid = SearchGrid(2, 4, 1, 3)
    radius_factor: float = 4.0
    refine_starts: int = 3
    upper_refine_starts: int = 1
    refine_iterations: int = 300
    upper_refine_iterations: int = 30
    refine_min_step: float = 1e-8
    contraction: float = 0.5
    extra_angles: tuple = ()
    extra_b: tuple = ()
    cache_size: int = 100_000
    chunk_points: int = 400_000

    def __post_init__(self):
        if not self.radius_factor > 0:
            raise ValueError("radius_factor must be positive")


@dataclass
class LaminationCache:
    limit: int = 100_000
    table: dict = field(default_factory=dict)

    def key(self, level: int, xi: np.ndarray):
        return (level,) + tuple(np.round(np.asarray(xi).ravel() * 1e9).astype(np.int64).tolist())

    def get(self, level, xi):
        return self.table.get(self.key(level, xi))

    def put(self, level, xi, value):
        if len(self.table) >= self.limit:
            raise MemoizationLimitError(
                f"lamination memo bound of {self.limit} entries exceeded")
        self.table[self.key(level, xi)] = value


def _weighted(t, v_minus, v_plus):
    """``(1 - t) v_minus + t v_plus`` where a zero weight silences an infinite branch."""
    with np.errstate(invalid="ignore"):
        left = np.where(t == 1.0, 0.0, (1.0 - t) * v_minus)
        right = np.where(t == 0.0, 0.0, t * v_plus)
    return left + right


def _candidate_values(f_batch, X, angles, bvec, ts, scale):
    """Evaluate lamination candidates for each row of ``X``.

    ``bvec`` of shape ``(G, 3)`` is multiplied by the per-row ``scale``
    (shape ``(N,)``, or ``None`` for absolute vectors).  Returns ``(N, G)``.
    """
    A = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    if scale is None:
        D = outer_32(bvec, A)[None]
    else:
        D = scale[:, None, None, None] * outer_32(bvec, A)[None]
    tt = ts[None, :, None, None]
    Xm = X[:, None] - tt * D
    Xp = X[:, None] + (1.0 - tt) * D
    both = np.concatenate([Xm, Xp], axis=1)
    vals = f_batch(both.reshape(-1, 3, 2)).reshape(X.shape[0], 2, -1)
    return _weighted(ts[None, :], vals[:, 0], vals[:, 1])


def _search_radius(X, cfg):
    return cfg.radius_factor * (1.0 + np.sqrt(np.sum(X * X, axis=(-2, -1))))


def _grid_min(f_batch, X, grid: SearchGrid, cfg: LaminationSearchConfig):
    """Row-wise minimum over ``grid`` of the lamination candidates (chunked)."""
    angles, bvec, ts = grid.arrays()
    G = angles.size
    rows = max(1, cfg.chunk_points // (2 * G))
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], rows):
        Xc = X[s:s + rows]
        vals = _candidate_values(f_batch, Xc, angles, bvec, ts, _search_radius(Xc, cfg))
        out[s:s + rows] = np.min(vals, axis=1)
    return out


def two_point_value(f: PlanarDensity, xi, params: LaminateParams) -> ExtendedEnergy:
    """``(1 - t) f(xi - t a (x) b) + t f(xi + (1 - t) a (x) b)``."""
    xi = as_mat32(xi)
    D = params.direction
    vals = f.batch(np.stack([xi - params.t * D, xi + (1.0 - params.t) * D]))
    return ExtendedEnergy(float(_weighted(np.float64(params.t), vals[0], vals[1])))


def _pattern_search(f_batch, xi, start, steps, cfg, max_iter):
    """Compass search over ``(angle, b1, b2, b3, t)`` with batched stencils."""
    x = np.array(start, dtype=float)
    steps = np.array(steps, dtype=float)
    best = _param_values(f_batch, xi, x[None])[0]
    stencil = np.concatenate([np.eye(5), -np.eye(5)])
    it = 0
    while it < max_iter and np.max(steps / np.maximum(1.0, np.abs(x))) > cfg.refine_min_step:
        it += 1
        trial = x + stencil * steps
        trial[:, 4] = np.clip(trial[:, 4], 0.0, 1.0)
        tv = _param_values(f_batch, xi, trial)
        k = int(np.argmin(tv))
        if tv[k] < best:
            best, x = float(tv[k]), trial[k]
        else:
            steps *= cfg.contraction
    return best, x


def _param_values(f_batch, xi, P):
    return _candidate_values(f_batch, xi[None], P[:, 0], P[:, 1:4], P[:, 4], None)[0]


def laminate_step(f: PlanarDensity, xi, cfg: LaminationSearchConfig = LaminationSearchConfig(),
                  level: int = 1):
    """One lamination step at ``xi``: returns ``(value, LaminateParams)``.

    The value never exceeds ``f(xi)``: the ``t = 0`` split is always a
    candidate and is returned (with ``a = (1, 0)``, ``b = 0``) when nothing
    beats it.
    """
    xi = as_mat32(xi)
    f0 = f(xi)
    best_val = float(f0)
    best = LaminateParams(np.array([1.0, 0.0]), np.zeros(3), 0.0)

    grid = cfg.top if level <= 1 else cfg.upper
    radius = float(_search_radius(xi[None], cfg)[0])
    angles, bvec, ts = grid.arrays()
    bvec = bvec * radius
    if grid != cfg.inner:
        ia, ib, it = cfg.inner.arrays()
        angles = np.concatenate([angles, ia])
        bvec = np.concatenate([bvec, ib * radius])
        ts = np.concatenate([ts, it])
    if cfg.extra_angles or cfg.extra_b:
        ea = np.asarray(cfg.extra_angles or (0.0,), dtype=float)
        eb = np.asarray(cfg.extra_b, dtype=float).reshape(-1, 3)
        if eb.size == 0:
            eb = bvec[:1]
        tgrid = np.unique(np.concatenate([np.arange(1, grid.n_t + 1) / (grid.n_t + 1), [0.5]]))
        EA, EB, ET = np.meshgrid(np.arange(ea.size), np.arange(eb.shape[0]), tgrid, indexing="ij")
        angles = np.concatenate([angles, ea[EA.ravel()]])
        bvec = np.concatenate([bvec, eb[EB.ravel()]])
        ts = np.concatenate([ts, ET.ravel()])

    vals = _candidate_values(f.batch, xi[None], angles, bvec, ts, None)[0]
    starts = cfg.refine_starts if level <= 1 else cfg.upper_refine_starts
    order = np.argsort(vals)[:starts]
    max_iter = cfg.refine_iterations if level <= 1 else cfg.upper_refine_iterations
    steps = [math.pi / (2 * grid.n_angles)] + [radius / (2 * grid.n_radii)] * 3 \
        + [0.5 / (grid.n_t + 1)]
    for k in order:
        if not np.isfinite(vals[k]):
            continue
        start = [angles[k], *bvec[k], ts[k]]
        v, x = _pattern_search(f.batch, xi, start, steps, cfg, max_iter)
        if v < best_val:
            best_val = v
            ang = math.fmod(x[0], 2 * math.pi)
            best = LaminateParams.from_angle(ang, x[1:4], float(x[4]))
    if not math.isfinite(best_val):
        return INFINITY, best
    return ExtendedEnergy(best_val), best


class LaminatedDensity(PlanarDensity):
    """The level-``level`` lamination of ``parent`` as a :class:`PlanarDensity`."""

    def __init__(self, parent: PlanarDensity, level: int, cfg: LaminationSearchConfig,
                 cache: LaminationCache):
        self.parent = parent
        self.level = level
        self.cfg = cfg
        self.cache = cache
        self.last_params = {}
        super().__init__(self._batch_eval, kind=f"laminated({level})",
                         label=f"R{level}[{parent.label}]")

    def _batch_eval(self, X):
        X = as_mat32(X)
        base = self.parent.batch(X)
        return np.minimum(base, _grid_min(self.parent.batch, X, self.cfg.inner, self.cfg))

    def step(self, xi):
        """Scalar evaluation returning ``(value, params)``; memoized."""
        xi = as_mat32(xi)
        hit = self.cache.get(self.level, xi)
        if hit is not None:
            return hit
        value, params = laminate_step(self.parent, xi, self.cfg, level=self.level)
        self.cache.put(self.level, xi, (value, params))
        return value, params

    def __call__(self, xi) -> ExtendedEnergy:
        return self.step(xi)[0]


def laminated_density(f: PlanarDensity, depth: int,
                      cfg: LaminationSearchConfig = LaminationSearchConfig(),
                      cache: LaminationCache | None = None) -> LaminatedDensity:
    """Chain of laminated densities; returns the level-``depth`` one."""
    if depth < 1:
        raise ValueError("depth must be at least 1")
    cache = cache if cache is not None else LaminationCache(cfg.cache_size)
    dens = f
    for level in range(1, depth + 1):
        dens = LaminatedDensity(dens, level, cfg, cache)
    return dens


def laminate_envelope(f: PlanarDensity, xi, depth: int,
                      cfg: LaminationSearchConfig = LaminationSearchConfig(),
                      cache: LaminationCache | None = None):
    """Values ``[R_1 f(xi), ..., R_depth f(xi)]``."""
    top = laminated_density(f, depth, cfg, cache)
    chain = []
    dens = top
    while isinstance(dens, LaminatedDensity):
        chain.append(dens)
        dens = dens.parent
    return [d(xi) for d in reversed(chain)]


def rank_one_midpoint_check(f: PlanarDensity, xi, params: LaminateParams, tol: float = 1e-6) -> bool:
    """True iff ``f(xi)`` does not exceed the lamination average at ``params`` (+ ``tol``)."""
    lhs = float(f(xi))
    if lhs <= tol:
        # densities are nonnegative, so the average is at least zero
        return True
    return lhs <= float(two_point_value(f, xi, params)) + tol
