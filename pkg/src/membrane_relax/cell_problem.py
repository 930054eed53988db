"""Upper bounds for the quasiconvex envelope from a periodic-free cell problem.

``Q f(xi) <= inf int_Y f(xi + grad phi)`` over ``phi`` vanishing on the boundary
of the unit square.  The infimum is approximated on a crossed triangulation
(each grid square split by its diagonals into four triangles) with
continuous piecewise-affine ``phi``, minimized by L-BFGS from several starts.
Every returned value is the exact energy of an admissible field, hence a valid
upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

from .densities import PlanarDensity
from .envelopes import LaminateParams
from .microstructure import LaminateGeometry, laminate_field
from .tensor_core import as_mat32

__all__ = ["CellMeshSpec", "CrossedMesh", "CellResult", "cell_quasiconvex_estimate", "laminate_seed"]

_PENALTY = 1e30


@dataclass(frozen=True)
class CellMeshSpec:
    m: int = 16
    starts: int = 3
    tol: float = 1e-10
    max_iter: int = 500
    seed: int = 0
    perturbation: float = 0.05

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.starts < 1:
            raise ValueError("need at least one start")


class CrossedMesh:
    """Crossed triangulation of the unit square with ``m x m`` squares."""

    def __init__(self, m: int):
        self.m = m
        nv = (m + 1) ** 2
        g = np.arange(m + 1) / m
        VX, VY = np.meshgrid(g, g, indexing="ij")
        c = (np.arange(m) + 0.5) / m
        CX, CY = np.meshgrid(c, c, indexing="ij")
        self.nodes = np.concatenate([np.stack([VX.ravel(), VY.ravel()], -1),
                                     np.stack([CX.ravel(), CY.ravel()], -1)])

        def v(i, j):
            return i * (m + 1) + j

        I, J = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        I, J = I.ravel(), J.ravel()
        C = nv + I * m + J
        bl, br, tr, tl = v(I, J), v(I + 1, J), v(I + 1, J + 1), v(I, J + 1)
        tris = np.concatenate([
            np.stack([bl, br, C], -1), np.stack([br, tr, C], -1),
            np.stack([tr, tl, C], -1), np.stack([tl, bl, C], -1),
        ])
        self.triangles = tris
        self.area = 1.0 / (4.0 * m * m)

        P = self.nodes[tris]                        # (T, 3, 2)
        M = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=1)   # rows are edges
        Minv = np.linalg.inv(M)                     # grad lambda_k = Minv[:, :, k-1]
        g1, g2 = Minv[:, :, 0], Minv[:, :, 1]
        grads = np.stack([-(g1 + g2), g1, g2], axis=1)                 # (T, 3 nodes, 2)
        T = len(tris)
        rows = (2 * np.arange(T)[:, None, None] + np.arange(2)[None, None, :])
        rows = np.broadcast_to(rows, (T, 3, 2))
        cols = np.broadcast_to(tris[:, :, None], (T, 3, 2))
        self.B = sparse.csr_matrix((grads.ravel(), (rows.ravel(), cols.ravel())),
                                   shape=(2 * T, len(self.nodes)))

        x, y = self.nodes[:, 0], self.nodes[:, 1]
        on_edge = (np.isclose(x, 0) | np.isclose(x, 1) | np.isclose(y, 0) | np.isclose(y, 1))
        self.free = np.flatnonzero(~on_edge)
        self.B_free = self.B[:, self.free].tocsr()
        self.B_free_T = self.B_free.T.tocsr()

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def gradients(self, phi_free: np.ndarray) -> np.ndarray:
        """Per-triangle ``grad phi`` as an array of shape ``(T, 3, 2)``."""
        G = self.B_free @ phi_free                  # (2T, 3)
        return G.reshape(-1, 2, 3).transpose(0, 2, 1)

    def interpolate(self, func) -> np.ndarray:
        """Nodal values of a vector field at the free nodes."""
        return np.asarray(func(self.nodes[self.free]), dtype=float)


@dataclass
class CellResult:
    value: float
    start_values: list
    phi: np.ndarray
    mesh: CrossedMesh
    converged: bool


def _fd_gradient(f: PlanarDensity, F: np.ndarray, h: float = 1e-6) -> np.ndarray:
    T = F.shape[0]
    shifts = np.zeros((6, 3, 2))
    shifts.reshape(6, 6)[np.arange(6), np.arange(6)] = h
    P = np.concatenate([F[None] + shifts[:, None], F[None] - shifts[:, None]])
    vals = f.batch(P.reshape(-1, 3, 2)).reshape(12, T)
    g = (vals[:6] - vals[6:]) / (2 * h)
    return g.T.reshape(T, 3, 2)


def _objective(f: PlanarDensity, xi: np.ndarray, mesh: CrossedMesh):
    n_free = len(mesh.free)

    def fun(z):
        phi = z.reshape(n_free, 3)
        F = xi + mesh.gradients(phi)
        fused = getattr(f, "value_and_grad", None)
        if fused is not None:
            vals, dF = fused(F)
        else:
            vals = f.batch(F)
        if not np.all(np.isfinite(vals)):
            return _PENALTY, np.zeros_like(z)
        e = mesh.area * float(np.sum(vals))
        if fused is None:
            dF = f.grad(F) if f.grad is not None else _fd_gradient(f, F)
        dG = (mesh.area * dF).transpose(0, 2, 1).reshape(-1, 3)
        return e, (mesh.B_free_T @ dG).ravel()

    return fun


def laminate_seed(params: LaminateParams, n: int, mesh: CrossedMesh, b=None) -> np.ndarray:
    """Nodal interpolant of a zig-zag laminate, inscribed as a rotated square.

    For ``a = (cos w, sin w)`` the laminate cell is rotated by ``w`` and scaled
    by ``rho = 1 / (|cos w| + |sin w|)`` so it fits in the unit square; the
    field is ``rho * theta(local)`` inside and zero outside.
    """
    geom = LaminateGeometry(n, params.t, params.angle)
    flat = LaminateGeometry(n, params.t, 0.0)
    b = params.b if b is None else np.asarray(b, dtype=float)
    w = params.angle
    rho = 1.0 / (abs(math.cos(w)) + abs(math.sin(w)))
    R = geom.rotation

    def field(X):
        local = (X - 0.5) @ R / rho + 0.5
        inside = np.all((local >= -1e-12) & (local <= 1.0 + 1e-12), axis=-1)
        out = np.zeros(X.shape[:-1] + (3,))
        out[inside] = rho * laminate_field(flat, b, np.clip(local[inside], 0.0, 1.0))
        return out

    return mesh.interpolate(field)


def cell_quasiconvex_estimate(f: PlanarDensity, xi, spec: CellMeshSpec = CellMeshSpec(),
                              seed_construction: LaminateParams | None = None,
                              seed_strips=None,
                              return_details: bool = False):
    """Minimum over starts of the discrete cell energy at ``xi``.

    ``spec.starts`` counts ``phi = 0`` and the random starts; laminate seeds
    come on top.  Starts are ``phi = 0``, optional laminate seeds (one per strip count in
    ``seed_strips``, default ``m/4`` and ``m/2``), and random perturbations of
    the zero field drawn from a generator seeded by ``spec.seed``.
    """
    xi = as_mat32(xi)
    mesh = CrossedMesh(spec.m)
    n_free = len(mesh.free)
    fun = _objective(f, xi, mesh)
    rng = np.random.default_rng(spec.seed)

    starts = [np.zeros((n_free, 3))]
    n_seeds = 0
    if seed_construction is not None:
        if seed_strips is None:
            seed_strips = sorted({max(3, spec.m // 4), max(3, spec.m // 2)})
        for n in np.atleast_1d(seed_strips):
            starts.append(laminate_seed(seed_construction, int(n), mesh))
            n_seeds += 1
    scale = spec.perturbation * (1.0 + float(np.linalg.norm(xi))) / spec.m
    while len(starts) < spec.starts + n_seeds:
        starts.append(scale * rng.standard_normal((n_free, 3)))

    best = None
    start_values = []
    for z0 in starts:
        e0, _ = fun(z0.ravel())
        if e0 >= _PENALTY:
            start_values.append(math.inf)
            continue
        res = minimize(fun, z0.ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": spec.max_iter, "ftol": spec.tol, "gtol": 1e-9,
                                "maxcor": 20})
        val = float(res.fun) if res.fun < _PENALTY else math.inf
        if val > e0:
            val, x = e0, z0.ravel()
        else:
            x = res.x
        start_values.append(val)
        if best is None or val < best[0]:
            best = (val, x, bool(res.success))
    if best is None:
        raise ValueError("every start has infinite energy")
    # report the exact energy of the returned field
    value = fun(best[1])[0]
    result = CellResult(value, start_values, best[1].reshape(n_free, 3), mesh, best[2])
    return result if return_details else value
