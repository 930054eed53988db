"""Small dense linear algebra on 3x2 / 3x3 matrices and extended-real energies.

Matrices are plain numpy arrays: a ``Mat32`` has shape ``(3, 2)`` with columns
``xi[:, 0]`` and ``xi[:, 1]``; a ``Mat33`` has shape ``(3, 3)``.  Most helpers
broadcast over leading axes so that batches of shape ``(..., 3, 2)`` can be
processed without Python loops.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ExtendedEnergy",
    "INFINITY",
    "cross_product",
    "adjoin_column",
    "outer_32",
    "det3",
    "det3_cofactor",
    "wedge",
    "frobenius",
    "minors_32",
    "as_mat32",
]


class ExtendedEnergy(float):
    """A value in ``[0, +inf]`` with saturating arithmetic.

    Behaves like a float, but refuses negative or NaN values and raises on the
    undefined product ``0 * inf`` instead of silently producing NaN.
    """

    def __new__(cls, value=0.0):
        v = float(value)
        if math.isnan(v) or v < 0.0:
            raise ValueError(f"energy must lie in [0, +inf], got {value!r}")
        return super().__new__(cls, v)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self)

    def __add__(self, other):
        return ExtendedEnergy(float(self) + float(ExtendedEnergy(other)))

    __radd__ = __add__

    def __mul__(self, lam):
        lam = float(lam)
        if lam < 0.0 or math.isnan(lam):
            raise ValueError("energies can only be scaled by nonnegative reals")
        if lam == 0.0 and math.isinf(self):
            raise ValueError("0 * inf is undefined for extended energies")
        if math.isinf(lam) and float(self) == 0.0:
            raise ValueError("0 * inf is undefined for extended energies")
        return ExtendedEnergy(float(self) * lam)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return "ExtendedEnergy(inf)" if math.isinf(self) else f"ExtendedEnergy({float(self)!r})"


INFINITY = ExtendedEnergy(math.inf)


def as_mat32(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-2:] != (3, 2):
        raise ValueError(f"expected a 3x2 matrix, got shape {xi.shape}")
    return xi


def cross_product(u, v) -> np.ndarray:
    """Right-handed cross product, broadcasting over leading axes."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return np.stack(
        [
            u[..., 1] * v[..., 2] - u[..., 2] * v[..., 1],
            u[..., 2] * v[..., 0] - u[..., 0] * v[..., 2],
            u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0],
        ],
        axis=-1,
    )


def wedge(xi) -> np.ndarray:
    """``xi_1 ^ xi_2`` for a (batch of) 3x2 matrices."""
    xi = as_mat32(xi)
    return cross_product(xi[..., :, 0], xi[..., :, 1])


def adjoin_column(xi, zeta) -> np.ndarray:
    """The 3x3 matrix ``(xi | zeta)``."""
    xi = as_mat32(xi)
    zeta = np.asarray(zeta, dtype=float)
    lead = np.broadcast_shapes(xi.shape[:-2], zeta.shape[:-1])
    xi = np.broadcast_to(xi, lead + (3, 2))
    zeta = np.broadcast_to(zeta, lead + (3,))
    return np.concatenate([xi, zeta[..., :, None]], axis=-1)


def outer_32(b, a) -> np.ndarray:
    """Rank-one 3x2 matrix ``a (x) b`` with entries ``b_i * a_j``."""
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    return b[..., :, None] * a[..., None, :]


def det3(F) -> np.ndarray:
    """Determinant of (a batch of) 3x3 matrices via the triple product."""
    F = np.asarray(F, dtype=float)
    return np.einsum("...i,...i->...", cross_product(F[..., :, 0], F[..., :, 1]), F[..., :, 2])


def det3_cofactor(F) -> float:
    """Cofactor expansion along the first row; used as an independent check."""
    F = np.asarray(F, dtype=float)
    total = 0.0
    for j in range(3):
        minor = np.delete(np.delete(F, 0, axis=0), j, axis=1)
        total += (-1) ** j * F[0, j] * (minor[0, 0] * minor[1, 1] - minor[0, 1] * minor[1, 0])
    return float(total)


def minors_32(M) -> np.ndarray:
    """The three 2x2 minors of a 3x2 matrix (rows (0,1), (0,2), (1,2))."""
    M = as_mat32(M)
    out = []
    for i, k in ((0, 1), (0, 2), (1, 2)):
        out.append(M[..., i, 0] * M[..., k, 1] - M[..., i, 1] * M[..., k, 0])
    return np.stack(out, axis=-1)


def frobenius(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.sqrt(np.sum(M * M, axis=(-2, -1)))
