"""Planar densities on 3x2 matrices.

A :class:`PlanarDensity` wraps a vectorized evaluator ``(..., 3, 2) -> (...)``
returning ``np.inf`` where the density is infinite.  Scalar calls return an
:class:`~membrane_relax.tensor_core.ExtendedEnergy`.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .tensor_core import ExtendedEnergy, as_mat32, outer_32

__all__ = ["PlanarDensity", "double_well", "rank_one_double_well", "quadratic_density"]

BatchFn = Callable[[np.ndarray], np.ndarray]


class PlanarDensity:
    """Evaluatable density on M^{3x2}.

    Parameters
    ----------
    batch : callable
        Vectorized evaluator over arrays of shape ``(N, 3, 2)``.
    kind : str
        Provenance tag: ``"base"``, ``"laminated(i)"``, ``"cell-estimate"`` or
        ``"synthetic"``.
    grad : callable, optional
        Vectorized gradient ``(N, 3, 2) -> (N, 3, 2)``.  Only needed by the
        cell-problem estimator; a finite-difference fallback is used otherwise.
    """

    def __init__(self, batch: BatchFn, kind: str = "synthetic", grad: Optional[BatchFn] = None,
                 label: str = ""):
        self._batch = batch
        self.kind = kind
        self.grad = grad
        self.label = label or kind

    def batch(self, X) -> np.ndarray:
        X = as_mat32(X)
        lead = X.shape[:-2]
        vals = np.asarray(self._batch(X.reshape(-1, 3, 2)), dtype=float)
        return vals.reshape(lead)

    def __call__(self, xi) -> ExtendedEnergy:
        xi = as_mat32(xi)
        return ExtendedEnergy(self.batch(xi[None])[0])

    def __repr__(self) -> str:
        return f"PlanarDensity({self.label!r})"


def quadratic_density(center=None) -> PlanarDensity:
    """The convex density ``|xi - center|^2``."""
    c = np.zeros((3, 2)) if center is None else as_mat32(center)

    def batch(X):
        D = X - c
        return np.sum(D * D, axis=(-2, -1))

    return PlanarDensity(batch, kind="synthetic", grad=lambda X: 2.0 * (X - c), label="quadratic")


def double_well(xi_a, xi_b) -> PlanarDensity:
    """``min(|xi - xi_a|^2, |xi - xi_b|^2)``."""
    A = as_mat32(xi_a).copy()
    B = as_mat32(xi_b).copy()

    def batch(X):
        da = np.sum((X - A) ** 2, axis=(-2, -1))
        db = np.sum((X - B) ** 2, axis=(-2, -1))
        return np.minimum(da, db)

    def grad(X):
        da = np.sum((X - A) ** 2, axis=(-2, -1))
        db = np.sum((X - B) ** 2, axis=(-2, -1))
        near_a = (da <= db)[..., None, None]
        return 2.0 * np.where(near_a, X - A, X - B)

    f = PlanarDensity(batch, kind="synthetic", grad=grad, label="double-well")
    f.wells = (A, B)
    return f


def rank_one_double_well(midpoint, a, b) -> PlanarDensity:
    """Double well whose wells are ``midpoint -/+ (a (x) b) / 2``."""
    mid = as_mat32(midpoint)
    D = outer_32(b, a)
    return double_well(mid - 0.5 * D, mid + 0.5 * D)
