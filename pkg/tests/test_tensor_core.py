import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from membrane_relax.tensor_core import (INFINITY, ExtendedEnergy, adjoin_column, cross_product, det3,
                                        det3_cofactor, frobenius, minors_32, outer_32, wedge)

E = np.eye(3)
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
mat32 = arrays(np.float64, (3, 2), elements=finite)
vec3 = arrays(np.float64, (3,), elements=finite)
vec2 = arrays(np.float64, (2,), elements=finite)
energies = st.one_of(st.floats(0, 1e6), st.just(math.inf))


def test_cross_basis_and_parallel():
    np.testing.assert_array_equal(cross_product(E[0], E[1]), E[2])
    u = np.array([0.3, -1.2, 2.0])
    np.testing.assert_array_equal(cross_product(u, u), np.zeros(3))


@given(mat32, vec3)
def test_det_is_wedge_dot_zeta(xi, zeta):
    lhs = det3(adjoin_column(xi, zeta))
    rhs = wedge(xi) @ zeta
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + abs(rhs)))


def test_det_matches_cofactor_expansion():
    rng = np.random.default_rng(5)
    for _ in range(10):
        xi, zeta = rng.normal(size=(3, 2)), rng.normal(size=3)
        F = adjoin_column(xi, zeta)
        assert det3(F) == pytest.approx(det3_cofactor(F), rel=1e-12, abs=1e-14)
        assert det3(F) == pytest.approx(np.linalg.det(F), rel=1e-10, abs=1e-12)


def test_adjoin_column_examples():
    np.testing.assert_array_equal(adjoin_column(E[:, :2], E[2]), E)
    assert det3(adjoin_column(np.ones((3, 2)), np.zeros(3))) == 0.0


def test_adjoin_column_broadcasts():
    xi = np.arange(6.0).reshape(3, 2)
    Z = np.random.default_rng(0).normal(size=(4, 3))
    F = adjoin_column(xi, Z)
    assert F.shape == (4, 3, 3)
    np.testing.assert_array_equal(F[2, :, 2], Z[2])


def test_outer_orientation():
    M = outer_32(E[2], np.array([1.0, 0.0]))
    expected = np.zeros((3, 2))
    expected[2, 0] = 1.0
    np.testing.assert_array_equal(M, expected)
    np.testing.assert_array_equal(outer_32(np.array([1.0, 2.0, 3.0]), np.zeros(2)), np.zeros((3, 2)))


@given(vec3, vec2)
def test_outer_is_rank_one(b, a):
    np.testing.assert_allclose(minors_32(outer_32(b, a)), 0.0, atol=1e-12)


@given(mat32)
def test_wedge_zero_iff_rank_deficient(xi):
    n = np.linalg.norm(wedge(xi))
    rank = np.linalg.matrix_rank(xi, tol=1e-9)
    if rank == 2:
        assert n > 0
    # the three minors are the wedge components up to sign and order
    np.testing.assert_allclose(np.sort(np.abs(minors_32(xi))), np.sort(np.abs(wedge(xi))), atol=1e-9)


def test_parallel_columns_have_zero_wedge():
    c = np.array([0.7, -0.1, 2.3])
    assert np.all(wedge(np.stack([c, -4.0 * c], axis=-1)) == 0.0)


def test_frobenius_splits_over_columns():
    xi = np.random.default_rng(1).normal(size=(3, 2))
    zeta = np.array([0.5, 1.0, -2.0])
    assert frobenius(adjoin_column(xi, zeta)) ** 2 == pytest.approx(frobenius(xi) ** 2 + zeta @ zeta)


def test_extended_energy_rejects_invalid():
    with pytest.raises(ValueError):
        ExtendedEnergy(-1.0)
    with pytest.raises(ValueError):
        ExtendedEnergy(float("nan"))


def test_extended_energy_saturation():
    assert ExtendedEnergy(2.0) + INFINITY == math.inf
    assert (3.0 * INFINITY).is_finite is False
    assert ExtendedEnergy(1.5).is_finite
    with pytest.raises(ValueError):
        0.0 * INFINITY
    with pytest.raises(ValueError):
        INFINITY * 0
    with pytest.raises(ValueError):
        ExtendedEnergy(1.0) * -2.0


@given(energies, energies, energies)
def test_extended_addition_associative_commutative(a, b, c):
    x, y, z = ExtendedEnergy(a), ExtendedEnergy(b), ExtendedEnergy(c)
    assert x + y == y + x
    lhs, rhs = (x + y) + z, x + (y + z)
    if math.isinf(lhs):
        assert math.isinf(rhs)
    else:
        assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=50)
@given(energies, st.floats(1e-6, 1e6))
def test_positive_scaling(a, lam):
    v = lam * ExtendedEnergy(a)
    assert isinstance(v, ExtendedEnergy)
    assert math.isinf(v) == math.isinf(a)
