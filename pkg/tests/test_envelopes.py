import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from membrane_relax.densities import PlanarDensity, double_well, quadratic_density, rank_one_double_well
from membrane_relax.energy_models import base_density, default_energy, sample_nondegenerate
from membrane_relax.envelopes import (LaminateParams, LaminationCache, LaminationSearchConfig,
                                      MemoizationLimitError, SearchGrid, laminate_envelope,
                                      laminate_step, laminated_density, rank_one_midpoint_check,
                                      two_point_value)
from membrane_relax.tensor_core import outer_32

E12 = np.eye(3)[:, :2]
W0 = base_density(default_energy())
WELL = rank_one_double_well(E12, [1.0, 0.0], [1.0, 0.0, 0.0])
mat32 = arrays(np.float64, (3, 2), elements=st.floats(-2, 2, allow_nan=False))
unit_angle = st.floats(0, math.pi)
vec3 = arrays(np.float64, (3,), elements=st.floats(-2, 2, allow_nan=False))


def test_double_well_construction():
    A, B = WELL.wells
    np.testing.assert_allclose(B - A, outer_32([1.0, 0.0, 0.0], [1.0, 0.0]))
    assert float(WELL(A)) == 0.0 and float(WELL(B)) == 0.0
    assert float(WELL(E12)) == pytest.approx(0.25)


@given(mat32, unit_angle, vec3)
def test_degenerate_candidates_return_f(xi, angle, b):
    f = quadratic_density()
    assert float(two_point_value(f, xi, LaminateParams.from_angle(angle, b, 0.0))) == float(f(xi))
    assert float(two_point_value(f, xi, LaminateParams.from_angle(angle, np.zeros(3), 0.3))) == \
        pytest.approx(float(f(xi)), rel=1e-15)


def test_params_validation():
    with pytest.raises(ValueError):
        LaminateParams(np.array([1.0, 1.0]), np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        LaminateParams.from_angle(0.0, np.zeros(3), 1.5)
    with pytest.raises(ValueError):
        SearchGrid(0, 1, 1, 1)


@settings(max_examples=25, deadline=None)
@given(mat32)
def test_step_never_exceeds_f_quadratic(xi):
    f = quadratic_density(np.full((3, 2), 0.2))
    v, _ = laminate_step(f, xi)
    # convex: no split can lower the value
    assert float(v) == pytest.approx(float(f(xi)), abs=1e-12)
    assert float(v) <= float(f(xi))


@settings(max_examples=10, deadline=None)
@given(mat32)
def test_step_never_exceeds_f_double_well(xi):
    v, p = laminate_step(WELL, xi)
    assert float(v) <= float(WELL(xi))
    assert float(two_point_value(WELL, xi, p)) == pytest.approx(float(v), abs=1e-12)


def test_double_well_relaxes_at_midpoint():
    v, p = laminate_step(WELL, E12)
    assert float(v) <= 1e-3
    assert rank_one_midpoint_check(WELL, E12, LaminateParams.from_angle(0.0, [1.0, 0.0, 0.0], 0.5)) is False


def test_double_well_general_direction():
    a = np.array([0.6, 0.8])
    b = np.array([0.2, -0.5, 0.9])
    f = rank_one_double_well(E12, a, b)
    v, _ = laminate_step(f, E12, LaminationSearchConfig(extra_angles=(math.atan2(0.8, 0.6),), extra_b=(tuple(b),)))
    assert float(v) <= 1e-3
    # the default grid alone also finds the relaxation here
    assert float(laminate_step(f, E12)[0]) <= 1e-3


def test_envelope_depth_one_equals_step():
    xi = sample_nondegenerate(np.random.default_rng(0), 1)[0]
    assert float(laminate_envelope(W0, xi, 1)[0]) == float(laminate_step(W0, xi)[0])


def test_double_well_deeper_levels_stay_zero():
    vals = laminate_envelope(WELL, E12, 3)
    assert all(float(v) <= 1e-3 for v in vals)
    assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_barrier_monotone_and_below_w0():
    X = sample_nondegenerate(np.random.default_rng(11), 2)
    for xi in X:
        vals = [float(v) for v in laminate_envelope(W0, xi, 3)]
        assert vals[0] <= float(W0(xi)) + 1e-9
        assert all(b <= a + 1e-9 for a, b in zip(vals, vals[1:]))


def test_barrier_w0_is_not_rank_one_convex():
    # a strict decrease certifies a rank-one convexity violation of W0
    xi = sample_nondegenerate(np.random.default_rng(1), 1, scale=0.5)[0]
    v, p = laminate_step(W0, xi)
    assert float(v) < float(W0(xi)) - 1e-3
    assert rank_one_midpoint_check(W0, xi, p) is False


@settings(max_examples=30, deadline=None)
@given(mat32, unit_angle, vec3, st.floats(0, 1))
def test_convex_density_passes_midpoint_check(xi, angle, b, t):
    assert rank_one_midpoint_check(quadratic_density(), xi, LaminateParams.from_angle(angle, b, t))


def test_laminated_double_well_passes_midpoint_check():
    R3 = laminated_density(WELL, 3)
    rng = np.random.default_rng(2)
    for _ in range(100):
        p = LaminateParams.from_angle(rng.uniform(0, math.pi), rng.normal(size=3), rng.uniform())
        assert rank_one_midpoint_check(R3, E12, p, tol=1e-6)


def test_memo_bound_raises():
    cfg = LaminationSearchConfig(cache_size=1)
    cache = LaminationCache(1)
    R2 = laminated_density(WELL, 2, cfg, cache)
    R2.parent(E12)
    with pytest.raises(MemoizationLimitError):
        R2(E12)


def test_memo_hits_are_reused():
    cache = LaminationCache(10)
    R1 = laminated_density(WELL, 1, cache=cache)
    first = R1.step(E12)
    assert len(cache.table) == 1
    again = R1.step(E12 + 1e-12)
    assert len(cache.table) == 1
    assert again[1] is first[1]


def test_all_infinite_returns_infinity():
    f = PlanarDensity(lambda X: np.full(X.shape[0], np.inf))
    v, p = laminate_step(f, E12)
    assert math.isinf(v) and p.t == 0.0


def test_infinite_branches_are_discarded():
    # finite only in a ball around xi: every split leaves the ball on one side
    f = PlanarDensity(lambda X: np.where(np.sum((X - E12) ** 2, axis=(-2, -1)) < 1e-4, 1.0, np.inf))
    v, _ = laminate_step(f, E12)
    assert float(v) <= 1.0 and math.isfinite(v)


def test_laminated_values_obey_growth_bound():
    rng = np.random.default_rng(3)
    cal = sample_nondegenerate(rng, 6, scale=0.6)
    test = sample_nondegenerate(rng, 6, scale=0.6)
    R1 = laminated_density(W0, 1)

    def ratio(xi):
        return float(R1(xi)) / (1.0 + float(np.sum(xi * xi)))

    c = max(ratio(x) for x in cal)
    assert all(ratio(x) <= 2.0 * c for x in test)


def test_batch_lamination_below_parent():
    X = sample_nondegenerate(np.random.default_rng(4), 50)
    R1 = laminated_density(W0, 1)
    assert np.all(R1.batch(X) <= W0.batch(X))
    # the scalar search is at least as good as the vectorized inner grid
    for xi in X[:3]:
        assert float(R1(xi)) <= float(R1.batch(xi[None])[0]) + 1e-12


def test_double_well_with_separated_wells():
    f = double_well(np.zeros((3, 2)), np.full((3, 2), 1.0))
    # wells differ by a rank-2 matrix: midpoint value 1.5, laminates can still lower it
    mid = np.full((3, 2), 0.5)
    v, _ = laminate_step(f, mid)
    assert float(v) < float(f(mid))
