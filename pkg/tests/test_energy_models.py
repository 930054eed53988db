import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import brentq, minimize_scalar

from membrane_relax.energy_models import (DEGENERACY_THRESHOLD, DegenerateMatrixError, FiberSolverConfig,
                                          SampleSpec,
                                          base_density, check_density_properties, default_energy,
                                          fiber_minimizer, fiber_relax, fiber_relax_batch,
                                          fiber_relax_constrained, fiber_relax_grid_oracle,
                                          inverse_square_barrier, make_barrier_energy, normal_field,
                                          sample_nondegenerate, sample_rank_deficient,
                                          w0_growth_constant)
from membrane_relax.tensor_core import adjoin_column, det3, wedge

W = default_energy()
E12 = np.eye(3)[:, :2]
mat32 = arrays(np.float64, (3, 2), elements=st.floats(-3, 3, allow_nan=False))


def reduced_oracle(xi, j=None):
    # independent 1D check: bounded scalar minimization on a log scale
    n = np.linalg.norm(wedge(xi))
    xi2 = float(np.sum(xi * xi))

    def g(logs):
        s = math.exp(logs)
        return (1.0 / (s * n) - 1.0) ** 2 + xi2 + s * s

    lo = -12.0 if j is None else math.log(1.0 / (j * n))
    grid = np.linspace(lo, 4.0, 4001)
    k = int(np.argmin([g(x) for x in grid]))
    res = minimize_scalar(g, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, 4000)]), method="bounded",
                          options={"xatol": 1e-12})
    return min(res.fun, g(grid[k]))


def test_model_examples():
    assert float(W(np.eye(3))) == 3.0
    assert math.isinf(W(np.diag([-1.0, 1.0, 1.0])))
    assert float(W(np.diag([2.0, 1.0, 1.0]))) == pytest.approx(6.25, abs=1e-15)


def test_barrier_profile_properties():
    h = inverse_square_barrier()
    assert math.isinf(h(0.0)) and math.isinf(h(-2.0))
    t = np.logspace(-6, 6, 200)
    assert np.all(np.isfinite(h(t)))
    assert h(1e-8) > 1e15
    for delta in (0.1, 0.5, 1.0, 3.0):
        assert np.all(h(t[t >= delta]) <= h.r_delta(delta) + 1e-12)


def test_p_must_exceed_one():
    with pytest.raises(ValueError):
        make_barrier_energy(inverse_square_barrier(), 1.0)


def test_w0_canonical_value():
    s = brentq(lambda s: s ** 4 + s - 1.0, 0.1, 1.0)
    expected = (1.0 / s - 1.0) ** 2 + 2.0 + s * s
    v, zeta = fiber_minimizer(W, E12)
    assert float(v) == pytest.approx(expected, abs=1e-12)
    assert float(v) == pytest.approx(2.6694996282151955, abs=1e-12)
    np.testing.assert_allclose(zeta, [0.0, 0.0, s], atol=1e-7)


def test_grid_oracle_on_canonical_matrix():
    v, zeta = fiber_relax_grid_oracle(W, E12)
    assert v == pytest.approx(float(fiber_relax(W, E12)), abs=1e-4)
    assert v >= float(fiber_relax(W, E12)) - 1e-12


def test_degenerate_is_exactly_infinite():
    assert math.isinf(fiber_relax(W, np.stack([np.eye(3)[0]] * 2, axis=-1)))
    X = sample_rank_deficient(np.random.default_rng(2), 30)
    assert np.all(np.isinf(fiber_relax_batch(W, X)))
    with pytest.raises(DegenerateMatrixError):
        fiber_relax_constrained(W, X[0], 1)


@settings(max_examples=40, deadline=None)
@given(mat32)
def test_w0_matches_reduced_oracle(xi):
    n = np.linalg.norm(wedge(xi))
    if n < 0.05:
        return
    assert float(fiber_relax(W, xi)) == pytest.approx(reduced_oracle(xi), rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(mat32, arrays(np.float64, (3,), elements=st.floats(-3, 3, allow_nan=False)))
def test_w0_below_any_probe(xi, zeta):
    # below the degeneracy cutoff W0 is +inf by design
    if np.linalg.norm(wedge(xi)) < DEGENERACY_THRESHOLD:
        return
    probe = float(W(adjoin_column(xi, zeta)))
    assert float(fiber_relax(W, xi)) <= probe + 1e-12


@settings(max_examples=40, deadline=None)
@given(mat32)
def test_w0_coercive(xi):
    v = float(fiber_relax(W, xi))
    assert v >= float(np.sum(xi * xi)) - 1e-12


def test_batch_equals_scalar():
    X = sample_nondegenerate(np.random.default_rng(3), 25, scale=0.8)
    batch = fiber_relax_batch(W, X)
    # rows share a stopping rule in batch mode, so agreement is to rounding level
    np.testing.assert_allclose(batch, [float(fiber_relax(W, x)) for x in X], rtol=0, atol=1e-12)


def test_solver_accuracy_against_fine_config():
    fine = FiberSolverConfig(grid_points=400, stages=200, rel_width=1e-12, tol=1e-16)
    X = sample_nondegenerate(np.random.default_rng(4), 50, scale=1.0, min_wedge=0.05)
    np.testing.assert_allclose(fiber_relax_batch(W, X), fiber_relax_batch(W, X, fine), atol=1e-11)


def test_constrained_canonical_value_is_three():
    assert float(fiber_relax_constrained(W, E12, 1)) == pytest.approx(3.0, abs=1e-12)


def test_constrained_against_oracle_and_monotone():
    X = sample_nondegenerate(np.random.default_rng(6), 8)
    for xi in X:
        free = float(fiber_relax(W, xi))
        prev = math.inf
        for j in (1, 2, 5, 10, 100, 1000):
            v = float(fiber_relax_constrained(W, xi, j))
            assert v == pytest.approx(reduced_oracle(xi, j), rel=1e-9, abs=1e-9)
            assert v <= prev
            assert v >= free
            prev = v
        assert prev - free <= 1e-3


def test_normal_field_examples():
    np.testing.assert_array_equal(normal_field(E12), [0.0, 0.0, 1.0])
    xi = E12.copy()
    xi[:, 0] *= 2.0
    np.testing.assert_allclose(normal_field(xi), [0.0, 0.0, 0.5])
    X = sample_nondegenerate(np.random.default_rng(7), 20)
    dets = det3(adjoin_column(X, normal_field(X)))
    np.testing.assert_allclose(dets, 1.0, atol=1e-12)
    with pytest.raises(DegenerateMatrixError):
        normal_field(np.zeros((3, 2)))


def test_gradient_matches_finite_differences():
    f = base_density(W)
    rng = np.random.default_rng(8)
    X = sample_nondegenerate(rng, 5)
    G = f.grad(X)
    h = 1e-6
    for k in range(5):
        for i in range(3):
            for j in range(2):
                dx = np.zeros((3, 2))
                dx[i, j] = h
                fd = (float(f(X[k] + dx)) - float(f(X[k] - dx))) / (2 * h)
                assert G[k, i, j] == pytest.approx(fd, rel=1e-5, abs=1e-6)
    vals, G2 = f.value_and_grad(X)
    np.testing.assert_array_equal(G, G2)
    np.testing.assert_array_equal(vals, f.batch(X))


def test_density_properties_report():
    rep = check_density_properties(W, SampleSpec(n_samples=300, seed=1))
    assert rep.coercivity_margin >= 1.0
    assert rep.growth_violations[0.5] == 0
    assert all(v == 0 for v in rep.growth_violations.values())
    osc = [rep.continuity[r] for r in sorted(rep.continuity, reverse=True)]
    assert all(b <= a + 1e-12 for a, b in zip(osc, osc[1:]))
    assert osc[-1] < 1e-2


def test_growth_constant_is_valid():
    rng = np.random.default_rng(9)
    X = rng.uniform(-3, 3, size=(2000, 3, 2))
    d = np.linalg.norm(wedge(X), axis=-1)
    vals = fiber_relax_batch(W, X)
    norms2 = np.sum(X * X, axis=(-2, -1))
    for delta in (0.05, 0.2, 1.0):
        c = w0_growth_constant(W, delta)
        mask = d >= delta
        assert np.all(vals[mask] <= c * (1 + norms2[mask]))


def test_other_exponent():
    W3 = make_barrier_energy(inverse_square_barrier(), 3.0)
    xi = sample_nondegenerate(np.random.default_rng(10), 1)[0]
    n = np.linalg.norm(wedge(xi))
    xi2 = float(np.sum(xi * xi))
    s = np.logspace(-4, 2, 200001)
    brute = np.min((1 / (s * n) - 1) ** 2 + (xi2 + s * s) ** 1.5)
    v = float(fiber_relax(W3, xi))
    assert v <= brute + 1e-12
    assert v == pytest.approx(brute, rel=1e-6)
