import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnibounds.linalg import (LinearOperator, NumericalBreakdown, RngStream, as_vector, cg_solve,
                               dense, gaussian_sample, shifted, symmetry_defect, weighted_sqnorm)


def spd(rng, d, cond=None):
    M = rng.normal((d, d))
    if cond is None:
        return M.T @ M + np.eye(d)
    q, _ = np.linalg.qr(M)
    return q @ np.diag(np.geomspace(1.0, cond, d)) @ q.T


def test_cg_diagonal():
    res = cg_solve(LinearOperator.diagonal([2.0, 4.0]), np.array([2.0, 4.0]), 0.01, 20)
    np.testing.assert_allclose(res.solution, [1.0, 1.0])
    assert res.residual_ratio <= 0.01


@pytest.mark.parametrize("d", [1, 3, 17])
def test_cg_identity_one_iteration(d):
    u = RngStream(d, 0).normal(d)
    res = cg_solve(LinearOperator.identity(d), u)
    np.testing.assert_array_equal(res.solution, u)
    assert res.iters == 1


def test_cg_matches_dense_solve():
    rng = RngStream(7, 1)
    A = spd(rng, 50)
    b = rng.normal(50)
    res = cg_solve(LinearOperator.from_matrix(A), b, rel_tol=1e-14, max_iter=500)
    x = np.linalg.solve(A, b)
    assert np.linalg.norm(res.solution - x) <= 1e-6 * np.linalg.norm(x)


def test_cg_best_iterate_on_max_iter():
    rng = RngStream(3, 0)
    A = spd(rng, 30, cond=1e4)
    b = rng.normal(30)
    res = cg_solve(LinearOperator.from_matrix(A), b, rel_tol=1e-12, max_iter=3)
    assert res.iters == 3
    r = A @ res.solution - b
    assert res.residual_ratio == pytest.approx(float(r @ r) / float(b @ b), rel=1e-9)


def test_cg_zero_rhs():
    res = cg_solve(LinearOperator.identity(4), np.zeros(4))
    assert res.iters == 0 and not res.solution.any()


def test_cg_errors():
    with pytest.raises(ValueError, match="dimension"):
        cg_solve(LinearOperator.identity(3), np.ones(4))
    with pytest.raises(NumericalBreakdown, match="numerical breakdown"):
        cg_solve(LinearOperator.identity(2), np.array([1.0, np.nan]))
    with pytest.raises(NumericalBreakdown, match="numerical breakdown"):
        cg_solve(LinearOperator(2, lambda v: v * np.inf), np.ones(2))
    with pytest.raises(ValueError):
        cg_solve(LinearOperator.identity(2), np.ones(2), rel_tol=1.0)


def test_cg_flags_indefinite():
    res = cg_solve(LinearOperator.diagonal([1.0, -1.0]), np.array([1.0, 2.0]), max_iter=5)
    assert res.indefinite


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), d=st.integers(2, 20), log_cond=st.floats(0, 4))
def test_cg_converges_within_tolerance(seed, d, log_cond):
    rng = RngStream(seed, 5)
    A = spd(rng, d, cond=10 ** log_cond)
    b = rng.normal(d)
    res = cg_solve(LinearOperator.from_matrix(A), b, rel_tol=0.01, max_iter=4 * d)
    r = A @ res.solution - b
    assert float(r @ r) <= 0.01 * float(b @ b) * (1 + 1e-9)


def test_gaussian_sample_moments():
    assert not gaussian_sample(RngStream(0), 4, 0.0).any()
    rng = RngStream(11, 2)
    X = np.stack([gaussian_sample(rng, 4, 1.0) for _ in range(100_000)])
    assert np.all(np.abs(X.mean(axis=0)) < 0.02)
    rng = RngStream(12, 2)
    X = np.stack([gaussian_sample(rng, 4, 2.0) for _ in range(100_000)])
    assert np.all(np.abs(X.var(axis=0) / 4.0 - 1.0) < 0.03)
    with pytest.raises(ValueError):
        gaussian_sample(rng, 2, -1.0)


def test_rng_reproducible_and_distinct():
    a, b, c = RngStream(5, 9), RngStream(5, 9), RngStream(5, 10)
    xa, xb, xc = a.normal(64), b.normal(64), c.normal(64)
    np.testing.assert_array_equal(xa, xb)
    assert not np.array_equal(xa, xc)
    assert not np.array_equal(RngStream(5, 9).fork(0).normal(8), RngStream(5, 9).fork(1).normal(8))
    np.testing.assert_array_equal(RngStream(1, 2).fork(3).normal(8), RngStream(1, 2).fork(3).normal(8))


def test_streams_uncorrelated():
    x = RngStream(0, 1).normal(200_000)
    y = RngStream(0, 2).normal(200_000)
    assert abs(np.corrcoef(x, y)[0, 1]) < 5 / np.sqrt(200_000)


def test_weighted_sqnorm():
    assert weighted_sqnorm(np.array([3.0, 4.0]), LinearOperator.identity(2)) == 25.0
    assert weighted_sqnorm(np.ones(2), LinearOperator.diagonal([1.0, 2.0])) == 3.0
    with pytest.raises(ValueError):
        weighted_sqnorm(np.ones(3), LinearOperator.identity(2))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32), d=st.integers(1, 12))
def test_weighted_sqnorm_dense(seed, d):
    rng = RngStream(seed)
    M = rng.normal((d, d))
    A = M + M.T
    x = rng.normal(d)
    want = float(x @ A @ x)
    got = weighted_sqnorm(x, LinearOperator.from_matrix(A))
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want), float(x @ np.abs(A) @ np.abs(x)))
    assert weighted_sqnorm(x, LinearOperator.identity(d)) == float(x @ x)


def test_operator_helpers():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    op = LinearOperator.from_matrix(A)
    np.testing.assert_allclose(dense(shifted(op, 1.5, 0.5)), 1.5 * np.eye(2) + 0.5 * A)
    assert symmetry_defect(op, RngStream(0)) < 1e-12
    assert symmetry_defect(LinearOperator.from_matrix([[0.0, 1.0], [0.0, 0.0]]), RngStream(0)) > 1e-3
    with pytest.raises(ValueError):
        op(np.ones(3))
    with pytest.raises(ValueError):
        as_vector([1.0, np.inf])
