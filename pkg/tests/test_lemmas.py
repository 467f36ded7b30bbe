import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnibounds.lemmas import (NotConvexError, Sampler, check_center_distance, check_convex_lemma,
                               check_declared_moments, check_interchange, check_key_lemma_gaussian,
                               default_families, run_lemma_suite)

RADEMACHER = Sampler("rademacher", lambda g, m: g.rademacher((m, 1)), np.zeros(1), 1.0)
GAUSS3 = Sampler("gauss3", lambda g, m: g.normal((m, 3)), np.zeros(3), 3.0)
GAUSS1 = Sampler("gauss1", lambda g, m: g.normal((m, 1)), np.zeros(1), 1.0)
CONST = Sampler("const", lambda g, m: np.full((m, 2), 1.5), np.full(2, 1.5), 4.5)

SQNORM = lambda X: np.sum(X * X, axis=1)


def test_center_distance_two_point():
    r = check_center_distance(RADEMACHER, 10_000)
    assert r["lhs_sq"] == 1.0
    assert abs(r["rhs_sq"] - 1.0) <= 4 * r["stderr_sq"]
    assert r["pass"]


def test_center_distance_degenerate_and_gaussian():
    r = check_center_distance(CONST, 10_000)
    assert r["lhs"] == 0.0 and r["rhs"] == 0.0 and r["pass"]
    r = check_center_distance(GAUSS3, 100_000)
    assert r["lhs_sq"] == pytest.approx(3.0, rel=0.02) and r["rhs_sq"] == pytest.approx(3.0, rel=0.02)
    assert r["pass"]


def test_convex_lemma_examples():
    r = check_convex_lemma(SQNORM, GAUSS1, 100_000)
    # f(EW) = f(0) = 0, so the left side is E W^2 = 1
    assert abs(r["lhs"] - 1.0) <= 4 * math.sqrt(2.0 / 100_000)  # Var W^2 = 2
    assert r["rhs"] == pytest.approx(2 * r["lhs"])
    assert r["pass"]
    r = check_convex_lemma(lambda X: np.zeros(len(X)), GAUSS3, 10_000)
    assert r["lhs"] == 0.0 and r["rhs"] == 0.0 and r["pass"]
    r = check_convex_lemma(SQNORM, CONST, 10_000)
    assert r["lhs"] == 0.0 and r["rhs"] == pytest.approx(9.0) and r["pass"]


def test_convexity_probe_rejects():
    with pytest.raises(NotConvexError, match="not convex"):
        check_convex_lemma(lambda X: np.cos(X[:, 0]) + 1.0, GAUSS1, 10_000)
    with pytest.raises(NotConvexError, match="not convex"):
        check_convex_lemma(lambda X: X[:, 0], GAUSS1, 10_000)


def test_key_lemma_examples():
    r = check_key_lemma_gaussian(0.0, 1.0, 1.0)
    assert r["mi_exact"] == 0.0 == r["variance_bound"] and r["pass"]
    r = check_key_lemma_gaussian(1.0, 1.0, 1.0)
    assert r["mi_exact"] == pytest.approx(0.5 * math.log(2)) and r["variance_bound"] == 0.5 and r["pass"]
    ratios = [check_key_lemma_gaussian(a, 1.0, 1.0)["ratio"] for a in (1e-1, 1e-2, 1e-3)]
    assert all(x > y for x, y in zip(ratios, ratios[1:])) and ratios[-1] - 1 < 1e-6
    with pytest.raises(ValueError):
        check_key_lemma_gaussian(1.0, 1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-1e3, 1e3), sx=st.floats(1e-3, 1e3), s=st.floats(1e-3, 1e3))
def test_key_lemma_always_holds(a, sx, s):
    r = check_key_lemma_gaussian(a, sx, s)
    assert r["pass"] and r["gap"] >= 0


def test_interchange_examples():
    xs, acts = np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])
    r = check_interchange((xs[:, None] - acts[None, :]) ** 2)
    assert (r["lhs"], r["rhs"]) == (0.25, 0.0) and not r["equal"] and r["pass"]
    r = check_interchange(np.tile([3.0, 1.0, 2.0], (4, 1)))
    assert r["equal"] and r["common_minimizer"]
    r = check_interchange([[5.0, -1.0, 2.0]])
    assert r["equal"] and r["lhs"] == -1.0
    with pytest.raises(ValueError):
        check_interchange([[1.0, 2.0]], px=[0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5).flatmap(lambda nx: st.integers(1, 5).flatmap(
    lambda na: st.lists(st.lists(st.integers(-3, 3), min_size=na, max_size=na), min_size=nx, max_size=nx))))
def test_interchange_equality_iff_common_argmin(table):
    r = check_interchange(np.array(table, dtype=float))
    assert r["pass"]
    assert r["equal"] == r["common_minimizer"]


def test_declared_moments_detects_mismatch():
    assert check_declared_moments(GAUSS3, 100_000)["pass"]
    wrong = Sampler("wrong", GAUSS3.draw, np.full(3, 0.1), 3.0)
    assert not check_declared_moments(wrong, 100_000)["pass"]
    bad = Sampler("nan", lambda g, m: np.full((m, 1), np.nan))
    with pytest.raises(ValueError, match="non-finite"):
        bad.sample(None, 3)


def test_default_families_declared_moments():
    fams = default_families()
    assert len(fams) == 20
    for j, fam in enumerate(fams):
        assert check_declared_moments(fam, 100_000, j)["pass"], fam.name


def test_full_suite_passes():
    rows = run_lemma_suite()
    failed = [(r["check"], r["family"]) for r in rows if not r["pass"]]
    assert not failed
    assert {r["check"] for r in rows} == {"moments", "center_distance", "convex", "key_lemma", "interchange"}
