import math

import numpy as np
import pytest

from omnibounds.bounds import wang_raw
from omnibounds.data import Dataset
from omnibounds.experiments import line_stability_closed_form, line_stability_estimate
from omnibounds.extensions import (IncoherenceRecord, SupersampleLayout, clb_gd_experiment,
                                   clb_theorem_bound, clipped_mean, cmi_trajectory_term,
                                   ddp_inner_sum, ddp_term, excess_risk_bound,
                                   gradient_incoherence, individual_trajectory_term,
                                   on_average_model_stability, optimize_gamma2,
                                   separable_excess_risk, separable_excess_risk_optimal,
                                   separable_scaling_value, smooth_generalization_bound)
from omnibounds.linalg import RngStream
from omnibounds.problems import LeastSquaresProblem, QuadraticProblem, SquaredDistanceProblem
from omnibounds.trainer import SGDConfig, run_sgd

FULL = SGDConfig(lr=0.3, batch_size=2, steps=4, momentum=0.0)
BINARY = [(np.array([0.0]), 0.0, 0.5), (np.array([1.0]), 0.0, 0.5)]


def binary_sampler(rng):
    return np.array([float(rng.integers(0, 2))]), 0.0


def test_individual_zero_when_update_ignores_sample():
    data = Dataset(np.ones((2, 1)), np.zeros(2))
    vals = individual_trajectory_term(QuadraticProblem(np.eye(1)), data, FULL, np.ones(1), 1.0,
                                      support=BINARY)
    assert not vals.any()
    with pytest.raises(ValueError, match="non-resampleable"):
        individual_trajectory_term(QuadraticProblem(np.eye(1)), data, FULL, np.ones(1), 1.0)


def test_individual_enumeration_matches_monte_carlo():
    problem = SquaredDistanceProblem(1)
    data = Dataset(np.array([[1.0], [0.0]]), np.zeros(2))
    exact = individual_trajectory_term(problem, data, FULL, np.zeros(1), 0.5, support=BINARY)
    runs = np.array([individual_trajectory_term(problem, data, FULL, np.zeros(1), 0.5, resamples=400,
                                                sampler=binary_sampler, seed=s) for s in range(20)])
    se = runs.std(axis=0, ddof=1) / math.sqrt(len(runs))
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= 4 * se + 1e-12)


def test_individual_tower_property():
    # with n = 1 nothing is conditioned on, so the term is the unconditional variance
    problem = SquaredDistanceProblem(1)
    cfg = SGDConfig(lr=0.3, batch_size=1, steps=3, momentum=0.0)
    per_z, updates = [], []
    for x, _, _ in BINARY:
        data = Dataset(x[None, :], np.zeros(1))
        per_z.append(individual_trajectory_term(problem, data, cfg, np.zeros(1), 1.0, support=BINARY)[0])
        updates.append(run_sgd(problem, data, cfg, np.zeros(1)).updates)
    assert np.mean(per_z) == pytest.approx(wang_raw(np.stack(updates)), rel=1e-12)


def test_supersample_layout():
    pool = Dataset(np.arange(8.0)[:, None], np.zeros(8))
    lay = SupersampleLayout(pool, [1, 0, 0, 1])
    np.testing.assert_array_equal(lay.training_set().inputs[:, 0], [1, 2, 4, 7])
    with pytest.raises(ValueError, match="insufficient pool"):
        SupersampleLayout(Dataset(np.zeros((3, 1)), np.zeros(3)), [0])
    with pytest.raises(ValueError):
        SupersampleLayout(pool, [0, 2, 0, 1])


def test_cmi_exhaustive_matches_monte_carlo():
    problem = SquaredDistanceProblem(1)
    pool = Dataset(np.array([[0.0], [1.0]]), np.zeros(2))
    cfg = SGDConfig(lr=0.3, batch_size=1, steps=3, momentum=0.0)
    exact = cmi_trajectory_term(problem, pool, cfg, np.zeros(1), 1.0, U=[1], exhaustive=True)
    mc = np.array([cmi_trajectory_term(problem, pool, cfg, np.zeros(1), 1.0, U=[1], resamples=400, seed=s)
                   for s in range(20)])
    assert abs(mc.mean() - exact) <= 4 * mc.std(ddof=1) / math.sqrt(mc.size)
    assert exact > 0


def test_cmi_duplicated_columns_and_symmetry():
    problem = SquaredDistanceProblem(2)
    cfg = SGDConfig(lr=0.2, batch_size=2, steps=5, momentum=0.5)
    rng = RngStream(3)
    rows = rng.normal((3, 2))
    dup = Dataset(np.repeat(rows, 2, axis=0), np.zeros(6))
    assert cmi_trajectory_term(problem, dup, cfg, np.zeros(2), 1.0, seed=1) <= 1e-28
    pool = Dataset(rng.normal((6, 2)), np.zeros(6))
    swapped = pool.subset(np.array([1, 0, 3, 2, 5, 4]))
    U = np.array([0, 1, 1])
    a = cmi_trajectory_term(problem, pool, cfg, np.zeros(2), 1.0, U=U, exhaustive=True)
    b = cmi_trajectory_term(problem, swapped, cfg, np.zeros(2), 1.0, U=1 - U, exhaustive=True)
    assert a == pytest.approx(b, rel=1e-12)


@pytest.fixture(scope="module")
def ls_run():
    rng = RngStream(7)
    x = rng.normal((12, 3))
    data = Dataset(x, x @ np.array([1.0, -1.0, 0.5]))
    problem = LeastSquaresProblem(3)
    rec = run_sgd(problem, data.subset(np.arange(8)), SGDConfig(lr=0.05, batch_size=3, steps=10),
                  np.zeros(3))
    return problem, data, rec


def test_incoherence_full_overlap(ls_run):
    problem, data, rec = ls_run
    inc = gradient_incoherence(rec, problem, data, np.arange(8), clip=1.0)
    assert np.all(inc.overlaps == 3) and not inc.xi.any()


def test_incoherence_empty_u_and_no_clip(ls_run):
    problem, data, rec = ls_run
    inc = gradient_incoherence(rec, problem, data, np.array([], dtype=int), clip=math.inf)
    for t in range(rec.steps):
        want = problem.sample_grads(rec.weights[t], data.subset(rec.batches[t])).mean(axis=0)
        np.testing.assert_allclose(inc.xi[t], want, atol=1e-12)
    U = np.array([0, 9, 10])
    inf = gradient_incoherence(rec, problem, data, U, clip=math.inf)
    huge = gradient_incoherence(rec, problem, data, U, clip=1e12)
    np.testing.assert_allclose(huge.xi, inf.xi, atol=1e-12)
    for bad in (dict(U=[1, 1], clip=1.0), dict(U=np.arange(12), clip=1.0), dict(U=[0], clip=0.0)):
        with pytest.raises(ValueError):
            gradient_incoherence(rec, problem, data, **bad)


def test_clipped_mean():
    g = np.array([[3.0, 4.0], [0.3, 0.4]])
    np.testing.assert_allclose(clipped_mean(g, 1.0), [(0.6 + 0.3) / 2, (0.8 + 0.4) / 2])
    assert not clipped_mean(np.zeros((0, 2)), 1.0).any()


def test_ddp_examples():
    rng = RngStream(2)
    recs = [IncoherenceRecord(np.arange(2), rng.normal((4, 3)), np.zeros(4, dtype=int)) for _ in range(3)]
    zero = [IncoherenceRecord(r.U, np.zeros_like(r.xi), r.overlaps) for r in recs]
    assert ddp_term(zero, 1.0, 1.0, 10) == 0.0
    assert ddp_term(recs, 1.0, 1.0, 10, delta_g=[r.xi for r in recs]) == 0.0
    double = [IncoherenceRecord(r.U, 2 * r.xi, r.overlaps) for r in recs]
    assert ddp_inner_sum(double, 0.7) == pytest.approx(4 * ddp_inner_sum(recs, 0.7), rel=1e-14)
    assert ddp_term(recs, 1.0, 2.0, 10) == pytest.approx(math.sqrt(4.0 / 8 * ddp_inner_sum(recs, 1.0)))
    with pytest.raises(ValueError):
        ddp_term(recs, 1.0, 1.0, 2)


def test_clb_theorem_bound_example():
    assert clb_theorem_bound(1.0, 0.01, 100, 100) == pytest.approx(0.88)


def test_clb_no_training_limit():
    rec = clb_gd_experiment(5, 100, 0.0, 100, 30)
    assert abs(rec.gap) <= 1e-12 and rec.bound == 0.0 and rec.centered == 0.0


def test_clb_chain():
    rec = clb_gd_experiment(5, 100, 0.01, 100, 100, seed=1)
    assert rec.gap <= rec.bound
    assert rec.gap <= rec.centered + 4 * (rec.gap_stderr + rec.centered_stderr)
    assert rec.centered <= rec.bound + 4 * rec.centered_stderr
    assert rec.trials == 100 and rec.L == 1.0


def test_stability_examples():
    fixed = Dataset(np.array([[1.0], [2.0], [-1.0]]), np.array([1.0, 0.5, 0.0]))
    cfg = SGDConfig(lr=0.1, batch_size=3, steps=10, momentum=0.0)
    est = on_average_model_stability(LeastSquaresProblem(1), lambda rng, n: fixed, 3, cfg, np.zeros(1), 5)
    assert est.value == 0.0
    cfg0 = SGDConfig(lr=0.0, batch_size=3, steps=10)
    est = on_average_model_stability(LeastSquaresProblem(1),
                                     lambda rng, n: Dataset(rng.normal((n, 1)), rng.normal(n)),
                                     3, cfg0, np.zeros(1), 5)
    assert est.value == 0.0


def test_stability_matches_closed_form_recursion():
    est = line_stability_estimate(10, 0.1, 30, 8, seed=3)
    oracle = line_stability_closed_form(10, 0.1, 30, 8, seed=3)
    assert est.value == pytest.approx(oracle, rel=1e-8)
    assert est.value > 0 and est.per_index.shape == (10,)


def test_smooth_bound_values():
    assert smooth_generalization_bound(1.0, 2.0, 0.0, 0.0) == 0.0
    # (2*1/2*1 + (3/2)*0.1) / (1 - 1/2)
    assert smooth_generalization_bound(1.0, 2.0, 1.0, 0.1) == pytest.approx(2.3)
    with pytest.raises(ValueError):
        smooth_generalization_bound(1.0, 1.0, 1.0, 0.1)


def test_gamma2_optimum_beats_grid():
    g, v = optimize_gamma2(1.0, 1.0, 0.1)
    grid = [smooth_generalization_bound(1.0, 1.0 + math.exp(u), 1.0, 0.1) for u in np.linspace(-6, 6, 2001)]
    assert g > 1.0 and v <= min(grid) + 1e-12
    assert optimize_gamma2(1.0, 0.0, 0.0)[1] == 0.0


def test_separable_scaling_is_one_over_n():
    scaled = []
    for n in (100, 1000, 10000):
        v = separable_scaling_value(1.0, n, 2.0)
        _, closed = separable_excess_risk_optimal(1.0, n, 2.0)
        assert v == pytest.approx(closed, rel=0.01)
        scaled.append(v * n / 2.0)
    assert max(scaled) / min(scaled) - 1 <= 0.01
    with pytest.raises(ValueError):
        separable_excess_risk(1.0, 1.0, 0.5, 10, 100, 1.0)


def test_excess_risk_validation():
    assert excess_risk_bound(1.0, 2.0, [0.5] * 11, 100, 1.0) > 0
    with pytest.raises(ValueError):
        excess_risk_bound(1.0, 2.0, [0.6] * 5, 100, 1.0)
    with pytest.raises(ValueError):
        excess_risk_bound(1.0, 2.0, [0.1, 0.2], 100, 1.0)
