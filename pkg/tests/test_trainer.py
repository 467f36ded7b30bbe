import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnibounds.data import Dataset, partition, synth_gaussian_mixture
from omnibounds.linalg import RngStream
from omnibounds.problems import (Problem, QuadraticProblem, SoftmaxRegression,
                                 clb_quadratic_problem, hypercube_samples)
from omnibounds.storage import (ContainerError, decode_records, encode_records, load_container,
                                plan_from_json, plan_to_json, save_container)
from omnibounds.trainer import (SGDConfig, TrainingDiverged, run_ensemble, run_projected_gd,
                                run_sgd)


class ConstantGradient(Problem):
    def __init__(self, g):
        self.g = np.asarray(g, dtype=np.float64)
        self.dim = self.g.size

    def losses(self, w, data):
        return np.full(data.n, float(self.g @ w))

    def sample_grads(self, w, data):
        return np.tile(self.g, (data.n, 1))


def dummy(n=4, d=1):
    return Dataset(np.zeros((n, d)), np.zeros(n))


def test_single_gd_step():
    rec = run_sgd(QuadraticProblem(np.eye(1)), dummy(), SGDConfig(lr=0.5, batch_size=4, steps=1,
                                                                  momentum=0.0), np.array([2.0]))
    np.testing.assert_array_equal(rec.updates[0], [1.0])
    np.testing.assert_array_equal(rec.final, [1.0])


def test_momentum_geometric_series():
    g = np.array([1.0, -2.0])
    rec = run_sgd(ConstantGradient(g), dummy(), SGDConfig(lr=0.1, batch_size=2, steps=5,
                                                          momentum=0.9), np.zeros(2))
    for t in range(1, 6):
        np.testing.assert_allclose(rec.updates[t - 1], 0.1 * g * (1 - 0.9 ** t) / 0.1, rtol=1e-12)


def test_determinism_and_reconstruction():
    data = synth_gaussian_mixture(0, 40, 3, 3, 1.0)
    problem = SoftmaxRegression(3, 3)
    cfg = SGDConfig(lr=0.2, batch_size=8, steps=30, seed=4)
    a = run_sgd(problem, data, cfg, np.zeros(problem.dim))
    b = run_sgd(problem, data, cfg, np.zeros(problem.dim))
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.batches, b.batches)
    assert a.reconstruction_error() == 0.0
    np.testing.assert_array_equal(a.weights[:-1] - a.updates, a.weights[1:])
    assert all(len(set(row)) == 8 for row in a.batches)


def test_projected_gd_examples():
    p = clb_quadratic_problem(3)
    z = np.array([[1.0, 0.0, 0.0]])
    rec = run_projected_gd(p, Dataset(z, np.zeros(1)), 0.25, 1, np.zeros(3))
    np.testing.assert_allclose(rec.final, 0.5 * z[0])
    data = hypercube_samples(RngStream(1), 20, 3)
    rec = run_projected_gd(p, data, 0.7, 50, np.array([0.9, 0.0, 0.0]))
    assert np.linalg.norm(rec.weights, axis=1).max() <= 1 + 1e-12
    assert rec.reconstruction_error() == 0.0
    for lr in (1e-3, 1e-4):
        rec = run_projected_gd(p, data, lr, 20, np.zeros(3))
        assert np.linalg.norm(rec.delta) <= lr * 20 * 2 * p.L


def test_projected_gd_requires_projection():
    with pytest.raises(ValueError):
        run_projected_gd(QuadraticProblem(np.eye(2)), dummy(), 0.1, 2, np.zeros(2))


def test_quadratic_convergence():
    A = np.diag([1.0, 4.0, 9.0])
    problem = QuadraticProblem(A, center=np.array([1.0, -1.0, 2.0]))
    rec = run_sgd(problem, dummy(), SGDConfig(lr=1.9 / 9, batch_size=1, steps=200, momentum=0.0),
                  np.zeros(3))
    dist = np.linalg.norm(rec.weights - problem.center, axis=1)
    assert np.all(np.diff(dist[2:]) <= 1e-15)
    assert dist[-1] < 1e-6


def test_divergence_reports_step():
    problem = QuadraticProblem(np.eye(1))
    with pytest.raises(TrainingDiverged) as err:
        run_sgd(problem, dummy(), SGDConfig(lr=1e200, batch_size=1, steps=10, momentum=0.0),
                np.ones(1))
    assert err.value.step >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        SGDConfig(steps=0)
    with pytest.raises(ValueError):
        SGDConfig(lr=(0.1, 0.2), steps=3)
    with pytest.raises(ValueError):
        run_sgd(QuadraticProblem(np.eye(1)), dummy(2), SGDConfig(batch_size=3), np.zeros(1))


@pytest.fixture(scope="module")
def ensemble():
    pool = synth_gaussian_mixture(2, 90, 3, 3, 2.0)
    plan = partition(pool, 6, 0.2, 0.1, seed=2)
    return run_ensemble(SoftmaxRegression(3, 3), pool, plan, SGDConfig(lr=0.1, batch_size=5,
                                                                       steps=12, seed=9))


def test_ensemble_shape(ensemble):
    assert ensemble.k == 6
    for r in ensemble.records:
        np.testing.assert_array_equal(r.w0, ensemble.w0)
    supports = [set(np.unique(r.batches)) for r in ensemble.records]
    for i, s in enumerate(supports):
        assert s <= set(ensemble.plan.splits[i])
        for j in range(i):
            assert not s & supports[j]
    assert ensemble.updates().shape == (6, 12, ensemble.problem.dim)


def test_duplicated_split_same_stream():
    pool = synth_gaussian_mixture(0, 10, 2, 2, 1.0)
    from omnibounds.data import SplitPlan

    idx = np.arange(5)
    plan = SplitPlan((idx, idx), np.array([], dtype=int), np.array([], dtype=int), 0, 10)
    ens = run_ensemble(SoftmaxRegression(2, 2), pool, plan, SGDConfig(lr=0.1, batch_size=2, steps=1),
                       streams=[3, 3])
    np.testing.assert_array_equal(ens.records[0].weights, ens.records[1].weights)


def test_split_order_does_not_change_records(ensemble):
    order = [3, 0, 5, 1, 4, 2]
    plan2 = ensemble.plan.reordered(order)
    streams = [i + 1 for i in order]
    ens2 = run_ensemble(ensemble.problem, ensemble.pool, plan2, ensemble.config, w0=ensemble.w0,
                        streams=streams)
    for new_pos, old in enumerate(order):
        np.testing.assert_array_equal(ens2.records[new_pos].weights, ensemble.records[old].weights)


def test_parallel_matches_serial(ensemble):
    par = run_ensemble(ensemble.problem, ensemble.pool, ensemble.plan, ensemble.config, jobs=3)
    for a, b in zip(par.records, ensemble.records):
        np.testing.assert_array_equal(a.weights, b.weights)


def test_container_round_trip(ensemble, tmp_path):
    path = tmp_path / "run.otrj"
    save_container(path, ensemble.records, {"plan": plan_to_json(ensemble.plan)})
    records, meta = load_container(path)
    for a, b in zip(records, ensemble.records):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.updates, b.updates)
        np.testing.assert_array_equal(a.batches, b.batches)
        assert (a.seed, a.stream, a.split_id) == (b.seed, b.stream, b.split_id)
    plan = plan_from_json(meta["plan"])
    for s, t in zip(plan.splits, ensemble.plan.splits):
        np.testing.assert_array_equal(s, t)
    assert encode_records(records) == path.read_bytes()


def test_container_corruption(ensemble):
    blob = bytearray(encode_records(ensemble.records))
    for mutate, msg in [(lambda b: b.__setitem__(0, 0), "magic"),
                        (lambda b: b.__setitem__(200, b[200] ^ 1), "checksum"),
                        (lambda b: b.__delitem__(slice(-50, None)), None)]:
        bad = bytearray(blob)
        mutate(bad)
        with pytest.raises(ContainerError, match=msg):
            decode_records(bytes(bad))


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 4), T=st.integers(1, 6), d=st.integers(1, 5), b=st.integers(1, 3),
       seed=st.integers(0, 2**32))
def test_container_round_trip_random(k, T, d, b, seed):
    from omnibounds.trainer import TrajectoryRecord

    rng = RngStream(seed)
    recs = []
    for i in range(k):
        W = rng.normal((T + 1, d)) * 10.0 ** rng.integers(-300, 300)
        recs.append(TrajectoryRecord(W, W[:-1] - W[1:], rng.integers(0, 1 << 40, (T, b)),
                                     int(rng.integers(0, 1 << 62)), int(rng.integers(0, 1 << 62)), i))
    out = decode_records(encode_records(recs))
    for a, r in zip(out, recs):
        assert a.weights.tobytes() == r.weights.tobytes()
        assert a.updates.tobytes() == r.updates.tobytes()
        np.testing.assert_array_equal(a.batches, r.batches)
