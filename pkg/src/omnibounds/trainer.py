"""SGD with momentum and projected GD, recording full trajectories."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, SplitPlan
from .linalg import RngStream, as_vector
from .problems import Problem


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class SGDConfig:
    lr: float | tuple = 0.05
    batch_size: int = 32
    steps: int = 100
    momentum: float = 0.9
    project: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        rates = self.schedule()
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise ValueError("learning rates must be finite and non-negative")

    def schedule(self) -> np.ndarray:
        if np.ndim(self.lr) == 0:
            return np.full(self.steps, float(self.lr))
        rates = np.asarray(self.lr, dtype=np.float64)
        if rates.shape != (self.steps,):
            raise ValueError(f"lr schedule has {rates.size} entries for {self.steps} steps")
        return rates


@dataclass(frozen=True)
class TrajectoryRecord:
    """``weights[t] = W_t`` for ``t = 0..T``; ``updates[t-1] = g_t = W_{t-1} - W_t``."""

    weights: np.ndarray
    updates: np.ndarray
    batches: np.ndarray
    seed: int
    stream: int
    split_id: int = 0

    @property
    def steps(self) -> int:
        return self.updates.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def w0(self) -> np.ndarray:
        return self.weights[0]

    @property
    def final(self) -> np.ndarray:
        return self.weights[-1]

    @property
    def delta(self) -> np.ndarray:
        """``Delta W_T = W_T - W_0``."""
        return self.weights[-1] - self.weights[0]

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.weights[:-1] - self.updates - self.weights[1:]), initial=0.0))


def _descend(problem, data, rates, w0, momentum, project, draw_batch):
    T = rates.shape[0]
    d = problem.dim
    weights = np.empty((T + 1, d))
    updates = np.empty((T, d))
    batches = []
    w = as_vector(w0, d).copy()
    if project:
        w = problem.project(w)
    weights[0] = w
    buf = np.zeros(d)
    for t in range(T):
        idx = draw_batch()
        batch = data if idx is None else data.subset(idx)
        grad = problem.train_grad(w, batch)
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged(t + 1, "gradient")
        with np.errstate(over="ignore", invalid="ignore"):
            buf = momentum * buf + grad
            candidate = w - rates[t] * buf
        if project:
            candidate = problem.project(candidate)
        if not np.all(np.isfinite(candidate)):
            raise TrainingDiverged(t + 1, "weights")
        g = w - candidate
        w = w - g  # recomputed so that W_t == W_{t-1} - g_t holds bitwise
        updates[t] = g
        weights[t + 1] = w
        batches.append(np.arange(data.n) if idx is None else idx)
    return weights, updates, np.asarray(batches, dtype=np.int64)


def run_sgd(problem: Problem, data: Dataset, config: SGDConfig, w0,
            rng: RngStream | None = None, index_map=None, split_id: int = 0) -> TrajectoryRecord:
    """Momentum SGD on ``data``; each step draws ``batch_size`` distinct rows.

    ``index_map`` translates row numbers of ``data`` into pool indices for the
    recorded batches.
    """
    if config.batch_size > data.n:
        raise ValueError(f"batch_size {config.batch_size} exceeds split size {data.n}")
    if config.project and not problem.has_projection:
        raise ValueError("projection requested but the problem has no domain projection")
    rng = RngStream(config.seed, split_id + 1) if rng is None else rng
    weights, updates, batches = _descend(
        problem, data, config.schedule(), w0, config.momentum, config.project,
        lambda: np.sort(rng.choice(data.n, config.batch_size)),
    )
    if index_map is not None:
        batches = np.asarray(index_map, dtype=np.int64)[batches]
    return TrajectoryRecord(weights, updates, batches, rng.seed, rng.stream, split_id)


def run_projected_gd(problem: Problem, data: Dataset, lr, steps: int, w0) -> TrajectoryRecord:
    """Full-batch projected (sub)gradient descent without momentum."""
    if not problem.has_projection or problem.L is None:
        raise ValueError("projected GD needs a problem with a projection and a Lipschitz constant")
    rates = SGDConfig(lr=lr, batch_size=1, steps=steps, momentum=0.0).schedule()
    weights, updates, batches = _descend(problem, data, rates, w0, 0.0, True, lambda: None)
    return TrajectoryRecord(weights, updates, batches, 0, 0, 0)


@dataclass(frozen=True)
class RunEnsemble:
    """k runs from a shared ``W_0`` on the disjoint splits of ``plan``."""

    records: tuple
    plan: SplitPlan
    problem: Problem
    pool: Dataset
    w0: np.ndarray
    config: SGDConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.records) < 2:
            raise ValueError("an ensemble needs k >= 2 runs")
        if len(self.records) != self.plan.k:
            raise ValueError("one record per split expected")
        steps = {r.steps for r in self.records}
        if len(steps) != 1:
            raise ValueError("all runs must share T")

    @property
    def k(self) -> int:
        return len(self.records)

    @property
    def steps(self) -> int:
        return self.records[0].steps

    @property
    def n(self) -> int:
        """Training-set size of a single run (smallest split)."""
        return min(len(s) for s in self.plan.splits)

    def split_data(self, i: int) -> Dataset:
        return self.pool.subset(self.plan.splits[i])

    def test_data(self) -> Dataset:
        if len(self.plan.test) == 0:
            raise ValueError("split plan has no test set")
        return self.pool.subset(self.plan.test)

    def validation_data(self) -> Dataset:
        if len(self.plan.validation) == 0:
            raise ValueError("split plan has no validation set")
        return self.pool.subset(self.plan.validation)

    def finals(self) -> np.ndarray:
        return np.stack([r.final for r in self.records])

    def deltas(self) -> np.ndarray:
        return np.stack([r.delta for r in self.records])

    def updates(self) -> np.ndarray:
        """Array of shape ``(k, T, d)``."""
        return np.stack([r.updates for r in self.records])


def run_ensemble(problem: Problem, pool: Dataset, plan: SplitPlan, config: SGDConfig,
                 init_seed: int = 0, w0=None, streams: Sequence[int] | None = None,
                 jobs: int = 1) -> RunEnsemble:
    """One SGD run per split, all from the same ``W_0``.

    Run ``i`` draws batches from ``RngStream(config.seed, streams[i])``; the
    default stream is ``i + 1``. Passing explicit streams keeps each record
    tied to its split when the split order changes.
    """
    if w0 is None:
        w0 = problem.init_weights(RngStream(init_seed, 0x1417))
    w0 = as_vector(w0, problem.dim)
    streams = list(range(1, plan.k + 1)) if streams is None else list(streams)
    if len(streams) != plan.k:
        raise ValueError("need one stream id per split")

    def one(i):
        idx = plan.splits[i]
        return run_sgd(problem, pool.subset(idx), config, w0,
                       rng=RngStream(config.seed, streams[i]), index_map=idx, split_id=i)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            records = tuple(ex.map(one, range(plan.k)))
    else:
        records = tuple(one(i) for i in range(plan.k))
    return RunEnsemble(records, plan, problem, pool, w0, config)
