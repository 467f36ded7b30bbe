"""Reusable experiment cells: synthetic soundness runs and the estimator-bias study."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bounds import (EstimationConfig, PerturbationChoice, flatness_bound, neu_isotropic_bound,
                     wang_bound, wang_raw)
from .data import Dataset, SplitPlan, partition, synth_gaussian_mixture
from .linalg import RngStream
from .problems import MLP, LeastSquaresProblem, Problem, SoftmaxRegression
from .trainer import SGDConfig, run_ensemble, run_sgd


@dataclass(frozen=True)
class SoundnessConfig:
    model: str = "logistic"
    n_train: int = 1200
    n_test: int = 2000
    n_val: int = 2000
    k: int = 6
    steps: int = 500
    lr: float = 0.05
    batch_size: int = 32
    momentum: float = 0.9
    d_in: int = 10
    classes: int = 3
    separation: float = 2.0
    width: int = 16
    activation: str = "tanh"
    lambdas: tuple = (1.0, 1e3, 1e9)
    probes: int | None = None  # None: exact for logistic, 64 Hutchinson probes for the MLP
    choice: PerturbationChoice = field(default_factory=PerturbationChoice)


def build_problem(cfg: SoundnessConfig) -> Problem:
    if cfg.model == "logistic":
        return SoftmaxRegression(cfg.d_in, cfg.classes)
    if cfg.model == "mlp":
        return MLP(cfg.d_in, cfg.width, cfg.classes, cfg.activation)
    raise ValueError(f"unknown model {cfg.model!r}")


def build_pool(cfg: SoundnessConfig, seed: int):
    n = cfg.n_train + cfg.n_test + cfg.n_val
    pool = synth_gaussian_mixture(seed, n, cfg.d_in, cfg.classes, cfg.separation)
    plan = partition(pool, cfg.k, test_frac=cfg.n_test / n, val_frac=cfg.n_val / n, seed=seed)
    return pool, plan


def soundness_cell(cfg: SoundnessConfig, seed: int, bounds=("flatness", "wang", "neu")) -> list:
    """Train ``k`` runs for one seed and return one report per (bound, lambda)."""
    problem = build_problem(cfg)
    pool, plan = build_pool(cfg, seed)
    sgd = SGDConfig(lr=cfg.lr, batch_size=cfg.batch_size, steps=cfg.steps,
                    momentum=cfg.momentum, seed=seed)
    ens = run_ensemble(problem, pool, plan, sgd, init_seed=seed)
    probes = cfg.probes if cfg.probes is not None else (0 if cfg.model == "logistic" else 64)
    est = EstimationConfig(probes=probes, seed=seed)
    reports = []
    if "flatness" in bounds:
        for lam in cfg.lambdas:
            reports.append(flatness_bound(ens, replace(cfg.choice, lam=lam), est))
    if "wang" in bounds:
        reports.append(wang_bound(ens, est))
    if "neu" in bounds:
        reports.append(neu_isotropic_bound(ens, est))
    return reports


@dataclass(frozen=True)
class BiasStudy:
    estimates: np.ndarray
    population: float
    t_stat: float
    p_value: float


def trajectory_bias_study(pool_runs: int = 600, ensembles: int = 200, k: int = 3,
                          n: int = 20, n_val: int = 20, d: int = 3, steps: int = 30,
                          lr: float = 0.05, batch_size: int = 5, lam: float = 1.0,
                          noise: float = 0.5, seed: int = 0) -> BiasStudy:
    """Leave-one-out trajectory estimates on mini-ensembles vs. a large run pool.

    Every pooled run fits least squares (``x ~ N(0, I)``, ``y = x.w* + noise``)
    on a fresh sample with its own batch stream, from ``W_0 = 0``. The ground
    truth uses the (leave-one-out) pool mean of ``Delta W_T`` and the exact population gradient
    ``w - w*``. Each mini-ensemble draws ``k`` distinct pool runs plus a fresh
    validation set and is scored by :func:`flatness_bound`. CG is run to
    near-exactness in both so that only the statistical bias remains.
    """
    from scipy import stats

    from .bounds import omniscient_delta_g
    from .hessian import HvpOperator
    from .trainer import RunEnsemble

    rng = RngStream(seed, 0x42494153)
    w_star = rng.normal(d)
    problem = LeastSquaresProblem(d)
    cfg = SGDConfig(lr=lr, batch_size=batch_size, steps=steps, seed=seed)
    choice = PerturbationChoice(h_flat="empirical", h_pen="empirical", j="delta", lam=lam)
    est_cfg = EstimationConfig(probes=0, rel_tol=1e-12, max_iter=50, R=1.0, seed=seed)
    w0 = np.zeros(d)

    def sample(m):
        x = rng.normal((m, d))
        return Dataset(x, x @ w_star + noise * rng.normal(m))

    sets, records = [], []
    for j in range(pool_runs):
        data = sample(n)
        sets.append(data)
        records.append(run_sgd(problem, data, cfg, w0, rng=RngStream(seed, 1000 + j)))
    deltas = np.stack([r.delta for r in records])
    total = deltas.sum(axis=0)
    truth = np.empty(pool_runs)
    for j, rec in enumerate(records):
        # leave-one-out pool centering inflates the truth by N/(N-1): the conservative side
        mean_delta = (total - deltas[j]) / (pool_runs - 1)
        H = HvpOperator(problem, sets[j], rec.final)
        tr = float(np.trace(sets[j].inputs.T @ sets[j].inputs) / n)
        J = problem.grad(rec.final, sets[j]) - (rec.final - w_star)
        dG = omniscient_delta_g(deltas[j] - mean_delta, J, H, tr, 1.0, n, lam,
                                est_cfg.rel_tol, est_cfg.max_iter).delta_g
        u = deltas[j] - mean_delta + dG
        truth[j] = float(u @ u)
    population = float(truth.mean())

    pick = RngStream(seed, 0x5049434B)
    est = np.empty(ensembles)
    for e in range(ensembles):
        idx = pick.choice(pool_runs, k)
        parts = [sets[j] for j in idx] + [sample(n_val), sample(2)]
        pool = parts[0]
        for p in parts[1:]:
            pool = pool.concat(p)
        splits = tuple(np.arange(i * n, (i + 1) * n) for i in range(k))
        plan = SplitPlan(splits, np.arange(k * n + n_val, k * n + n_val + 2),
                         np.arange(k * n, k * n + n_val), seed, pool.n)
        ens = RunEnsemble(tuple(records[j] for j in idx), plan, problem, pool, w0, cfg)
        est[e] = flatness_bound(ens, choice, est_cfg).diagnostics["trajectory_expectation"]
    t, p = stats.ttest_1samp(est, population, alternative="greater")
    return BiasStudy(est, population, float(t), float(p))


def draw_line_data(rng: RngStream, n: int, slope: float = 1.5, noise: float = 0.3) -> Dataset:
    """``x ~ N(0, 1)``, ``y = slope x + noise N(0, 1)`` as a 1-D least-squares sample."""
    x = rng.normal(n)
    return Dataset(x[:, None], slope * x + noise * rng.normal(n))


def gd_line_final(x, y, lr: float, steps: int, w0: float = 0.0) -> float:
    """Closed-form GD endpoint on ``1/2 mean (w x - y)^2``: a linear recursion toward ``b/a``."""
    a = float(np.mean(x * x))
    b = float(np.mean(x * y))
    q = (1.0 - lr * a) ** steps
    return q * w0 + (b / a) * (1.0 - q)


def line_stability_closed_form(n: int, lr: float, steps: int, trials: int, seed: int = 0) -> float:
    """Stability of full-batch GD on :func:`draw_line_data`, replaying the estimator's draws."""
    from .extensions import stability_streams

    total = 0.0
    for j in range(trials):
        rng = stability_streams(seed, j)
        S = draw_line_data(rng, n)
        Sp = draw_line_data(rng, n)
        x, y = S.inputs[:, 0], S.labels
        w = gd_line_final(x, y, lr, steps)
        acc = 0.0
        for i in range(n):
            xi, yi = x.copy(), y.copy()
            xi[i], yi[i] = Sp.inputs[i, 0], Sp.labels[i]
            acc += (w - gd_line_final(xi, yi, lr, steps)) ** 2
        total += acc / n
    return total / trials


def line_stability_estimate(n: int, lr: float, steps: int, trials: int, seed: int = 0):
    from .extensions import on_average_model_stability

    cfg = SGDConfig(lr=lr, batch_size=n, steps=steps, momentum=0.0, seed=seed)
    return on_average_model_stability(LeastSquaresProblem(1), draw_line_data, n, cfg,
                                      np.zeros(1), trials, seed)


@dataclass(frozen=True)
class SweepPoint:
    batch_size: int
    gap: float
    totals: dict


def batch_size_sweep(cfg: SoundnessConfig, batch_sizes=(8, 16, 32, 64), seeds=range(5),
                     bounds=("flatness", "wang", "neu")) -> list:
    """Seed-averaged gap and bound totals at each batch size, learning rate held fixed."""
    points = []
    for b in batch_sizes:
        gaps, totals = [], {}
        for seed in seeds:
            for r in soundness_cell(replace(cfg, batch_size=b), seed, bounds):
                key = r.name if r.lam is None else f"{r.name}@{r.lam:g}"
                totals.setdefault(key, []).append(r.total)
                if key == "wang" or key.startswith(bounds[0]):
                    gaps.append(r.measured_gap)
        points.append(SweepPoint(b, float(np.mean(gaps)),
                                 {k: float(np.mean(v)) for k, v in totals.items()}))
    return points
