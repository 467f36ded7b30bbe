"""Extension bounds: individual-sample, supersample, data-dependent prior,
projected GD on the CLB quadratic, and smooth-loss stability."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .data import Dataset
from .linalg import RngStream
from .problems import Problem, clb_quadratic_problem, hypercube_samples
from .trainer import SGDConfig, TrajectoryRecord, run_sgd

_U_STREAM = 0x55
_STAB_STREAM = 0x5354
_CLB_STREAM = 0x434C42


def _train(problem, data, config, w0):
    # A fresh stream per call keeps the batch randomness V fixed across re-runs.
    return run_sgd(problem, data, config, w0, rng=RngStream(config.seed, 1)).updates


def _deviation_term(updates, cond_mean, sigma, delta_g=None) -> float:
    dev = updates - cond_mean
    if delta_g is not None:
        dev = dev - delta_g
    return float(np.sum(dev * dev)) / sigma ** 2


def individual_trajectory_term(problem: Problem, data: Dataset, config: SGDConfig, w0,
                               sigma: float, resamples: int = 8,
                               sampler: Callable[[RngStream], tuple] | None = None,
                               support: Sequence[tuple] | None = None,
                               seed: int = 0, delta_g_hook=None) -> np.ndarray:
    """Per-index ``sum_t |g_t - E[g_t | Z_{-i}] - dg_t^i|^2 / sigma^2`` for one base run.

    The conditional mean re-runs training with row ``i`` replaced and the batch
    randomness fixed. ``support`` is a list of ``(x, y, prob)`` triples for an
    exact weighted enumeration; otherwise ``resamples`` draws of ``sampler``.
    ``delta_g_hook(i, updates, cond_mean)`` returns the ``(T, d)`` perturbation.
    """
    if sampler is None and support is None:
        raise ValueError("non-resampleable problem: supply a sampler or a finite support")
    if support is None and resamples < 2:
        raise ValueError("need at least two resamples")
    base = _train(problem, data, config, w0)
    rng = RngStream(seed, 0x494E44)
    out = np.empty(data.n)
    for i in range(data.n):
        if support is not None:
            cond = sum(p * _train(problem, data.replace_row(i, x, y), config, w0)
                       for x, y, p in support)
        else:
            acc = np.zeros_like(base)
            for _ in range(resamples):
                x, y = sampler(rng)
                acc += _train(problem, data.replace_row(i, x, y), config, w0)
            cond = acc / resamples
        dg = None if delta_g_hook is None else delta_g_hook(i, base, cond)
        out[i] = _deviation_term(base, cond, sigma, dg)
    return out


@dataclass(frozen=True)
class SupersampleLayout:
    """``2n`` rows; ``Z~_{i,u}`` is row ``2i + u`` and ``S = (Z~_{i,U_i})``."""

    pool: Dataset
    U: np.ndarray

    def __post_init__(self):
        if self.pool.n % 2 or self.pool.n < 2:
            raise ValueError("insufficient pool: need an even number (>= 2) of rows")
        U = np.asarray(self.U, dtype=np.int64)
        if U.shape != (self.pool.n // 2,) or np.any((U != 0) & (U != 1)):
            raise ValueError("U must hold n binary entries")
        object.__setattr__(self, "U", U)

    @property
    def n(self) -> int:
        return self.pool.n // 2

    def indices(self, U=None) -> np.ndarray:
        U = self.U if U is None else np.asarray(U)
        return 2 * np.arange(self.n) + U

    def training_set(self, U=None) -> Dataset:
        return self.pool.subset(self.indices(U))


def cmi_trajectory_term(problem: Problem, pool2n: Dataset, config: SGDConfig, w0,
                        sigma: float, resamples: int = 16, seed: int = 0, U=None,
                        exhaustive: bool = False, delta_g_hook=None) -> float:
    """``sum_t |g_t - E[g_t | S~] - dg_t|^2 / sigma^2`` for one draw of ``U``.

    The conditional mean averages re-runs over fresh selectors with ``S~`` and
    the batch randomness fixed, or over all ``2^n`` selectors when
    ``exhaustive``.
    """
    rng = RngStream(seed, _U_STREAM)
    n = pool2n.n // 2
    if U is None:
        U = rng.integers(0, 2, size=n)
    layout = SupersampleLayout(pool2n, U)
    base = _train(problem, layout.training_set(), config, w0)
    if exhaustive:
        if n > 16:
            raise ValueError("exhaustive enumeration limited to n <= 16")
        grid = ((np.arange(2 ** n)[:, None] >> np.arange(n)) & 1)
        cond = sum(_train(problem, layout.training_set(u), config, w0) for u in grid) / len(grid)
    else:
        if resamples < 2:
            raise ValueError("need at least two resamples")
        acc = np.zeros_like(base)
        for _ in range(resamples):
            acc += _train(problem, layout.training_set(rng.integers(0, 2, size=n)), config, w0)
        cond = acc / resamples
    dg = None if delta_g_hook is None else delta_g_hook(base, cond)
    return _deviation_term(base, cond, sigma, dg)


def clipped_mean(grads: np.ndarray, clip: float) -> np.ndarray:
    """Clip each row to norm ``<= clip``, then average; zero for no rows."""
    if grads.shape[0] == 0:
        return np.zeros(grads.shape[1])
    if math.isinf(clip):
        return grads.mean(axis=0)
    norms = np.linalg.norm(grads, axis=1)
    scale = np.minimum(1.0, clip / np.maximum(norms, np.finfo(float).tiny))
    return (grads * scale[:, None]).mean(axis=0)


@dataclass(frozen=True)
class IncoherenceRecord:
    U: np.ndarray
    xi: np.ndarray
    overlaps: np.ndarray


def gradient_incoherence(record: TrajectoryRecord, problem: Problem, data: Dataset, U,
                         clip: float, index_map=None) -> IncoherenceRecord:
    """``xi_t = (b - |U & B_t|) / b * (clipmean(B_t minus U) - clipmean(U))`` at ``W_{t-1}``.

    ``U`` and the batches are row numbers of ``data``; pass ``index_map`` (the
    split's pool indices) when the record stores pool indices.
    """
    if not clip > 0:
        raise ValueError("clip norm must be positive")
    U = np.asarray(U, dtype=np.int64)
    if np.unique(U).size != U.size:
        raise ValueError("U must not repeat indices")
    if U.size >= data.n:
        raise ValueError("need m < n")
    batches = record.batches
    if index_map is not None:
        lookup = {int(g): j for j, g in enumerate(np.asarray(index_map))}
        batches = np.vectorize(lookup.__getitem__, otypes=[np.int64])(batches)
    b = batches.shape[1]
    in_u = np.zeros(data.n, dtype=bool)
    in_u[U] = True
    xi = np.zeros((record.steps, record.dim))
    overlaps = np.empty(record.steps, dtype=np.int64)
    for t in range(record.steps):
        B = batches[t]
        hit = in_u[B]
        overlaps[t] = int(hit.sum())
        if overlaps[t] == b:
            continue
        w = record.weights[t]
        rest = clipped_mean(problem.sample_grads(w, data.subset(B[~hit])), clip)
        pred = clipped_mean(problem.sample_grads(w, data.subset(U)), clip) if U.size else 0.0
        xi[t] = (b - overlaps[t]) / b * (rest - pred)
    return IncoherenceRecord(U, xi, overlaps)


def ddp_inner_sum(records: Sequence[IncoherenceRecord], sigma: float, delta_g=None) -> float:
    """``sum_t E|xi_t - dg_t|^2 / sigma^2`` with the plug-in mean over records."""
    vals = []
    for j, rec in enumerate(records):
        dev = rec.xi if delta_g is None else rec.xi - delta_g[j]
        vals.append(float(np.sum(dev * dev)))
    return float(np.mean(vals)) / sigma ** 2


def ddp_term(records: Sequence[IncoherenceRecord], sigma: float, R: float, n: int,
             delta_g=None) -> float:
    m = records[0].U.size
    if m >= n:
        raise ValueError("need m < n")
    return math.sqrt(R * R / (n - m) * ddp_inner_sum(records, sigma, delta_g))


@dataclass(frozen=True)
class ClbRecord:
    gap: float
    gap_stderr: float
    centered: float
    centered_stderr: float
    bound: float
    trials: int
    L: float


def clb_theorem_bound(L: float, lr: float, T: int, n: int) -> float:
    return 8 * L * L * math.sqrt(T) * lr + 8 * L * L * T * lr / n


def _projected_gd_batch(Zbar, lr, T, s):
    # Rows of Zbar are per-run mean samples; the gradient of the mean loss is 2s(w - zbar).
    W = np.zeros_like(Zbar)
    for _ in range(T):
        W = W - lr * 2.0 * s * (W - Zbar)
        norms = np.linalg.norm(W, axis=-1, keepdims=True)
        W = np.where(norms > 1.0, W / np.maximum(norms, 1.0), W)
    return W


def clb_gd_experiment(d: int, n: int, lr: float, T: int, trials: int, seed: int = 0,
                      scale: float = 0.25) -> ClbRecord:
    """Projected GD from ``W_0 = 0`` on ``scale * |w - z|^2`` over the unit ball.

    The measured gap uses the exact population loss ``scale * (|w|^2 + 1)``.
    The centered-distance term pairs each run with ``n`` re-runs in which
    sample ``i`` is redrawn.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    problem = clb_quadratic_problem(d, scale)
    L = problem.L
    gaps = np.empty(trials)
    cents = np.empty(trials)
    for j in range(trials):
        rng = RngStream(seed, _CLB_STREAM).fork(j)
        Z = hypercube_samples(rng, n, d).inputs
        Zp = hypercube_samples(rng, n, d).inputs
        zbar = Z.mean(axis=0)
        bars = np.vstack([zbar, zbar + (Zp - Z) / n])
        W = _projected_gd_batch(bars, lr, T, scale)
        w = W[0]
        emp = scale * float(np.mean(np.sum((w - Z) ** 2, axis=1)))
        gaps[j] = scale * (float(w @ w) + 1.0) - emp
        cents[j] = 2.0 * L * float(np.mean(np.linalg.norm(W[1:] - w, axis=1)))
    se = lambda x: float(x.std(ddof=1) / math.sqrt(x.size))
    return ClbRecord(float(gaps.mean()), se(gaps), float(cents.mean()), se(cents),
                     clb_theorem_bound(L, lr, T, n), trials, L)


@dataclass(frozen=True)
class StabilityEstimate:
    value: float
    per_index: np.ndarray
    trials: int
    stderr: float


def accumulated_weight(record: TrajectoryRecord, rates) -> np.ndarray:
    """``sum_t eta_{t+1} W_t / sum_t eta_{t+1}`` over ``t = 0..T``; the last rate repeats."""
    eta = np.asarray(rates, dtype=np.float64)
    eta = np.append(eta, eta[-1])
    return (eta[:, None] * record.weights).sum(axis=0) / eta.sum()


def stability_streams(seed: int, trial: int) -> RngStream:
    return RngStream(seed, _STAB_STREAM).fork(trial)


def on_average_model_stability(problem: Problem, draw: Callable[[RngStream, int], Dataset],
                               n: int, config: SGDConfig, w0, trials: int, seed: int = 0,
                               output: str = "last") -> StabilityEstimate:
    """``E (1/n) sum_i |A(S, V) - A(S^(i), V)|^2`` with ``V`` shared in each pair.

    Trial ``j`` draws ``S`` then ``S'`` from ``stability_streams(seed, j)``.
    """
    if output not in ("last", "acc"):
        raise ValueError("output must be 'last' or 'acc'")
    rates = config.schedule()

    def out(data):
        rec = run_sgd(problem, data, config, w0, rng=RngStream(config.seed, 1))
        return rec.final if output == "last" else accumulated_weight(rec, rates)

    per = np.zeros((trials, n))
    for j in range(trials):
        rng = stability_streams(seed, j)
        S = draw(rng, n)
        Sp = draw(rng, n)
        w = out(S)
        for i in range(n):
            diff = w - out(S.replace_row(i, Sp.inputs[i], Sp.labels[i]))
            per[j, i] = float(diff @ diff)
    means = per.mean(axis=1)
    stderr = float(means.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return StabilityEstimate(float(means.mean()), per.mean(axis=0), trials, stderr)


def smooth_generalization_bound(beta: float, gamma2: float, emp_loss: float, eps_stab: float) -> float:
    """``(2 beta/gamma2 * E L_S + (beta + gamma2)/2 * eps) / (1 - beta/gamma2)``."""
    if not gamma2 > beta:
        raise ValueError("gamma2 must exceed beta")
    return (2 * beta / gamma2 * emp_loss + (beta + gamma2) / 2 * eps_stab) / (1 - beta / gamma2)


def optimize_gamma2(beta: float, emp_loss: float, eps_stab: float):
    """Minimize the smooth generalization bound over ``gamma2 > beta``; returns ``(gamma2, value)``."""
    if emp_loss == 0 and eps_stab == 0:
        return 2 * beta, 0.0
    f = lambda u: smooth_generalization_bound(beta, beta * (1 + math.exp(u)), emp_loss, eps_stab)
    res = minimize_scalar(f, bracket=(-5.0, 0.0, 5.0), method="golden",
                          options={"xtol": 1e-10})
    return beta * (1 + math.exp(res.x)), float(res.fun)


def excess_risk_bound(beta: float, gamma2: float, rates, n: int, wstar_sq: float,
                      pop_wstar: float = 0.0) -> float:
    """Excess risk of the accumulated weight of projected SGD.

    ``rates`` holds ``eta_1 .. eta_{T+1}`` (non-increasing, at most ``1/(2 beta)``).
    """
    eta = np.asarray(rates, dtype=np.float64)
    if not gamma2 > beta:
        raise ValueError("gamma2 must exceed beta")
    if np.any(eta > 1 / (2 * beta) + 1e-15) or np.any(np.diff(eta) > 0):
        raise ValueError("step sizes must be non-increasing and <= 1/(2 beta)")
    T = eta.size - 1
    total = eta.sum()
    head = 2 * beta / (gamma2 - beta) * pop_wstar
    csum = np.concatenate([[0.0], np.cumsum(eta ** 2)[:-1]])
    inner = eta[0] * wstar_sq + 2 * float(np.sum(eta * csum * pop_wstar)) / total
    gen = (1 + T / n) / n * 4 * math.e * gamma2 * beta * (beta + gamma2) / (gamma2 - beta) * inner
    opt = (gamma2 + beta) / (gamma2 - beta) * (
        (0.5 + beta * eta[0]) * wstar_sq + 2 * beta * float(np.sum(eta ** 2)) * pop_wstar) / total
    return head + gen + opt


def separable_excess_risk(beta: float, k: float, lr: float, T: int, n: int, wstar_sq: float) -> float:
    """Constant-step separable form with ``gamma2 = k beta``."""
    if not k > 1:
        raise ValueError("k must exceed 1")
    a = 4 * math.e * k * beta ** 2 * lr
    return (a / n + T / n ** 2 * a + (0.5 + beta * lr) / (T * lr)) * (k + 1) / (k - 1) * wstar_sq


def separable_excess_risk_optimal(beta: float, n: int, wstar_sq: float):
    """``inf_k (2 beta / n)(e k + 2 sqrt(e k))(k + 1)/(k - 1) |w*|^2``; returns ``(k, value)``."""
    f = lambda u: (2 * beta / n) * (math.e * (1 + math.exp(u)) + 2 * math.sqrt(math.e * (1 + math.exp(u)))) \
        * (2 + math.exp(u)) / math.exp(u) * wstar_sq
    res = minimize_scalar(f, bracket=(-3.0, 0.0, 3.0), method="golden", options={"xtol": 1e-10})
    return 1 + math.exp(res.x), float(res.fun)


def separable_scaling_value(beta: float, n: int, wstar_sq: float, lr: float | None = None) -> float:
    """Minimum of :func:`separable_excess_risk` over integer ``T >= 1`` and ``k > 1``."""
    lr = 1 / (2 * beta) if lr is None else lr

    def best_T(k):
        a = 4 * math.e * k * beta ** 2 * lr
        t = n * math.sqrt((0.5 + beta * lr) / (lr * a))
        cands = {max(1, math.floor(t)), max(1, math.ceil(t))}
        return min(separable_excess_risk(beta, k, lr, T, n, wstar_sq) for T in cands)

    res = minimize_scalar(lambda u: best_T(1 + math.exp(u)), bracket=(-3.0, 0.0, 3.0),
                          method="golden", options={"xtol": 1e-10})
    return float(res.fun)
