"""Flatness bound with the omniscient perturbation, plus the two baselines.

Data roles inside an ensemble: run ``i`` trains on split ``i``. The
validation view is used to *build* the perturbation (population gradient in
``J``, population Hessian in ``delta`` selectors). The test view stands in for
a fresh sample ``S'`` when *evaluating* the penalty, the flatness trace and the
measured gap.

Every bound is reported in the shape ``penalty + A / sigma + sigma^2 B``
minimized over ``sigma``, with ``trajectory = A / sigma*`` and
``flatness = sigma*^2 B``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .hessian import (HvpOperator, TraceEstimate, delta_trace_ops, exact_hessian,
                      hutchinson_trace, ihvp_shifted)
from .linalg import RngStream, difference, gaussian_sample
from .problems import Problem
from .trainer import RunEnsemble

SELECTORS = ("delta", "empirical")
_FLAT_STREAM = 0x464C4154
_EVAL_STREAM = 0x4556414C


@dataclass(frozen=True)
class PerturbationChoice:
    """Which curvature/gradient enters the perturbation.

    ``"empirical"`` means the training-split quantity alone, ``"delta"`` the
    training-minus-validation difference.
    """

    h_flat: str = "delta"
    h_pen: str = "empirical"
    j: str = "delta"
    lam: float = 1.0

    def __post_init__(self):
        for name in ("h_flat", "h_pen", "j"):
            if getattr(self, name) not in SELECTORS:
                raise ValueError(f"{name} must be one of {SELECTORS}")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")


@dataclass(frozen=True)
class EstimationConfig:
    """Numerical knobs. ``probes=0`` computes traces exactly from basis vectors."""

    probes: int = 64
    probe_dist: str = "rademacher"
    rel_tol: float = 0.01
    max_iter: int = 20
    hvp_mode: str = "auto"
    seed: int = 0
    R: float | None = None
    bessel: bool = False
    trace_abs: str = "each"
    population_hessian: bool = False

    def __post_init__(self):
        if self.probes == 1 or self.probes < 0:
            raise ValueError("probes must be 0 (exact) or >= 2")
        if self.trace_abs not in ("mean", "each"):
            raise ValueError("trace_abs must be 'mean' or 'each'")


@dataclass(frozen=True)
class OmniscientPerturbation:
    delta_g: np.ndarray
    C: float
    lam: float
    trace_flat: float
    residual_ratio: float
    iters: int
    indefinite: bool = False


@dataclass
class BoundReport:
    name: str
    trajectory: float
    penalty: float
    flatness: float
    sigma_star: float
    total: float
    measured_gap: float
    n: int
    T: int
    R: float
    k: int
    lam: float | None = None
    flags: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    residual: str = "unquantified"

    def recompute_total(self) -> float:
        return assemble_total(self.penalty, self.trajectory, self.flatness)

    def as_dict(self) -> dict:
        return asdict(self)


def assemble_total(penalty: float, trajectory: float, flatness: float) -> float:
    return (penalty + trajectory) + flatness


def resolve_R(problem: Problem, config: EstimationConfig) -> float:
    R = config.R if config.R is not None else problem.R
    if R is None:
        raise ValueError(
            f"{type(problem).__name__} has no sub-Gaussian scale; pass R explicitly"
        )
    if not R > 0:
        raise ValueError("R must be positive")
    return float(R)


def optimal_sigma(A: float, B: float):
    """Minimizer and minimum of ``A / sigma + sigma^2 B`` over ``sigma > 0``."""
    if not (A > 0 and B > 0):
        raise ValueError(f"optimal_sigma needs A > 0 and B > 0, got A={A}, B={B}")
    sigma = (A / (2.0 * B)) ** (1.0 / 3.0)
    value = 3.0 * (A / 2.0) ** (2.0 / 3.0) * B ** (1.0 / 3.0)
    return sigma, value


def sigma_template(A: float, B: float):
    """``(sigma*, A / sigma*, sigma*^2 B, degenerate)``; zero when A or B vanishes."""
    if A == 0.0 or B == 0.0:
        return 0.0, 0.0, 0.0, True
    sigma, _ = optimal_sigma(A, B)
    return sigma, A / sigma, sigma * sigma * B, False


def _as_ensemble_array(obj, attr):
    if isinstance(obj, RunEnsemble):
        return getattr(obj, attr)()
    return np.asarray(obj, dtype=np.float64)


def measured_gap(ensemble: RunEnsemble, test: Dataset | None = None) -> float:
    """Mean over runs of test loss minus own-split training loss at ``W_T``."""
    test = ensemble.test_data() if test is None else test
    gaps = [ensemble.problem.loss(r.final, test) - ensemble.problem.loss(r.final, ensemble.split_data(i))
            for i, r in enumerate(ensemble.records)]
    return float(np.mean(gaps))


def wang_raw(updates, bessel: bool = False) -> float:
    """``sum_t (1/k) sum_i |g_t^i - mean_i g_t^i|^2`` for updates of shape ``(k, T, d)``."""
    G = _as_ensemble_array(updates, "updates")
    k = G.shape[0]
    if k < 2:
        raise ValueError("need k >= 2 runs")
    dev = G - G.mean(axis=0, keepdims=True)
    raw = float(np.sum(dev * dev)) / k
    return raw * k / (k - 1) if bessel else raw


def wang_trajectory_term(updates, sigma: float = 1.0, bessel: bool = False) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return wang_raw(updates, bessel) / sigma ** 2


def leave_one_out_mean(deltas, i: int) -> np.ndarray:
    """Mean of ``Delta W_T`` over every run except ``i``."""
    D = _as_ensemble_array(deltas, "deltas")
    k = D.shape[0]
    if k < 2:
        raise ValueError("need k >= 2 runs")
    return np.delete(D, i, axis=0).mean(axis=0)


def omniscient_delta_g(d, J, H_pen, trace_flat: float, R: float, n: int, lam: float,
                       rel_tol: float = 0.01, max_iter: int = 20) -> OmniscientPerturbation:
    """``-(2 lam C I + H_pen)^{-1} (2 lam C d + J)`` with ``C`` from ``trace_flat``.

    ``d`` is the run's deviation ``Delta W_T - loo_mean``.
    """
    if trace_flat == 0.0 or not math.isfinite(trace_flat):
        raise ValueError(f"degenerate C: |tr H_flat| = {abs(trace_flat)}")
    C = 1.5 * (R * R / n * abs(trace_flat)) ** (1.0 / 3.0)
    s = 2.0 * lam * C
    d = np.asarray(d, dtype=np.float64)
    res = ihvp_shifted(H_pen, s * d + np.asarray(J, dtype=np.float64), s,
                       rel_tol=rel_tol, max_iter=max_iter, full_output=True)
    return OmniscientPerturbation(-res.solution / s, C, lam, float(trace_flat),
                                  res.residual_ratio, res.iters, res.indefinite)


def penalty_direct(problem: Problem, w, delta_g, train: Dataset, test: Dataset) -> float:
    """``[L_S(w + dG) - L_S(w)] - [L_test(w + dG) - L_test(w)]``."""
    w = np.asarray(w, dtype=np.float64)
    moved = w + np.asarray(delta_g, dtype=np.float64)
    return ((problem.loss(moved, train) - problem.loss(w, train))
            - (problem.loss(moved, test) - problem.loss(w, test)))


def trace_estimate(op_a, op_b, probes: int, rng: RngStream, dist: str = "rademacher") -> TraceEstimate:
    """``tr(A - B)`` (``B`` may be ``None``); exact over basis vectors when ``probes == 0``."""
    if probes == 0:
        total = 0.0
        for j in range(op_a.dim):
            e = np.zeros(op_a.dim)
            e[j] = 1.0
            total += op_a(e)[j] - (0.0 if op_b is None else op_b(e)[j])
        return TraceEstimate(float(total), 0.0, op_a.dim)
    if op_b is None:
        return hutchinson_trace(op_a, probes, rng, dist)
    return delta_trace_ops(op_a, op_b, probes, rng, dist)


def gaussian_penalty(problem: Problem, center, variance: float, train: Dataset,
                     test: Dataset | None = None, mode: str = "second_order", m: int = 1000,
                     rng: RngStream | None = None, probes: int = 0,
                     hvp_mode: str = "auto") -> TraceEstimate:
    """Expected loss change under ``N(0, variance I)`` noise, train minus test.

    ``mode="mc"`` averages ``m`` shared noise draws; ``"second_order"`` uses
    ``variance / 2`` times the (differenced) Hessian trace.
    """
    if variance < 0:
        raise ValueError("variance must be non-negative")
    center = np.asarray(center, dtype=np.float64)
    rng = RngStream(0, 0x47504E) if rng is None else rng
    if mode == "second_order":
        if variance == 0:
            return TraceEstimate(0.0, 0.0, max(probes, 2))
        op_a = HvpOperator(problem, train, center, hvp_mode)
        op_b = None if test is None else HvpOperator(problem, test, center, hvp_mode)
        tr = trace_estimate(op_a, op_b, probes, rng)
        return TraceEstimate(0.5 * variance * tr.value, 0.5 * variance * tr.stderr, tr.probes)
    if mode != "mc":
        raise ValueError(f"unknown penalty mode {mode!r}")
    if m < 2:
        raise ValueError("mc mode needs m >= 2")
    base_tr = problem.loss(center, train)
    base_te = problem.loss(center, test) if test is not None else 0.0
    sd = math.sqrt(variance)
    vals = np.empty(m)
    for j in range(m):
        xi = gaussian_sample(rng, problem.dim, sd)
        v = problem.loss(center + xi, train) - base_tr
        if test is not None:
            v -= problem.loss(center + xi, test) - base_te
        vals[j] = v
    return TraceEstimate.from_samples(vals)


def _run_rng(config: EstimationConfig, tag: int, i: int) -> RngStream:
    return RngStream(config.seed, tag).fork(i)


def _eval_trace(ensemble: RunEnsemble, config: EstimationConfig, i: int, w, train: Dataset,
                other: Dataset | None) -> TraceEstimate:
    p = ensemble.problem
    op_a = HvpOperator(p, train, w, config.hvp_mode)
    op_b = None if other is None else HvpOperator(p, other, w, config.hvp_mode)
    return trace_estimate(op_a, op_b, config.probes, _run_rng(config, _EVAL_STREAM, i),
                          config.probe_dist)


def _reduce_traces(values, how: str) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(abs(np.mean(v))) if how == "mean" else float(np.mean(np.abs(v)))


def _report(name, ensemble, config, R, penalty, A, B, gap, lam=None, flags=None, diag=None):
    sigma, traj, flat, degenerate = sigma_template(A, B)
    diag = dict(diag or {})
    diag.update(A=A, B=B)
    flags = dict(flags or {})
    flags["sigma_degenerate"] = degenerate
    return BoundReport(
        name=name, trajectory=traj, penalty=penalty, flatness=flat, sigma_star=sigma,
        total=assemble_total(penalty, traj, flat), measured_gap=gap, n=ensemble.n,
        T=ensemble.steps, R=R, k=ensemble.k, lam=lam, flags=flags, diagnostics=diag,
    )


def flatness_bound(ensemble: RunEnsemble, choice: PerturbationChoice = PerturbationChoice(),
                   config: EstimationConfig = EstimationConfig(), test: Dataset | None = None,
                   validation: Dataset | None = None,
                   force_zero_delta_g: bool = False) -> BoundReport:
    """Omniscient-trajectory flatness bound estimated from the ``k`` runs.

    The trajectory expectation is the plug-in mean of ``|d_i + dG_i|^2``,
    which equals ``|E d_i - F J_i|^2`` for the closed-form ``dG_i``.
    """
    problem = ensemble.problem
    R = resolve_R(problem, config)
    n, T = ensemble.n, ensemble.steps
    test = ensemble.test_data() if test is None else test
    if validation is None and not force_zero_delta_g:
        validation = ensemble.validation_data()
    deltas = ensemble.deltas()

    traj, traces, pens, Cs, resid, iters, indef = [], [], [], [], [], [], []
    for i, rec in enumerate(ensemble.records):
        d = deltas[i] - leave_one_out_mean(deltas, i)
        w = rec.final
        S = ensemble.split_data(i)
        if force_zero_delta_g:
            dG = np.zeros_like(w)
        else:
            H_S = HvpOperator(problem, S, w, config.hvp_mode)
            H_V = HvpOperator(problem, validation, w, config.hvp_mode)
            H_pen = H_S if choice.h_pen == "empirical" else difference(H_S, H_V)
            tr_flat = trace_estimate(H_S, None if choice.h_flat == "empirical" else H_V,
                                     config.probes, _run_rng(config, _FLAT_STREAM, i),
                                     config.probe_dist)
            J = problem.grad(w, S)
            if choice.j == "delta":
                J = J - problem.grad(w, validation)
            pert = omniscient_delta_g(d, J, H_pen, tr_flat.value, R, n, choice.lam,
                                      config.rel_tol, config.max_iter)
            dG = pert.delta_g
            Cs.append(pert.C)
            resid.append(pert.residual_ratio)
            iters.append(pert.iters)
            indef.append(pert.indefinite)
        u = d + dG
        traj.append(float(u @ u))
        traces.append(_eval_trace(ensemble, config, i, w + dG, S, test).value)
        pens.append(penalty_direct(problem, w, dG, S, test) if not force_zero_delta_g else 0.0)

    traj_mean = float(np.mean(traj))
    flat_mean = _reduce_traces(traces, config.trace_abs)
    penalty = float(np.mean(pens))
    A = math.sqrt(R * R / (n * T) * traj_mean)
    B = 0.5 * T * flat_mean
    diag = {
        "trajectory_expectation": traj_mean,
        "flatness_expectation": flat_mean,
        "middle_closed_form": 1.5 * (R * R / n * flat_mean * traj_mean) ** (1.0 / 3.0),
        "C": Cs, "cg_residual_ratio": resid, "cg_iters": iters, "cg_indefinite": indef,
    }
    flags = {"h_flat": choice.h_flat, "h_pen": choice.h_pen, "j": choice.j,
             "force_zero_delta_g": force_zero_delta_g, "trace_abs": config.trace_abs}
    return _report("flatness", ensemble, config, R, penalty, A, B,
                   measured_gap(ensemble, test), choice.lam, flags, diag)


def neu_isotropic_bound(ensemble: RunEnsemble, config: EstimationConfig = EstimationConfig(),
                        test: Dataset | None = None) -> BoundReport:
    """Isotropic terminal-variance bound (no perturbation).

    The variance uses leave-one-out centering. The flatness term is the
    second-order Gaussian penalty ``(sigma^2 T / 2) |tr H_S(W_T)|``, or
    ``|tr(H_S - H_test)(W_T)|`` with ``config.population_hessian``; the latter
    is exactly the flatness pipeline with the perturbation switched off.
    """
    problem = ensemble.problem
    R = resolve_R(problem, config)
    n, T = ensemble.n, ensemble.steps
    test = ensemble.test_data() if test is None else test
    deltas = ensemble.deltas()
    var, traces = [], []
    for i, rec in enumerate(ensemble.records):
        d = deltas[i] - leave_one_out_mean(deltas, i)
        var.append(float(d @ d))
        other = test if config.population_hessian else None
        traces.append(_eval_trace(ensemble, config, i, rec.final, ensemble.split_data(i), other).value)
    var_mean = float(np.mean(var))
    flat_mean = _reduce_traces(traces, config.trace_abs)
    A = math.sqrt(R * R / (n * T) * var_mean)
    B = 0.5 * T * flat_mean
    diag = {"trajectory_expectation": var_mean, "flatness_expectation": flat_mean}
    flags = {"population_hessian": config.population_hessian, "trace_abs": config.trace_abs}
    return _report("neu", ensemble, config, R, 0.0, A, B, measured_gap(ensemble, test),
                   flags=flags, diag=diag)


def wang_bound(ensemble: RunEnsemble, config: EstimationConfig = EstimationConfig(),
               test: Dataset | None = None) -> BoundReport:
    """Gradient-dispersion bound with second-order flatness ``(sigma^2 T / 2)|tr H_S|``.

    With ``config.population_hessian`` the trace is of ``H_S - H_test``.
    """
    problem = ensemble.problem
    R = resolve_R(problem, config)
    n, T = ensemble.n, ensemble.steps
    test = ensemble.test_data() if test is None else test
    raw = wang_raw(ensemble, config.bessel)
    traces = [
        _eval_trace(ensemble, config, i, rec.final, ensemble.split_data(i),
                    test if config.population_hessian else None).value
        for i, rec in enumerate(ensemble.records)
    ]
    flat_mean = _reduce_traces(traces, config.trace_abs)
    A = math.sqrt(R * R / n * raw)
    B = 0.5 * T * flat_mean
    diag = {"trajectory_expectation": raw, "flatness_expectation": flat_mean}
    flags = {"bessel": config.bessel, "population_hessian": config.population_hessian,
             "trace_abs": config.trace_abs}
    return _report("wang", ensemble, config, R, 0.0, A, B, measured_gap(ensemble, test),
                   flags=flags, diag=diag)


def _abs_matrix(M):
    vals, vecs = np.linalg.eigh(M)
    return (vecs * np.abs(vals)) @ vecs.T


def approximation_diagnostic(ensemble: RunEnsemble, choice: PerturbationChoice = PerturbationChoice(),
                             config: EstimationConfig = EstimationConfig()) -> dict:
    """Hessian-weighted-norm decomposition of the flatness bound (dense Hessians).

    Uses the large-``lambda`` approximation ``I - (I + H/2lamC)^{-1} ~ H/2lamC``
    and treats the validation view as the population. Diagnostic only.
    """
    problem = ensemble.problem
    R = resolve_R(problem, config)
    n = ensemble.n
    val = ensemble.validation_data()
    test = ensemble.test_data()
    deltas = ensemble.deltas()
    w_bar = ensemble.w0 + deltas.mean(axis=0)
    dH_bar = exact_hessian(problem, ensemble.split_data(0), w_bar) - exact_hessian(problem, val, w_bar)
    pen, traj, flat = [], [], []
    I = np.eye(problem.dim)
    for i, rec in enumerate(ensemble.records):
        S = ensemble.split_data(i)
        w = rec.final
        H_S = exact_hessian(problem, S, w)
        dH = H_S - exact_hessian(problem, val, w)
        H_pen = H_S if choice.h_pen == "empirical" else dH
        H_flat = H_S if choice.h_flat == "empirical" else dH
        C = 1.5 * (R * R / n * abs(np.trace(H_flat))) ** (1.0 / 3.0)
        s = 2.0 * choice.lam * C
        dev = deltas[i] - leave_one_out_mean(deltas, i)
        g_pop = problem.grad(w, val)
        absdH = _abs_matrix(dH)
        pen.append(dev @ (absdH - dH_bar) @ dev + g_pop @ (absdH / s ** 2 - I / s) @ g_pop)
        traj.append(dev @ (H_pen @ H_pen / s ** 2) @ dev + g_pop @ g_pop / s ** 2)
        J = problem.grad(w, S) - (g_pop if choice.j == "delta" else 0.0)
        dG = -np.linalg.solve(s * I + H_pen, s * dev + J)
        flat.append(abs(np.trace(exact_hessian(problem, S, w + dG) - exact_hessian(problem, test, w + dG))))
    middle = 1.5 * (2 * R * R / n * float(np.mean(flat)) * float(np.mean(traj))) ** (1.0 / 3.0)
    return {"penalty_part": float(np.mean(pen)), "trajectory_part": float(np.mean(traj)),
            "flatness_part": float(np.mean(flat)), "approximate_bound": float(np.mean(pen)) + middle}
