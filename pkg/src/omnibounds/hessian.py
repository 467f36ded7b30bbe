"""Hessian-vector products, Hutchinson traces and shifted inverse HVPs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .linalg import CGResult, LinearOperator, RngStream, cg_solve, shifted
from .problems import Problem

MAX_EXACT_DIM = 200


def fd_step(w) -> float:
    return 1e-4 * (1.0 + float(np.linalg.norm(w)))


class HvpOperator:
    """``v -> H(w) v`` for the mean loss of ``problem`` on ``data``.

    ``mode`` is ``"exact"`` (analytic, when the problem provides it), ``"fd"``
    (central differences of the gradient along ``v / |v|``) or ``"auto"``.
    """

    def __init__(self, problem: Problem, data: Dataset, w, mode: str = "auto",
                 step: float | None = None):
        if mode == "auto":
            mode = "exact" if problem.has_exact_hvp else "fd"
        if mode not in ("exact", "fd"):
            raise ValueError(f"unknown HVP mode {mode!r}")
        if mode == "exact" and not problem.has_exact_hvp:
            raise ValueError(f"{type(problem).__name__} has no exact HVP")
        self.problem = problem
        self.data = data
        self.w = np.array(w, dtype=np.float64)
        self.w.setflags(write=False)
        self.mode = mode
        self.dim = problem.dim
        self.step = fd_step(self.w) if step is None else step

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: operator has dim {self.dim}, vector {v.shape}")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            return np.zeros(self.dim)
        if self.mode == "exact":
            return self.problem.hvp(self.w, self.data, v)
        u = v / norm
        h = self.step
        gp = self.problem.grad(self.w + h * u, self.data)
        gm = self.problem.grad(self.w - h * u, self.data)
        return (gp - gm) * (norm / (2.0 * h))


def hvp(op, v) -> np.ndarray:
    return op(v)


@dataclass(frozen=True)
class TraceEstimate:
    value: float
    stderr: float
    probes: int

    @classmethod
    def from_samples(cls, samples) -> "TraceEstimate":
        s = np.asarray(samples, dtype=np.float64)
        if s.size < 2:
            raise ValueError("need at least two probes")
        return cls(float(s.mean()), float(s.std(ddof=1) / np.sqrt(s.size)), int(s.size))


def _probe(rng: RngStream, dim: int, dist: str) -> np.ndarray:
    if dist == "rademacher":
        return rng.rademacher(dim)
    if dist == "gaussian":
        return rng.normal(dim)
    raise ValueError(f"unknown probe distribution {dist!r}")


def hutchinson_samples(op, probes: int, rng: RngStream, dist: str = "rademacher") -> np.ndarray:
    out = np.empty(probes)
    for j in range(probes):
        z = _probe(rng, op.dim, dist)
        out[j] = z @ op(z)
    return out


def hutchinson_trace(op, probes: int, rng: RngStream, dist: str = "rademacher") -> TraceEstimate:
    """Unbiased estimate of ``tr(op)`` from ``probes`` random quadratic forms."""
    if probes < 2:
        raise ValueError("need at least two probes")
    return TraceEstimate.from_samples(hutchinson_samples(op, probes, rng, dist))


def delta_trace_ops(op_a, op_b, probes: int, rng: RngStream,
                    dist: str = "rademacher") -> TraceEstimate:
    """``tr(A - B)`` with each probe shared by both operators."""
    if op_a.dim != op_b.dim:
        raise ValueError("dimension mismatch")
    if probes < 2:
        raise ValueError("need at least two probes")
    out = np.empty(probes)
    for j in range(probes):
        z = _probe(rng, op_a.dim, dist)
        out[j] = z @ op_a(z) - z @ op_b(z)
    return TraceEstimate.from_samples(out)


def delta_trace(problem: Problem, train: Dataset, population: Dataset, w, probes: int,
                rng: RngStream, dist: str = "rademacher", mode: str = "auto") -> TraceEstimate:
    """``tr(H_train(w) - H_population(w))`` with shared probes."""
    if train.n == 0 or population.n == 0:
        raise ValueError("views must be nonempty")
    return delta_trace_ops(HvpOperator(problem, train, w, mode),
                           HvpOperator(problem, population, w, mode), probes, rng, dist)


def ihvp_shifted(H_pen, u, two_lambda_C: float, rel_tol: float = 0.01, max_iter: int = 20,
                 full_output: bool = False):
    """Solve ``(I + H_pen / two_lambda_C) v = u`` by CG."""
    if not two_lambda_C > 0:
        raise ValueError("two_lambda_C must be positive")
    system = shifted(H_pen, 1.0, 1.0 / two_lambda_C)
    res: CGResult = cg_solve(system, u, rel_tol=rel_tol, max_iter=max_iter)
    return res if full_output else res.solution


def exact_hessian(problem: Problem, data: Dataset, w, mode: str = "auto") -> np.ndarray:
    """Dense symmetrized Hessian, column by column (``d <= 200``)."""
    if problem.dim > MAX_EXACT_DIM:
        raise ValueError(f"d too large for a dense Hessian: {problem.dim} > {MAX_EXACT_DIM}")
    op = HvpOperator(problem, data, w, mode)
    eye = np.eye(problem.dim)
    H = np.column_stack([op(eye[:, j]) for j in range(problem.dim)])
    return 0.5 * (H + H.T)


def as_operator(H) -> LinearOperator:
    """Wrap a dense matrix; pass operators through."""
    if isinstance(H, np.ndarray):
        return LinearOperator.from_matrix(H)
    return H
