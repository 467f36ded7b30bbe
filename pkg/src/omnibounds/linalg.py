"""Flat-vector linear algebra shared by every other module.

Vectors are plain 1-D ``float64`` numpy arrays. Operators are matrix-free:
anything with a ``dim`` attribute and a ``__call__(v) -> v`` works wherever a
``LinearOperator`` is expected.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

_MASK64 = (1 << 64) - 1


class NumericalBreakdown(ArithmeticError):
    """Raised when an iterative solve produces non-finite or degenerate quantities."""


def as_vector(x, dim: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


@dataclass(frozen=True)
class LinearOperator:
    """Symmetric matrix-free operator ``v -> A v`` on ``R^dim``."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: operator has dim {self.dim}, vector {v.shape}")
        return np.asarray(self.apply(v), dtype=np.float64)

    @classmethod
    def from_matrix(cls, A) -> "LinearOperator":
        A = np.array(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        A.setflags(write=False)
        return cls(A.shape[0], lambda v: A @ v)

    @classmethod
    def identity(cls, dim: int) -> "LinearOperator":
        return cls(dim, lambda v: v.copy())

    @classmethod
    def diagonal(cls, diag) -> "LinearOperator":
        diag = np.array(diag, dtype=np.float64)
        diag.setflags(write=False)
        return cls(diag.shape[0], lambda v: diag * v)

    @classmethod
    def zero(cls, dim: int) -> "LinearOperator":
        return cls(dim, lambda v: np.zeros_like(v))


def shifted(op, shift: float, scale: float = 1.0) -> LinearOperator:
    """``v -> shift * v + scale * op(v)``."""
    return LinearOperator(op.dim, lambda v: shift * v + scale * op(v))


def difference(a, b) -> LinearOperator:
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    return LinearOperator(a.dim, lambda v: a(v) - b(v))


def dense(op) -> np.ndarray:
    """Materialize ``op`` column by column (small dims only)."""
    eye = np.eye(op.dim)
    return np.column_stack([op(eye[:, j]) for j in range(op.dim)])


def symmetry_defect(op, rng: "RngStream", probes: int = 5) -> float:
    """Largest ``|<u, Av> - <v, Au>| / (|u| |v|)`` over random probe pairs."""
    worst = 0.0
    for _ in range(probes):
        u = rng.normal(op.dim)
        v = rng.normal(op.dim)
        gap = abs(float(u @ op(v)) - float(v @ op(u)))
        worst = max(worst, gap / (np.linalg.norm(u) * np.linalg.norm(v)))
    return worst


def weighted_sqnorm(x, op) -> float:
    """``x^T A x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (op.dim,):
        raise ValueError(f"dimension mismatch: operator has dim {op.dim}, vector {x.shape}")
    return float(x @ op(x))


class CGResult(NamedTuple):
    solution: np.ndarray
    residual_ratio: float
    iters: int
    indefinite: bool = False


def cg_solve(op, rhs, rel_tol: float = 0.01, max_iter: int = 20, x0=None) -> CGResult:
    """Conjugate gradient for ``op(x) = rhs``.

    Stops once ``|op(x) - rhs|^2 <= rel_tol * |rhs|^2`` (a test on the
    *squared* residual) or after ``max_iter`` iterations, in which case the
    iterate with the smallest residual is returned. ``residual_ratio`` is
    ``|r|^2 / |rhs|^2`` of the returned iterate.

    Non-positive curvature along a search direction does not abort the solve
    (positive definiteness is the caller's responsibility) but is flagged in
    ``indefinite``.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    b = np.asarray(rhs, dtype=np.float64)
    if b.shape != (op.dim,):
        raise ValueError(f"dimension mismatch: operator has dim {op.dim}, rhs {b.shape}")
    if not np.all(np.isfinite(b)):
        raise NumericalBreakdown("numerical breakdown: non-finite right-hand side")

    bb = float(b @ b)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    if bb == 0.0:
        return CGResult(np.zeros_like(b), 0.0, 0)

    r = b - op(x) if x0 is not None else b.copy()
    rr = float(r @ r)
    if rr <= rel_tol * bb:
        return CGResult(x, rr / bb, 0)
    p = r.copy()
    best_x, best_rr = x.copy(), rr
    indefinite = False
    it = 0
    while it < max_iter:
        it += 1
        Ap = op(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp == 0.0:
            raise NumericalBreakdown(
                f"numerical breakdown at iteration {it}: p^T A p = {pAp}, "
                f"residual ratio {best_rr / bb:.3e}"
            )
        if pAp < 0.0:
            indefinite = True
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise NumericalBreakdown(
                f"numerical breakdown at iteration {it}: non-finite residual"
            )
        if rr_new < best_rr:
            best_x, best_rr = x.copy(), rr_new
        if rr_new <= rel_tol * bb:
            return CGResult(x, rr_new / bb, it, indefinite)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(best_x, best_rr / bb, it, indefinite)


def _mix(a: int, b: int) -> int:
    # splitmix64 finalizer over the pair; used to derive child stream ids.
    z = (a * 0x9E3779B97F4A7C15 + b + 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by Philox with the 128-bit key ``seed | stream << 64``, so equal
    pairs reproduce bit-identical sequences and distinct stream ids give
    independent streams. A stream is meant to have a single owner; use
    :meth:`fork` to hand out children.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = self.seed | (self.stream << 64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def fork(self, child: int) -> "RngStream":
        return RngStream(self.seed, _mix(self.stream, int(child) & _MASK64))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def rademacher(self, size) -> np.ndarray:
        return self.generator.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0

    def uniform(self, size=None, low=0.0, high=1.0):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def gaussian_sample(rng: RngStream, dim: int, stddev: float) -> np.ndarray:
    """I.i.d. ``N(0, stddev^2)`` vector of length ``dim``."""
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    z = rng.normal(dim)  # drawn even when unused so the stream position is stddev-independent
    if stddev == 0:
        return np.zeros(dim)
    return stddev * z
