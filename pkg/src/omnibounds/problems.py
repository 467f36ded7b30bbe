"""Losses, models and their constants.

A :class:`Problem` evaluates per-sample losses and gradients of a flat
parameter vector ``w`` against a :class:`~omnibounds.data.Dataset`. Classifiers
evaluate the capped cross-entropy (bounded, hence sub-Gaussian with
``R = cap / 2``) but train on the plain cross-entropy gradient.
"""
from __future__ import annotations

import math

import numpy as np

from .data import Dataset
from .linalg import RngStream

CAP_FACTOR = 12.0


def ce_cap(num_classes: int) -> float:
    return CAP_FACTOR * math.log(num_classes)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shift = logits - logits.max(axis=-1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))


def capped_cross_entropy(logits, label: int, num_classes: int) -> float:
    """``min(CE(logits, label), 12 ln num_classes)``."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    z = np.asarray(logits, dtype=np.float64)
    if z.shape != (num_classes,):
        raise ValueError(f"expected {num_classes} logits, got shape {z.shape}")
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range for {num_classes} classes")
    ce = -float(_log_softmax(z)[label])
    return min(max(ce, 0.0), ce_cap(num_classes))


class Problem:
    """Base class; subclasses implement ``losses`` and ``sample_grads``.

    Constants are ``None`` when unknown. Bounds that need ``R`` refuse to run
    without it.
    """

    dim: int
    R: float | None = None
    L: float | None = None
    D: float | None = None
    beta: float | None = None
    loss_cap: float | None = None
    has_exact_hvp = False
    has_projection = False

    def losses(self, w, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w, data: Dataset) -> float:
        return float(np.mean(self.losses(w, data)))

    def sample_grads(self, w, data: Dataset) -> np.ndarray:
        raise NotImplementedError

    def grad(self, w, data: Dataset) -> np.ndarray:
        return self.sample_grads(w, data).mean(axis=0)

    def train_grad(self, w, data: Dataset) -> np.ndarray:
        return self.grad(w, data)

    def hvp(self, w, data: Dataset, v) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no analytic HVP")

    def project(self, w) -> np.ndarray:
        return np.asarray(w, dtype=np.float64)

    def init_weights(self, rng: RngStream) -> np.ndarray:
        return np.zeros(self.dim)

    def describe(self) -> dict:
        return {"kind": type(self).__name__, "dim": self.dim}


class QuadraticProblem(Problem):
    """Data-independent ``l(w, z) = 1/2 (w - c)^T A (w - c)``."""

    has_exact_hvp = True

    def __init__(self, A, center=None, R: float | None = None):
        A = np.atleast_2d(np.array(A, dtype=np.float64))
        if A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        self.A = 0.5 * (A + A.T)
        self.dim = A.shape[0]
        self.center = np.zeros(self.dim) if center is None else np.asarray(center, dtype=np.float64)
        self.R = R
        eig = np.linalg.eigvalsh(self.A)
        self.beta = float(np.max(np.abs(eig)))

    def losses(self, w, data):
        u = np.asarray(w) - self.center
        return np.full(data.n, 0.5 * float(u @ self.A @ u))

    def grad(self, w, data):
        return self.A @ (np.asarray(w) - self.center)

    def sample_grads(self, w, data):
        return np.tile(self.grad(w, data), (data.n, 1))

    def hvp(self, w, data, v):
        return self.A @ np.asarray(v)

    def describe(self):
        return {"kind": "quadratic", "dim": self.dim}


class DiagonalQuadraticProblem(Problem):
    """``l(w, z) = 1/2 sum_j z_j w_j^2``: curvature carried by the sample itself."""

    has_exact_hvp = True

    def __init__(self, dim: int, R: float | None = None):
        self.dim = dim
        self.R = R

    def losses(self, w, data):
        return 0.5 * data.inputs @ (np.asarray(w) ** 2)

    def sample_grads(self, w, data):
        return data.inputs * np.asarray(w)[None, :]

    def grad(self, w, data):
        return data.inputs.mean(axis=0) * np.asarray(w)

    def hvp(self, w, data, v):
        return data.inputs.mean(axis=0) * np.asarray(v)


class SquaredDistanceProblem(Problem):
    """``l(w, z) = scale * |w - z|^2`` with ``z`` the input row.

    With ``radius`` set, the domain is the closed ball of that radius and
    :meth:`project` is the radial clip onto it.
    """

    has_exact_hvp = True

    def __init__(self, dim: int, scale: float = 0.5, radius: float | None = None,
                 R: float | None = None, L: float | None = None, D: float | None = None):
        self.dim = dim
        self.scale = float(scale)
        self.radius = radius
        self.has_projection = radius is not None
        self.R, self.L, self.D = R, L, D
        self.beta = 2.0 * self.scale

    def losses(self, w, data):
        diff = np.asarray(w)[None, :] - data.inputs
        return self.scale * np.einsum("ij,ij->i", diff, diff)

    def sample_grads(self, w, data):
        return 2.0 * self.scale * (np.asarray(w)[None, :] - data.inputs)

    def grad(self, w, data):
        return 2.0 * self.scale * (np.asarray(w) - data.inputs.mean(axis=0))

    def hvp(self, w, data, v):
        return 2.0 * self.scale * np.asarray(v, dtype=np.float64)

    def project(self, w):
        w = np.asarray(w, dtype=np.float64)
        if self.radius is None:
            return w
        norm = float(np.linalg.norm(w))
        if norm <= self.radius * (1.0 + 1e-14):  # keeps the clip idempotent under rounding
            return w
        return w * (self.radius / norm)

    def describe(self):
        return {"kind": "squared_distance", "dim": self.dim, "scale": self.scale,
                "radius": self.radius}


def clb_quadratic_problem(d: int, scale: float = 1.0) -> SquaredDistanceProblem:
    """``scale * |w - z|^2`` on the unit ball with ``z`` on the scaled hypercube.

    On the unit ball the gradient norm is at most ``4 * scale`` (so ``L = 4``
    at the default scale), the diameter is 2, and the loss lies in
    ``[0, 4 * scale]``.
    """
    if d < 1:
        raise ValueError("d must be positive")
    return SquaredDistanceProblem(
        d, scale=scale, radius=1.0, R=2.0 * scale, L=4.0 * scale, D=2.0
    )


def hypercube_samples(rng: RngStream, n: int, d: int) -> Dataset:
    """``n`` points uniform on ``{-1, +1}^d / sqrt(d)`` (unit norm)."""
    z = rng.rademacher((n, d)) / math.sqrt(d)
    return Dataset(z, np.zeros(n))


class LeastSquaresProblem(Problem):
    """``l(w, (x, y)) = 1/2 (x^T w - y)^2``."""

    has_exact_hvp = True

    def __init__(self, dim: int, beta: float | None = None, R: float | None = None):
        self.dim = dim
        self.beta = beta
        self.R = R

    def _residual(self, w, data):
        return data.inputs @ np.asarray(w) - data.labels

    def losses(self, w, data):
        return 0.5 * self._residual(w, data) ** 2

    def sample_grads(self, w, data):
        return self._residual(w, data)[:, None] * data.inputs

    def grad(self, w, data):
        return data.inputs.T @ self._residual(w, data) / data.n

    def hvp(self, w, data, v):
        return data.inputs.T @ (data.inputs @ np.asarray(v)) / data.n


class _Classifier(Problem):
    """Shared capped cross-entropy machinery for models producing logits."""

    num_classes: int

    def __init__(self, num_classes: int, capped: bool = True):
        if num_classes < 2:
            raise ValueError("need at least two classes")
        self.num_classes = num_classes
        self.capped = capped
        if capped:
            self.loss_cap = ce_cap(num_classes)
            self.R = self.loss_cap / 2.0

    def logits(self, w, x):
        raise NotImplementedError

    def _ce(self, logits, labels):
        logp = _log_softmax(logits)
        ce = -logp[np.arange(labels.shape[0]), labels]
        return np.maximum(ce, 0.0), np.exp(logp)

    def losses(self, w, data):
        ce, _ = self._ce(self.logits(w, data.inputs), data.labels)
        return np.minimum(ce, self.loss_cap) if self.capped else ce

    def _dlogits(self, logits, labels, capped: bool):
        ce, p = self._ce(logits, labels)
        d = p.copy()
        d[np.arange(labels.shape[0]), labels] -= 1.0
        if capped:
            d[ce >= self.loss_cap] = 0.0
        return d, p, ce

    def accuracy(self, w, data) -> float:
        return float(np.mean(self.logits(w, data.inputs).argmax(axis=1) == data.labels))


class SoftmaxRegression(_Classifier):
    """Multinomial logistic regression; parameters are ``[W (c x d_in), b (c)]``."""

    has_exact_hvp = True

    def __init__(self, d_in: int, num_classes: int, capped: bool = True):
        super().__init__(num_classes, capped)
        self.d_in = d_in
        self.dim = num_classes * d_in + num_classes

    def _unpack(self, w):
        w = np.asarray(w, dtype=np.float64)
        c, d = self.num_classes, self.d_in
        return w[: c * d].reshape(c, d), w[c * d:]

    def logits(self, w, x):
        W, b = self._unpack(w)
        return x @ W.T + b

    def _grad(self, w, data, capped):
        dl, _, _ = self._dlogits(self.logits(w, data.inputs), data.labels, capped)
        gW = dl.T @ data.inputs / data.n
        return np.concatenate([gW.ravel(), dl.mean(axis=0)])

    def grad(self, w, data):
        return self._grad(w, data, self.capped)

    def train_grad(self, w, data):
        return self._grad(w, data, False)

    def sample_grads(self, w, data):
        dl, _, _ = self._dlogits(self.logits(w, data.inputs), data.labels, self.capped)
        gW = np.einsum("ic,id->icd", dl, data.inputs).reshape(data.n, -1)
        return np.hstack([gW, dl])

    def hvp(self, w, data, v):
        logits = self.logits(w, data.inputs)
        ce, p = self._ce(logits, data.labels)
        VW, vb = self._unpack(v)
        u = data.inputs @ VW.T + vb
        s = p * u - p * np.sum(p * u, axis=1, keepdims=True)
        if self.capped:
            s[ce >= self.loss_cap] = 0.0
        hW = s.T @ data.inputs / data.n
        return np.concatenate([hW.ravel(), s.mean(axis=0)])

    def init_weights(self, rng):
        return 0.01 * rng.normal(self.dim)

    def describe(self):
        return {"kind": "logistic", "d_in": self.d_in, "classes": self.num_classes,
                "dim": self.dim, "capped": self.capped}


class MLP(_Classifier):
    """Two-layer perceptron; parameters are ``[W1 (m x d_in), b1, W2 (c x m), b2]``."""

    def __init__(self, d_in: int, width: int, num_classes: int,
                 activation: str = "tanh", capped: bool = True):
        super().__init__(num_classes, capped)
        if activation not in ("tanh", "relu"):
            raise ValueError(f"unknown activation {activation!r}")
        self.d_in, self.width, self.activation = d_in, width, activation
        self.dim = width * d_in + width + num_classes * width + num_classes

    def _unpack(self, w):
        w = np.asarray(w, dtype=np.float64)
        m, d, c = self.width, self.d_in, self.num_classes
        i = 0
        W1 = w[i:i + m * d].reshape(m, d); i += m * d
        b1 = w[i:i + m]; i += m
        W2 = w[i:i + c * m].reshape(c, m); i += c * m
        b2 = w[i:i + c]
        return W1, b1, W2, b2

    def _forward(self, w, x):
        W1, b1, W2, b2 = self._unpack(w)
        pre = x @ W1.T + b1
        h = np.tanh(pre) if self.activation == "tanh" else np.maximum(pre, 0.0)
        return pre, h, h @ W2.T + b2

    def _act_grad(self, pre, h):
        return 1.0 - h ** 2 if self.activation == "tanh" else (pre > 0).astype(np.float64)

    def logits(self, w, x):
        return self._forward(w, x)[2]

    def _backward(self, w, data, capped):
        pre, h, logits = self._forward(w, data.inputs)
        dl, _, _ = self._dlogits(logits, data.labels, capped)
        _, _, W2, _ = self._unpack(w)
        dpre = (dl @ W2) * self._act_grad(pre, h)
        return dl, dpre, h

    def _grad(self, w, data, capped):
        dl, dpre, h = self._backward(w, data, capped)
        n = data.n
        return np.concatenate([
            (dpre.T @ data.inputs / n).ravel(), dpre.mean(axis=0),
            (dl.T @ h / n).ravel(), dl.mean(axis=0),
        ])

    def grad(self, w, data):
        return self._grad(w, data, self.capped)

    def train_grad(self, w, data):
        return self._grad(w, data, False)

    def sample_grads(self, w, data):
        dl, dpre, h = self._backward(w, data, self.capped)
        n = data.n
        return np.hstack([
            np.einsum("im,id->imd", dpre, data.inputs).reshape(n, -1), dpre,
            np.einsum("ic,im->icm", dl, h).reshape(n, -1), dl,
        ])

    def init_weights(self, rng):
        a1 = 1.0 / math.sqrt(self.d_in)
        a2 = 1.0 / math.sqrt(self.width)
        m, d, c = self.width, self.d_in, self.num_classes
        return np.concatenate([
            rng.uniform(m * d, -a1, a1), rng.uniform(m, -a1, a1),
            rng.uniform(c * m, -a2, a2), rng.uniform(c, -a2, a2),
        ])

    def describe(self):
        return {"kind": "mlp", "d_in": self.d_in, "width": self.width,
                "classes": self.num_classes, "activation": self.activation,
                "dim": self.dim, "capped": self.capped}


def finite_difference_grad(problem: Problem, w, data: Dataset, step: float | None = None):
    """Central-difference gradient of the mean loss (test oracle)."""
    w = np.asarray(w, dtype=np.float64)
    h = 1e-4 * (1.0 + np.linalg.norm(w)) if step is None else step
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (problem.loss(w + e, data) - problem.loss(w - e, data)) / (2 * h)
    return g
