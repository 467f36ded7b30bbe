"""Monte-Carlo checks of the technical lemmas on randomized sampler families."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import RngStream

TOL_SE = 4.0


@dataclass(frozen=True)
class Sampler:
    """``draw(rng, m)`` returns an ``(m, dim)`` array of i.i.d. draws."""

    name: str
    draw: Callable[[RngStream, int], np.ndarray]
    mean: np.ndarray | None = None
    second_moment: float | None = None  # E|X|^2

    def sample(self, rng: RngStream, m: int) -> np.ndarray:
        x = np.asarray(self.draw(rng, m), dtype=np.float64)
        x = x.reshape(m, -1)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"sampler {self.name} produced non-finite draws")
        return x


def _mean_se(x: np.ndarray):
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _atol(*arrays) -> float:
    return 1e-12 * (1.0 + max(float(np.max(np.abs(a), initial=0.0)) for a in arrays))


def check_declared_moments(sampler: Sampler, m: int, seed: int = 0) -> dict:
    X = sampler.sample(RngStream(seed, 0x4D4F4D), m)
    ok = True
    out = {"check": "moments", "family": sampler.name}
    if sampler.mean is not None:
        mu = np.asarray(sampler.mean, dtype=np.float64)
        se = X.std(axis=0, ddof=1) / math.sqrt(m)
        ok &= bool(np.all(np.abs(X.mean(axis=0) - mu) <= TOL_SE * se + _atol(X)))
    if sampler.second_moment is not None:
        mean, se = _mean_se(np.sum(X * X, axis=1))
        ok &= abs(mean - sampler.second_moment) <= TOL_SE * se + _atol(X)
    out["pass"] = bool(ok)
    return out


def _center(sampler: Sampler, X: np.ndarray) -> np.ndarray:
    return X.mean(axis=0) if sampler.mean is None else np.asarray(sampler.mean, dtype=np.float64)


def check_center_distance(sampler: Sampler, m: int = 100_000, seed: int = 0) -> dict:
    """``E|X - EX| <= E|X1 - X2|`` and ``E|X - EX|^2 = E|X1 - X2|^2 / 2`` up to noise."""
    rng = RngStream(seed, 0x43445354)
    X1 = sampler.sample(rng, m)
    X2 = sampler.sample(rng, m)
    mu = _center(sampler, X1)
    to_center = np.linalg.norm(X1 - mu, axis=1)
    pair = np.linalg.norm(X1 - X2, axis=1)
    tol = _atol(X1, X2)
    d1, se1 = _mean_se(to_center - pair)
    d2, se2 = _mean_se(to_center ** 2 - 0.5 * pair ** 2)
    first_ok = d1 <= TOL_SE * se1 + tol
    second_ok = abs(d2) <= TOL_SE * se2 + tol
    return {
        "check": "center_distance", "family": sampler.name,
        "lhs": float(to_center.mean()), "rhs": float(pair.mean()), "stderr": se1,
        "lhs_sq": float(np.mean(to_center ** 2)), "rhs_sq": float(0.5 * np.mean(pair ** 2)),
        "stderr_sq": se2, "pass": bool(first_ok and second_ok),
    }


class NotConvexError(ValueError):
    pass


def probe_convexity(f, sampler: Sampler, probes: int = 2000, seed: int = 0) -> None:
    rng = RngStream(seed, 0x43564558)
    A = sampler.sample(rng, probes)
    B = sampler.sample(rng, probes)
    fa, fb, fm = f(A), f(B), f(0.5 * (A + B))
    if np.any(np.minimum(fa, fb) < 0):
        raise NotConvexError("not convex: f must be non-negative")
    slack = 1e-10 * (1.0 + np.abs(fa) + np.abs(fb))
    if np.any(fm > 0.5 * (fa + fb) + slack):
        raise NotConvexError("not convex: midpoint inequality violated")


def check_convex_lemma(f, sampler: Sampler, m: int = 100_000, seed: int = 0) -> dict:
    """``E|f(EW) - f(W)| <= 2 E f(W)`` for non-negative convex ``f`` (vectorized over rows)."""
    probe_convexity(f, sampler, seed=seed)
    W = sampler.sample(RngStream(seed, 0x434F4E56), m)
    mu = _center(sampler, W)
    fw = f(W)
    f_mu = float(f(mu[None, :])[0])
    lhs = np.abs(f_mu - fw)
    diff, se = _mean_se(lhs - 2.0 * fw)
    return {
        "check": "convex", "family": sampler.name, "lhs": float(lhs.mean()),
        "rhs": float(2.0 * fw.mean()), "stderr": se,
        "pass": bool(diff <= TOL_SE * se + _atol(fw, lhs)),
    }


def check_key_lemma_gaussian(a: float, sigma_x: float, sigma: float) -> dict:
    """Scalar Gaussian channel ``aX + sigma N``: exact MI against the variance bound."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    snr = (a * sigma_x / sigma) ** 2
    mi = 0.5 * math.log1p(snr)
    bound = 0.5 * snr
    ratio = 1.0 if mi == 0.0 else bound / mi
    return {"check": "key_lemma", "mi_exact": mi, "variance_bound": bound,
            "gap": bound - mi, "ratio": ratio, "pass": bool(mi <= bound)}


def check_interchange(table, px=None) -> dict:
    """``min_a E_x f(x, a) >= E_x min_a f(x, a)`` on a finite ``f[x][a]`` table."""
    F = np.asarray(table, dtype=np.float64)
    if F.ndim != 2 or F.size == 0:
        raise ValueError("table must be a nonempty 2-D array")
    p = np.full(F.shape[0], 1.0 / F.shape[0]) if px is None else np.asarray(px, dtype=np.float64)
    if p.shape != (F.shape[0],) or np.any(p < 0) or not math.isclose(p.sum(), 1.0):
        raise ValueError("px must be a probability vector over rows")
    lhs = float(np.min(p @ F))
    rows = F.min(axis=1)
    rhs = float(p @ rows)
    common = bool(np.any(np.all(F[p > 0] == rows[p > 0, None], axis=0)))
    tol = 1e-12 * (1.0 + float(np.max(np.abs(F))))
    return {"check": "interchange", "lhs": lhs, "rhs": rhs,
            "equal": bool(abs(lhs - rhs) <= tol), "common_minimizer": common,
            "pass": bool(lhs >= rhs - tol)}


def default_families(seed: int = 0) -> list:
    """Twenty sampler families (Gaussians, mixtures, bounded and discrete laws)."""
    r = RngStream(seed, 0x46414D)
    fams = []

    def add(name, draw, mean=None, m2=None):
        fams.append(Sampler(name, draw, None if mean is None else np.asarray(mean, float), m2))

    for j, d in enumerate((1, 3, 8)):
        mu = r.normal(d)
        s = float(r.uniform(None, 0.5, 2.0))
        add(f"gaussian_d{d}", lambda g, m, mu=mu, s=s: mu + s * g.normal((m, mu.size)),
            mu, float(mu @ mu + s * s * mu.size))
    M = r.normal((4, 4))
    add("gaussian_correlated", lambda g, m: g.normal((m, 4)) @ M.T, np.zeros(4), float(np.sum(M * M)))
    for c in (2, 3):
        centers = 3.0 * r.normal((c, 2))
        add(f"mixture_{c}", lambda g, m, C=centers: C[g.integers(0, C.shape[0], size=m)] + g.normal((m, 2)),
            centers.mean(axis=0), float(np.mean(np.sum(centers ** 2, axis=1)) + 2.0))
    add("rademacher", lambda g, m: g.rademacher((m, 1)), [0.0], 1.0)
    add("rademacher_d5", lambda g, m: g.rademacher((m, 5)), np.zeros(5), 5.0)
    p = float(r.uniform(None, 0.1, 0.9))
    add("bernoulli", lambda g, m, p=p: (g.uniform((m, 1)) < p).astype(float), [p], p)
    grid = np.arange(-2, 3, dtype=float)
    add("uniform_grid", lambda g, m: grid[g.integers(0, 5, size=(m, 2))], np.zeros(2), 4.0)
    add("uniform_box", lambda g, m: g.uniform((m, 3), -1.0, 1.0), np.zeros(3), 1.0)

    def sphere(g, m, d=4):
        z = g.normal((m, d))
        return z / np.linalg.norm(z, axis=1, keepdims=True)

    add("uniform_sphere", sphere, np.zeros(4), 1.0)
    add("exponential", lambda g, m: g.generator.exponential(1.0, size=(m, 2)), np.ones(2), 4.0)
    lam = float(r.uniform(None, 0.5, 4.0))
    add("poisson", lambda g, m, lam=lam: g.generator.poisson(lam, size=(m, 1)).astype(float),
        [lam], lam + lam * lam)
    add("constant", lambda g, m: np.tile([0.3, -1.7], (m, 1)), [0.3, -1.7], 0.09 + 2.89)
    add("student_t5", lambda g, m: g.generator.standard_t(5, size=(m, 2)), np.zeros(2), 2 * 5 / 3)
    add("lognormal", lambda g, m: g.generator.lognormal(0.0, 0.5, size=(m, 1)),
        [math.exp(0.125)], math.exp(0.5))
    add("beta", lambda g, m: g.generator.beta(2.0, 5.0, size=(m, 3)), np.full(3, 2 / 7),
        3 * (10 / (49 * 8) + 4 / 49))
    add("sparse_discrete", lambda g, m: np.where(g.uniform((m, 3)) < 0.05, 10.0, 0.0),
        np.full(3, 0.5), 3 * 5.0)
    add("heteroscedastic", lambda g, m: (lambda s: s[:, None] * g.normal((m, 2)))(g.uniform(m, 0.1, 3.0)),
        np.zeros(2), 2 * (27 - 0.001) / (3 * 2.9))
    return fams


CONVEX_FUNCTIONS = {
    "sqnorm": lambda X: np.sum(X * X, axis=1),
    "l1": lambda X: np.sum(np.abs(X), axis=1),
    "hinge": lambda X: np.maximum(0.0, 1.0 + X[:, 0]),
    "softplus": lambda X: np.logaddexp(0.0, X.sum(axis=1)),
}


def interchange_fixtures(seed: int = 0) -> list:
    """Constructed tables with known equality status, plus random ones."""
    r = RngStream(seed, 0x494E54)
    xs, acts = np.array([0.0, 1.0]), np.array([0.0, 0.5, 1.0])
    tables = [
        ("quadratic_6cell", (xs[:, None] - acts[None, :]) ** 2, False),
        ("x_independent", np.tile(r.normal(4), (3, 1)), True),
        ("single_x", r.normal((1, 5)), True),
        ("shared_argmin", np.hstack([np.zeros((4, 1)), 1.0 + r.uniform((4, 3))]), True),
    ]
    for j in range(6):
        tables.append((f"random_{j}", r.normal((5, 4)), None))
    return tables


def run_lemma_suite(m: int = 100_000, seed: int = 0) -> list:
    """Every check on every family; one result dict per check."""
    rows = []
    for j, fam in enumerate(default_families(seed)):
        rows.append(check_declared_moments(fam, m, seed + j))
        rows.append(check_center_distance(fam, m, seed + j))
        name = list(CONVEX_FUNCTIONS)[j % len(CONVEX_FUNCTIONS)]
        res = check_convex_lemma(CONVEX_FUNCTIONS[name], fam, m, seed + j)
        res["family"] = f"{fam.name}/{name}"
        rows.append(res)
    for a in (0.0, 0.01, 0.5, 1.0, 3.0):
        for sx, s in ((1.0, 1.0), (2.0, 0.5), (0.3, 2.0)):
            res = check_key_lemma_gaussian(a, sx, s)
            res["family"] = f"a={a},sx={sx},s={s}"
            rows.append(res)
    for name, table, expect_equal in interchange_fixtures(seed):
        res = check_interchange(table)
        res["family"] = name
        if expect_equal is not None:
            res["pass"] = res["pass"] and res["equal"] == expect_equal
        res["pass"] = res["pass"] and res["equal"] == res["common_minimizer"]
        rows.append(res)
    return rows
