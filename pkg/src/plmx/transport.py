"""Empirical transport distances: exact 1D sorted transport, exact
assignment transport for equal-size uniform samples, synchronous-coupling
upper bounds, mean-discrepancy lower bounds, and the mixture disintegration
checker.

Sample vectors live in the discrete state space with norm
``sqrt(weight * sum(v**2))``; `weight` is the grid quadrature weight (1 for
scalar samples, h**dim for field states), so distances agree with the solver
norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog

ASSIGNMENT_CAP = 512


@dataclass(frozen=True)
class EmpiricalMeasure:
    """N equally weighted state samples; `weight` is the norm quadrature weight."""

    samples: np.ndarray
    weight: float = 1.0

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1:
            raise ValueError("samples must be a nonempty (N, m) array")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples contain non-finite entries")
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def _check_compatible(a: EmpiricalMeasure, b: EmpiricalMeasure) -> None:
    if a.dim != b.dim:
        raise ValueError(f"sample dimensions differ: {a.dim} vs {b.dim}")
    if a.weight != b.weight:
        raise ValueError("measures use different norm weights")


def _cost_matrix(a: EmpiricalMeasure, b: EmpiricalMeasure, r: float) -> np.ndarray:
    d2 = (
        np.sum(a.samples**2, axis=1)[:, None]
        + np.sum(b.samples**2, axis=1)[None, :]
        - 2.0 * a.samples @ b.samples.T
    )
    d = np.sqrt(a.weight * np.maximum(d2, 0.0))
    return d**r


def wasserstein_1d(a, b, r: float) -> float:
    """Exact order-r transport distance between two equal-size 1D samples.

    Sorting both samples gives the optimal (monotone) coupling on the line.
    """
    if not r >= 1:
        raise ValueError(f"order r must be >= 1, got {r}")
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.shape != b.shape or a.size == 0:
        raise ValueError("inputs must be nonempty samples of equal length")
    return float(np.mean(np.abs(a - b) ** r) ** (1.0 / r))


def wasserstein_assignment(
    a: EmpiricalMeasure, b: EmpiricalMeasure, r: float, cap: int = ASSIGNMENT_CAP
) -> float:
    """Exact order-r distance between equal-size uniform empirical measures,
    by minimum-cost perfect matching on the r-power cost matrix."""
    if not r >= 1:
        raise ValueError(f"order r must be >= 1, got {r}")
    _check_compatible(a, b)
    if a.n != b.n:
        raise ValueError(f"sample sizes differ: {a.n} vs {b.n}")
    if a.n > cap:
        raise ValueError(
            f"N={a.n} exceeds the assignment cap {cap}; use coupling_upper "
            "on synchronously generated samples instead"
        )
    cost = _cost_matrix(a, b, r)
    rows, cols = linear_sum_assignment(cost)
    return float((cost[rows, cols].sum() / a.n) ** (1.0 / r))


def coupling_upper(a: EmpiricalMeasure, b: EmpiricalMeasure, r: float) -> float:
    """Transport cost of the index pairing; valid upper bound when samples
    are paired by construction (synchronous coupling)."""
    if not r >= 1:
        raise ValueError(f"order r must be >= 1, got {r}")
    _check_compatible(a, b)
    if a.n != b.n:
        raise ValueError("paired samples required: sizes differ")
    d = np.sqrt(a.weight * np.sum((a.samples - b.samples) ** 2, axis=1))
    return float(np.mean(d**r) ** (1.0 / r))


def mean_lower(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Norm of the mean discrepancy; lower-bounds every order-r distance."""
    _check_compatible(a, b)
    diff = a.mean() - b.mean()
    return float(np.sqrt(a.weight * np.sum(diff**2)))


def _lp_transport_pow(
    x: np.ndarray,
    wx: np.ndarray,
    y: np.ndarray,
    wy: np.ndarray,
    r: float,
    weight: float,
) -> float:
    """Optimal r-power transport cost between weighted discrete measures,
    solved exactly as a linear program (min-cost flow on the bipartite graph)."""
    n, m = len(x), len(y)
    d2 = (
        np.sum(x**2, axis=1)[:, None]
        + np.sum(y**2, axis=1)[None, :]
        - 2.0 * x @ y.T
    )
    cost = np.sqrt(weight * np.maximum(d2, 0.0)) ** r
    rows = []
    cols = []
    for i in range(n):
        rows.extend([i] * m)
        cols.extend(range(i * m, (i + 1) * m))
    for j in range(m):
        rows.extend([n + j] * n)
        cols.extend(range(j, n * m, m))
    a_eq = sp.csr_matrix(
        (np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m)
    )
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=np.concatenate([wx, wy]),
        bounds=(0, None),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return max(float(res.fun), 0.0)


def wasserstein_pooled(
    a: EmpiricalMeasure,
    points: np.ndarray,
    point_weights: np.ndarray,
    r: float,
) -> float:
    """Exact order-r distance from a uniform empirical measure to an arbitrary
    weighted discrete measure."""
    wx = np.full(a.n, 1.0 / a.n)
    cost = _lp_transport_pow(a.samples, wx, points, point_weights, r, a.weight)
    return cost ** (1.0 / r)


@dataclass(frozen=True)
class DisintegrationReport:
    """Outcome of one mixture-inequality check.

    lhs/rhs are the distance to the mixture and the weighted mean of the
    component distances. holds is the reported inequality lhs <= rhs + tol.
    lhs_pow_r/rhs_pow_r carry the r-power form (lhs^r vs sum w_j W_j^r),
    which is the mixture-coupling bound and holds for every instance.
    """

    r: float
    lhs: float
    rhs: float
    holds: bool
    lhs_pow_r: float
    rhs_pow_r: float
    holds_pow_r: bool


def disintegration_check(
    x_measure: EmpiricalMeasure,
    component_measures: list[EmpiricalMeasure],
    mixture_weights,
    r: float,
    tol: float = 1e-12,
) -> DisintegrationReport:
    """Compare W_r(x, mixture) against sum_j w_j W_r(x, component_j), both
    computed exactly (LP transport on the pooled weighted support)."""
    if not r >= 1:
        raise ValueError(f"order r must be >= 1, got {r}")
    w = np.asarray(mixture_weights, dtype=float)
    if len(component_measures) != len(w):
        raise ValueError("one weight per component required")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"mixture weights must sum to 1, got {w.sum()!r}")
    for c in component_measures:
        _check_compatible(x_measure, c)
    pool = np.vstack([c.samples for c in component_measures])
    pool_w = np.concatenate(
        [np.full(c.n, wj / c.n) for c, wj in zip(component_measures, w)]
    )
    lhs = wasserstein_pooled(x_measure, pool, pool_w, r)
    per_comp = np.array(
        [
            wasserstein_pooled(x_measure, c.samples, np.full(c.n, 1.0 / c.n), r)
            for c in component_measures
        ]
    )
    rhs = float(np.dot(w, per_comp))
    rhs_pow = float(np.dot(w, per_comp**r))
    lhs_pow = lhs**r
    return DisintegrationReport(
        r=r,
        lhs=lhs,
        rhs=rhs,
        holds=bool(lhs <= rhs + tol),
        lhs_pow_r=lhs_pow,
        rhs_pow_r=rhs_pow,
        holds_pow_r=bool(lhs_pow <= rhs_pow + tol),
    )
