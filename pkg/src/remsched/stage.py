"""One-stage soft-constraint problem: cost of a symmetric threshold and its optimum."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sources import SourceModel

ROOT_XTOL = 1e-13
MAX_ITERATIONS = 200
EPS = np.finfo(float).eps


class BracketError(RuntimeError):
    """Threshold iteration failed; signals an inconsistent source model."""


@dataclass(frozen=True)
class StageProblem:
    source: SourceModel
    gamma: float  # SNR, transmit power over noise variance
    comm_cost: float = 0.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.comm_cost >= 0:
            raise ValueError(f"comm_cost must be >= 0, got {self.comm_cost}")

    def with_cost(self, comm_cost: float) -> "StageProblem":
        return StageProblem(self.source, self.gamma, comm_cost)


@dataclass(frozen=True)
class ThresholdSolution:
    beta_star: float
    cost_at_optimum: float
    boundary_clamped: bool
    residual: float  # fixed-point residual at beta_star (0 when clamped)


def one_stage_cost(problem: StageProblem, beta):
    """Expected c*U + (X - Xhat)^2 under the symmetric threshold ``beta``.

    Thresholds at or beyond the support edge mean "never transmit" and give
    Var(X).  Zero-mass regions contribute nothing.  Works elementwise on
    arrays of thresholds.
    """
    src = problem.source
    beta = np.minimum(np.asarray(beta, float), src.upper)
    mass_in, mean_in, var_in = src.region_moments(0.0, beta)
    mass_out, _, var_out = src.region_moments(beta, math.inf)
    silent = 2.0 * mass_in * (var_in + mean_in**2)
    sent = 2.0 * mass_out * (var_out / (problem.gamma + 1.0) + problem.comm_cost)
    return silent + sent


def fixed_point_residual(problem: StageProblem, beta):
    """beta^2 - G_X(beta)^2 / (gamma + 1) - c; increasing in beta, zero at the optimum."""
    g = problem.source.gx(beta)
    return np.asarray(beta, float) ** 2 - g * g / (problem.gamma + 1.0) - problem.comm_cost


def cost_derivative(problem: StageProblem, beta):
    """dJ/dbeta = 2 p(beta) * fixed_point_residual(beta)."""
    return 2.0 * problem.source.pdf(beta) * fixed_point_residual(problem, beta)


def _residual_slope(problem: StageProblem, beta, g):
    # d/dbeta of the residual; uses G'(beta) = p(beta) G(beta) / P(X > beta) - 1
    src = problem.source
    tail = np.asarray(src.tail_prob(beta), float)
    with np.errstate(divide="ignore", invalid="ignore"):
        dg = np.where(tail > 0, src.pdf(beta) * g / tail - 1.0, -1.0)
    return 2.0 * beta - 2.0 * g * dg / (problem.gamma + 1.0)


def solve_thresholds(source: SourceModel, gamma: float, costs, xtol: float = ROOT_XTOL):
    """Vectorized optimal thresholds for an array of communication costs.

    The residual is strictly increasing with ``residual(sqrt(c)) <= 0`` and
    ``residual(sqrt(G(sqrt(c))^2/(gamma+1) + c)) >= 0`` (G is nonincreasing),
    so each root is bracketed analytically and refined by Newton steps that
    fall back to bisection whenever they leave the bracket.

    Returns ``(beta, residual, clamped)`` arrays.  On a bounded support
    whose edge comes before the root, the threshold is the edge itself.
    """
    costs = np.atleast_1d(np.asarray(costs, float))
    if np.any(costs < 0):
        raise ValueError("communication costs must be >= 0")
    problem = StageProblem(source, gamma, 0.0)
    upper = source.upper
    k = 1.0 / (gamma + 1.0)

    lo = np.sqrt(costs)
    clamped = lo > upper
    lo = np.minimum(lo, upper)
    if math.isfinite(upper):
        clamped |= upper**2 - source.gx(np.full_like(lo, upper)) ** 2 * k - costs < 0
    g_lo = np.asarray(source.gx(lo), float)
    hi = np.minimum(np.sqrt(g_lo**2 * k + costs), upper)

    def phi(b, c):
        g = np.asarray(source.gx(b), float)
        return b * b - g * g * k - c, g

    beta = np.where(clamped, upper, hi)
    resid = np.zeros_like(beta)
    active = ~clamped
    x = hi.copy()
    for _ in range(MAX_ITERATIONS):
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        xa, ca = x[idx], costs[idx]
        f, g = phi(xa, ca)
        resid[idx] = f
        beta[idx] = xa
        lo[idx] = np.where(f <= 0, xa, lo[idx])
        hi[idx] = np.where(f >= 0, xa, hi[idx])
        slope = _residual_slope(problem, xa, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(slope > 0, xa - f / slope, np.nan)
        mid = 0.5 * (lo[idx] + hi[idx])
        ok = np.isfinite(step) & (step >= lo[idx]) & (step <= hi[idx])
        xn = np.where(ok, step, mid)
        at_roundoff = np.abs(f) <= 8 * EPS * (xa * xa + ca)
        done = at_roundoff | (np.abs(xn - xa) <= xtol) | (hi[idx] - lo[idx] <= xtol)
        x[idx] = xn
        active[idx[done]] = False
    else:
        raise BracketError("threshold iteration did not converge")
    return beta, resid, clamped


def solve_threshold(problem: StageProblem, xtol: float = ROOT_XTOL) -> ThresholdSolution:
    """Optimal symmetric threshold for the one-stage problem."""
    beta, resid, clamped = solve_thresholds(problem.source, problem.gamma, [problem.comm_cost], xtol)
    b = float(beta[0])
    return ThresholdSolution(b, float(one_stage_cost(problem, b)), bool(clamped[0]), float(resid[0]))


def laplace_threshold(rate: float, gamma: float, comm_cost: float = 0.0) -> float:
    """Closed-form optimum for a Laplace source: sqrt(m + c), m = 1 / ((gamma+1) rate^2)."""
    return math.sqrt(1.0 / ((gamma + 1.0) * rate**2) + comm_cost)
