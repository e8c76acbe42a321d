"""Backward dynamic programming for the hard transmission budget.

The cost-to-go ``J(t, E)`` is stored densely for ``t = 1..T+1`` and
``E = 0..N``.  Column ``E`` of the recursion only reads columns ``E`` and
``E - 1``, so one table solved at budget ``N`` also answers every smaller
budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sources import SourceModel
from .stage import StageProblem, one_stage_cost, solve_threshold, solve_thresholds

MEMO_KEY_SCALE = 1e12  # opportunity costs closer than 1e-12 share a stage solve
NEGATIVE_COST_TOL = 1e-12


@dataclass(frozen=True)
class HorizonSpec:
    horizon: int
    budget: int
    source: SourceModel
    gamma: float

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not 0 <= self.budget <= self.horizon:
            raise ValueError(f"budget must lie in 0..{self.horizon}, got {self.budget}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass
class CostTable:
    """``values[t-1, E]`` holds J*(t, E) for t = 1..T+1."""

    values: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    @property
    def budget(self) -> int:
        return self.values.shape[1] - 1

    def __call__(self, t: int, E: int) -> float:
        if not 1 <= t <= self.horizon + 1 or not 0 <= E <= self.budget:
            raise IndexError(f"(t={t}, E={E}) outside table of shape {self.values.shape}")
        return float(self.values[t - 1, E])


@dataclass
class PolicyTable:
    """Thresholds ``beta[t-1, E]`` for t = 1..T; column 0 is +inf (no budget)."""

    beta: np.ndarray
    opportunity_cost: np.ndarray
    residual: np.ndarray
    clamped: np.ndarray = field(default=None)

    @property
    def horizon(self) -> int:
        return self.beta.shape[0]

    @property
    def budget(self) -> int:
        return self.beta.shape[1] - 1

    def __call__(self, t: int, E: int) -> float:
        return float(self.beta[t - 1, E])


def opportunity_cost(table: CostTable, t: int, E: int) -> float:
    """Price of spending one budget unit at stage t: J(t+1, E-1) - J(t+1, E)."""
    if E < 1:
        raise IndexError("opportunity cost needs E >= 1")
    c = table(t + 1, E - 1) - table(t + 1, E)
    if c < -NEGATIVE_COST_TOL:
        raise ArithmeticError(f"negative opportunity cost {c} at (t={t}, E={E})")
    return max(c, 0.0)


def solve_dp(spec: HorizonSpec) -> tuple[CostTable, PolicyTable]:
    """Backward pass t = T..1 over all budgets E = 0..N.

    E = 0 adds Var(X) per remaining stage.  For E >= 1 the stage is the
    one-stage problem priced at the opportunity cost c(t, E).  The cells of
    one time slice are independent and solved together; stage solves are
    memoized on c.
    """
    T, N = spec.horizon, spec.budget
    src, gamma = spec.source, spec.gamma
    J = np.full((T + 1, N + 1), np.nan)
    J[T, :] = 0.0
    beta = np.full((T, N + 1), np.inf)
    cost = np.zeros((T, N + 1))
    resid = np.zeros((T, N + 1))
    clamped = np.zeros((T, N + 1), dtype=bool)
    memo: dict[int, tuple[float, float, float, bool]] = {}

    for t in range(T, 0, -1):
        nxt = J[t]
        J[t - 1, 0] = nxt[0] + src.variance
        if N == 0:
            continue
        c = nxt[:-1] - nxt[1:]
        if np.any(c < -NEGATIVE_COST_TOL):
            raise ArithmeticError(f"negative opportunity cost {c.min()} at t={t}")
        c = np.maximum(c, 0.0)
        keys = np.round(c * MEMO_KEY_SCALE).astype(np.int64).tolist()
        fresh = sorted({k for k in keys if k not in memo})
        if fresh:
            fresh_c = np.array([c[keys.index(k)] for k in fresh])
            b, r, cl = solve_thresholds(src, gamma, fresh_c)
            sc = _stage_costs(src, gamma, fresh_c, b)
            for k, bb, rr, cc, ss in zip(fresh, b, r, cl, sc):
                memo[k] = (float(bb), float(rr), bool(cc), float(ss))
        sol = [memo[k] for k in keys]
        beta[t - 1, 1:] = [s[0] for s in sol]
        resid[t - 1, 1:] = [s[1] for s in sol]
        clamped[t - 1, 1:] = [s[2] for s in sol]
        J[t - 1, 1:] = nxt[1:] + np.array([s[3] for s in sol])
        cost[t - 1, 1:] = c
    return CostTable(J), PolicyTable(beta, cost, resid, clamped)


def _stage_costs(source, gamma, costs, betas):
    # one_stage_cost is elementwise in beta but takes a scalar c; split the c terms
    problem = StageProblem(source, gamma, 0.0)
    tail = np.asarray(source.tail_prob(np.minimum(betas, source.upper)), float)
    return np.asarray(one_stage_cost(problem, betas), float) + 2.0 * costs * tail


def laplace_closed_form_table(rate: float, gamma: float, horizon: int, budget: int) -> CostTable:
    """Cost-to-go for a Laplace source from the explicit update rule only.

    Pure arithmetic (no quadrature, no root finding): an independent check
    on ``solve_dp``.
    """
    lam2 = 1.0 / rate**2
    m = lam2 / (gamma + 1.0)
    J = [[0.0] * (budget + 1) for _ in range(horizon + 1)]
    for t in range(horizon - 1, -1, -1):
        nxt, row = J[t + 1], J[t]
        row[0] = nxt[0] + 2.0 * lam2
        for E in range(1, budget + 1):
            b = math.sqrt(m + (nxt[E - 1] - nxt[E]))
            row[E] = nxt[E] + 2.0 * lam2 - 2.0 * (b / rate + lam2) * math.exp(-rate * b)
    return CostTable(np.array(J))


def laplace_minimal_error(rate: float, gamma: float, horizon: int) -> float:
    """J*(1, T) with an unconstrained budget (N = T), Laplace source."""
    s = 1.0 / math.sqrt(1.0 + gamma)
    return horizon * 2.0 / rate**2 * (1.0 - (s + 1.0) * math.exp(-s))


def opportunity_threshold(rate: float, gamma: float, horizon: int) -> float:
    """Expected transmissions at the free-communication threshold, T exp(-rate sqrt(m))."""
    m = 1.0 / ((gamma + 1.0) * rate**2)
    return horizon * math.exp(-rate * math.sqrt(m))


def generic_opportunity_threshold(source: SourceModel, gamma: float, horizon: int) -> float:
    """T * P(|X| > beta0) with beta0 the zero-cost threshold; any even source."""
    b0 = solve_threshold(StageProblem(source, gamma, 0.0)).beta_star
    return horizon * 2.0 * float(source.tail_prob(b0))


def budget_sweep(source: SourceModel, gamma: float, horizon: int, budgets) -> tuple[np.ndarray, np.ndarray]:
    """(N, J*(1, N)) for each requested budget, from a single DP solve."""
    budgets = np.asarray(list(budgets), dtype=int)
    if budgets.size == 0:
        return budgets, np.zeros(0)
    if budgets.min() < 0 or budgets.max() > horizon:
        raise ValueError(f"budgets must lie in 0..{horizon}")
    table, _ = solve_dp(HorizonSpec(horizon, int(budgets.max()), source, gamma))
    return budgets, table.values[0, budgets].copy()


def bellman_stage_costs(spec: HorizonSpec, table: CostTable, policy: PolicyTable) -> np.ndarray:
    """Recompute each cell's stage cost at the recorded threshold (Bellman check)."""
    T, N = spec.horizon, spec.budget
    out = np.zeros((T, N + 1))
    out[:, 0] = spec.source.variance
    for t in range(1, T + 1):
        c = policy.opportunity_cost[t - 1, 1:]
        b = policy.beta[t - 1, 1:]
        for E, (cc, bb) in enumerate(zip(c, b), start=1):
            out[t - 1, E] = one_stage_cost(StageProblem(spec.source, spec.gamma, cc), bb)
    return out
