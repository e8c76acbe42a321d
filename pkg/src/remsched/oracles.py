"""Brute-force checks of the threshold structure.

Three-level quantizer: a silent interval ``(-gamma2, gamma1)`` and two
transmit tails, each reconstructed at its conditional mean.  ``D`` is the
total mean squared distortion and ``PD`` the part coming from the two
transmit tails.  The scans below fix the silent mass (or nothing, for the
full soft cost) and search asymmetric threshold pairs on fine grids.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .sources import Gaussian, Laplace, SourceModel, Uniform
from .stage import StageProblem, one_stage_cost, solve_threshold

FD_STEP = 1e-6
SCAN_TOL = 1e-10
MASS_TOL = 1e-10
REFINE_SHARE = 0.4  # fraction of grid points placed near the diagonal
REFINE_HALF_WIDTH = 0.02  # refinement window as a fraction of the scanned range


@dataclass(frozen=True)
class DistortionReport:
    D: np.ndarray | float
    PD: np.ndarray | float
    region_masses: tuple  # (silent, plus, minus)
    codepoints: tuple  # conditional means, same order
    region_vars: tuple

    def total_variance_residual(self, source: SourceModel) -> float:
        """|D + spread of the codepoints - Var(X)|."""
        m = np.array(self.region_masses, float)
        mu = np.array(self.codepoints, float)
        mean = np.sum(m * mu, axis=0)
        spread = np.sum(m * (mu - mean) ** 2, axis=0)
        return float(np.max(np.abs(self.D + spread - source.variance)))


def three_level_distortion(source: SourceModel, gamma1, gamma2) -> DistortionReport:
    """Distortion of the quantizer with cells (-g2, g1), (g1, inf), (-inf, -g2); arrays allowed."""
    g1 = np.asarray(gamma1, float)
    g2 = np.asarray(gamma2, float)
    if np.any(g1 < 0) or np.any(g2 < 0):
        raise ValueError("quantizer thresholds must be >= 0")
    m0, mu0, v0 = source.region_moments(-g2, g1)
    mp, mup, vp = source.region_moments(g1, math.inf)
    mm, mum, vm = source.region_moments(-math.inf, -g2)
    total = np.asarray(m0) + mp + mm
    if np.any(np.abs(total - 1.0) > 1e-9):
        raise ArithmeticError(f"quantizer cells carry mass {total}, expected 1")
    pd = mp * vp + mm * vm
    return DistortionReport(m0 * v0 + pd, pd, (m0, mp, mm), (mu0, mup, mum), (v0, vp, vm))


def quantizer_soft_cost(problem: StageProblem, gamma1, gamma2):
    """Soft one-stage cost of an asymmetric threshold pair, built from quantizer distortion.

    ``D/(gamma+1) + gamma/(gamma+1) * Var(silent) * P(silent) + c * P(transmit)``.
    """
    rep = three_level_distortion(problem.source, gamma1, gamma2)
    k = 1.0 / (problem.gamma + 1.0)
    m0, mp, mm = rep.region_masses
    return rep.D * k + (1.0 - k) * rep.region_vars[0] * m0 + problem.comm_cost * (mp + mm)


def pd_derivative_check(source: SourceModel, gamma1: float, gamma2: float, h: float = FD_STEP):
    """(analytic, numeric) derivative of PD in gamma1 along the fixed-silent-mass curve.

    Analytic: ``p(g1) (G(g2)^2 - G(g1)^2)``.  Numeric: central difference,
    with ``gamma2`` re-solved from the silent-mass constraint at each
    perturbed ``gamma1``.
    """
    if not (0 < gamma1 < source.upper and 0 < gamma2 < source.upper):
        raise ValueError("both thresholds must be interior to the support")
    analytic = float(source.pdf(gamma1) * (source.gx(gamma2) ** 2 - source.gx(gamma1) ** 2))
    transmit_mass = float(source.tail_prob(gamma1) + source.tail_prob(gamma2))

    def pd_on_curve(g1):
        g2 = source.tail_quantile(transmit_mass - source.tail_prob(g1))
        return float(three_level_distortion(source, g1, g2).PD)

    numeric = (pd_on_curve(gamma1 + h) - pd_on_curve(gamma1 - h)) / (2.0 * h)
    return analytic, numeric


def _refined_grid(lo, hi, centre, size):
    n_refine = int(size * REFINE_SHARE)
    base = np.linspace(lo, hi, size - n_refine + 2)[1:-1]
    w = REFINE_HALF_WIDTH * (hi - lo)
    near = np.linspace(max(lo, centre - w), min(hi, centre + w), n_refine + 2)[1:-1]
    return np.unique(np.concatenate([base, near, [centre]]))


@dataclass
class ScanReport:
    gamma1: np.ndarray
    gamma2: np.ndarray
    D: np.ndarray
    PD: np.ndarray
    J: np.ndarray
    symmetric: tuple  # (gamma1, gamma2) claimed optimum
    at_symmetric: dict  # quantity name -> value at the claimed optimum
    constraint_residual: float = 0.0
    grid_step: float = math.nan
    notes: dict = field(default_factory=dict)

    def best(self, name: str):
        """(value, gamma1, gamma2) of the grid minimum of ``name``."""
        vals = getattr(self, name)
        i = int(np.nanargmin(vals))
        return float(vals.flat[i]), float(self.gamma1.flat[i]), float(self.gamma2.flat[i])

    def margin(self, name: str) -> float:
        """Value at the claimed optimum minus the best grid value (<= tol means pass)."""
        return self.at_symmetric[name] - self.best(name)[0]

    def passed(self, names=("PD", "D"), tol: float = SCAN_TOL) -> bool:
        return all(self.margin(n) <= tol for n in names) and self.constraint_residual <= MASS_TOL

    def to_csv(self, handle=None) -> str:
        buf = io.StringIO() if handle is None else handle
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("gamma1", "gamma2", "D", "PD", "J"))
        for row in zip(*(np.ravel(a) for a in (self.gamma1, self.gamma2, self.D, self.PD, self.J))):
            w.writerow(["" if math.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue() if handle is None else ""


def symmetric_optimality_scan(source: SourceModel, silent_mass: float, grid_size: int = 500,
                              problem: StageProblem | None = None) -> ScanReport:
    """Scan threshold pairs sharing one silent mass; the symmetric pair should minimize PD and D.

    The grid runs over the positive tail mass ``q1 = P(X > g1)`` with
    ``g2`` fixed by the constraint, densified around the symmetric point.
    ``J`` is filled in when a ``problem`` (gamma, c) is supplied.
    """
    if not 0 < silent_mass < 1:
        raise ValueError(f"silent mass must lie in (0, 1), got {silent_mass}")
    sent = 1.0 - silent_mass
    q_lo, q_hi = max(0.0, sent - 0.5), min(0.5, sent)
    q_sym = 0.5 * sent
    q1 = _refined_grid(q_lo, q_hi, q_sym, grid_size)
    g1 = np.asarray(source.tail_quantile(q1), float)
    g2 = np.asarray(source.tail_quantile(sent - q1), float)
    rep = three_level_distortion(source, g1, g2)
    residual = float(np.max(np.abs(np.asarray(rep.region_masses[0]) - silent_mass)))
    b = float(source.tail_quantile(q_sym))
    sym = three_level_distortion(source, b, b)
    J = np.full(g1.shape, np.nan)
    at = {"D": float(sym.D), "PD": float(sym.PD)}
    if problem is not None:
        J = np.asarray(quantizer_soft_cost(problem, g1, g2), float)
        at["J"] = float(quantizer_soft_cost(problem, b, b))
    return ScanReport(
        g1, g2, np.asarray(rep.D, float), np.asarray(rep.PD, float), J, (b, b), at, residual,
        float(np.min(np.diff(q1))), {"source": source.describe(), "silent_mass": silent_mass},
    )


def soft_cost_scan(problem: StageProblem, grid_size: int = 201, span: float | None = None) -> ScanReport:
    """Full soft cost over an unconstrained (gamma1, gamma2) grid on ``[0, span]^2``.

    The claimed optimum is the symmetric solution of the one-stage problem;
    the grid always contains it and is refined around it.
    """
    src = problem.source
    sol = solve_threshold(problem)
    b = sol.beta_star
    if span is None:
        span = min(max(3.0 * b, b + 3.0 * math.sqrt(src.variance)), src.upper)
    axis = _refined_grid(0.0, span, b, grid_size)
    axis = np.unique(np.concatenate([[0.0, span], axis]))
    G1, G2 = np.meshgrid(axis, axis, indexing="ij")
    rep = three_level_distortion(src, G1, G2)
    J = np.asarray(quantizer_soft_cost(problem, G1, G2), float)
    sym = three_level_distortion(src, b, b)
    at = {"J": float(quantizer_soft_cost(problem, b, b)), "D": float(sym.D), "PD": float(sym.PD),
          "one_stage_cost": float(one_stage_cost(problem, b))}
    return ScanReport(G1, G2, np.asarray(rep.D, float), np.asarray(rep.PD, float), J, (b, b), at,
                      0.0, float(np.max(np.diff(axis))), {"gamma": problem.gamma, "comm_cost": problem.comm_cost})


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def verify_suite(grid_size: int = 500, seed: int = 0) -> list[CheckResult]:
    """Run the oracle checks on the shipped source families; used by the CLI."""
    rng = np.random.default_rng(seed)
    out = []
    for src in (Laplace(1.0), Gaussian(1.0)):
        for mass in (0.3, 0.5, 0.7):
            rep = symmetric_optimality_scan(src, mass, grid_size)
            out.append(CheckResult(
                f"symmetric-scan {src.family} silent={mass}", rep.passed(),
                f"PD margin {rep.margin('PD'):.2e}, D margin {rep.margin('D'):.2e}, mass residual {rep.constraint_residual:.1e}",
            ))
        worst = 0.0
        for _ in range(20):
            g1, g2 = rng.uniform(0.2, 2.0, 2)
            a, n = pd_derivative_check(src, g1, g2)
            worst = max(worst, abs(a - n))
        out.append(CheckResult(f"pd-derivative {src.family}", worst <= 1e-5, f"max |analytic - numeric| {worst:.2e}"))
    for src in (Laplace(1.0), Gaussian(1.0), Uniform(1.0)):
        rep = soft_cost_scan(StageProblem(src, 0.1, 0.2), 201)
        gap = abs(rep.at_symmetric["J"] - rep.at_symmetric["one_stage_cost"])
        ok = rep.margin("J") <= SCAN_TOL and gap <= 1e-10
        out.append(CheckResult(f"soft-scan {src.family}", ok, f"J margin {rep.margin('J'):.2e}, two-route gap {gap:.1e}"))
    return out
