"""Even, log-concave scalar source densities and their truncated moments.

Every model exposes the same small surface: ``pdf``, ``tail_prob``, ``gx``,
``region_moments`` (mass, conditional mean, conditional variance of an
interval), ``truncated_mean``/``truncated_var``, ``tail_quantile`` and
``sample``.  The closed-form families work elementwise on numpy arrays.

``NumericSource`` wraps any model and recomputes all moments by adaptive
quadrature of its density; it is the independent route the closed forms
are checked against, and the fallback for densities without closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

QUAD_ABS_TOL = 1e-13
QUAD_REL_TOL = 1e-12
QUAD_LIMIT = 200

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# pieces narrower than one scale unit are integrated with a fixed Gauss-Legendre
# rule; the closed forms lose digits to cancellation there
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)
_NARROW = 1.0


class DegenerateRegionError(ValueError):
    """Raised when a conditional moment is requested on a zero-mass region."""


def _combine(w1, m1, v1, w2, m2, v2):
    """Merge two disjoint pieces (mass, mean, var) by the law of total variance."""
    w = w1 + w2
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(w > 0, (w1 * m1 + w2 * m2) / w, 0.0)
        var = np.where(
            w > 0,
            (w1 * (v1 + (m1 - mean) ** 2) + w2 * (v2 + (m2 - mean) ** 2)) / w,
            0.0,
        )
    return w, mean, np.maximum(var, 0.0)


def _gl_half_piece(density, lo, hi):
    """(mass, mean - lo, var) of ``density`` on finite [lo, hi] by Gauss-Legendre."""
    half = 0.5 * (hi - lo)[..., None]
    x = 0.5 * (hi + lo)[..., None] + half * _GL_NODES
    f = density(x) * _GL_WEIGHTS * half
    w = f.sum(-1)
    safe = np.where(w > 0, w, 1.0)
    d = x - lo[..., None]
    excess = (f * d).sum(-1) / safe
    var = (f * (d - excess[..., None]) ** 2).sum(-1) / safe
    return w, excess, var


def _use_narrow(nonempty, width, lo, hi, closed, density):
    narrow = nonempty & (width < _NARROW)
    if not np.any(narrow):
        return closed
    lo_n = np.where(narrow, lo, 0.0)
    hi_n = np.where(narrow, hi, 0.0)
    quad = _gl_half_piece(density, lo_n, hi_n)
    return tuple(np.where(narrow, q, c) for q, c in zip(quad, closed))


def _scalarize(*arrays):
    out = tuple(a[()] if isinstance(a, np.ndarray) and a.ndim == 0 else a for a in arrays)
    return out if len(out) > 1 else out[0]


class SourceModel:
    """Base class for an even, log-concave source density.

    Subclasses must provide ``pdf``, ``variance``, ``upper`` (the right end
    of the support, ``inf`` when unbounded) and ``sample``.  The moment
    methods defined here integrate the density numerically; closed-form
    families override them.
    """

    family = "generic"
    upper = math.inf

    # -- required surface ---------------------------------------------------
    def pdf(self, x):
        raise NotImplementedError

    @property
    def variance(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def scalar_pdf(self, x: float) -> float:
        """Density at one float; the integrand used by quadrature."""
        return float(self.pdf(x))

    # -- moments ------------------------------------------------------------
    def _integrate(self, f, a, b):
        return integrate.quad(
            f, a, b, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, limit=QUAD_LIMIT
        )[0]

    def _pieces(self, a, b):
        # split at 0 (density kink for Laplace) and clip to the support
        a = max(a, -self.upper)
        b = min(b, self.upper)
        if a >= b:
            return []
        if a < 0.0 < b:
            return [(a, 0.0), (0.0, b)]
        return [(a, b)]

    def _quad_region(self, a, b):
        p = self.scalar_pdf
        pieces = self._pieces(float(a), float(b))
        mass = sum(self._integrate(p, lo, hi) for lo, hi in pieces)
        if mass <= 0.0:
            return 0.0, 0.0, 0.0
        mean = sum(self._integrate(lambda x: x * p(x), lo, hi) for lo, hi in pieces) / mass
        var = sum(
            self._integrate(lambda x: (x - mean) ** 2 * p(x), lo, hi) for lo, hi in pieces
        ) / mass
        return mass, mean, var

    def region_moments(self, a, b):
        """Return ``(P(a<X<b), E[X|a<X<b], Var(X|a<X<b))``.

        Zero-mass regions report mean 0 and variance 0 so that
        mass-weighted sums stay finite.
        """
        mass, mean, var = np.vectorize(self._quad_region, otypes=[float, float, float])(a, b)
        return _scalarize(mass, mean, var)

    def _quad_tail(self, beta):
        return sum(self._integrate(self.scalar_pdf, lo, hi) for lo, hi in self._pieces(float(beta), math.inf))

    def tail_prob(self, beta):
        """P(X > beta)."""
        return _scalarize(np.vectorize(self._quad_tail, otypes=[float])(beta))

    def _quad_gx(self, beta):
        beta = float(beta)
        if beta >= self.upper:
            if beta == self.upper:
                return 0.0
            raise DegenerateRegionError(f"no mass above beta={beta}")
        p = self.scalar_pdf
        mass = self._integrate(p, beta, self.upper)
        if mass <= 0.0:
            raise DegenerateRegionError(f"no mass above beta={beta}")
        return self._integrate(lambda x: (x - beta) * p(x), beta, self.upper) / mass

    def gx(self, beta):
        """Residual tail mean E[X | X > beta] - beta."""
        return _scalarize(np.vectorize(self._quad_gx, otypes=[float])(beta))

    def truncated_mean(self, a, b):
        mass, mean, _ = self.region_moments(a, b)
        if np.any(np.asarray(mass) <= 0.0):
            raise DegenerateRegionError(f"zero mass on ({a}, {b})")
        return mean

    def truncated_var(self, a, b):
        mass, _, var = self.region_moments(a, b)
        if np.any(np.asarray(mass) <= 0.0):
            raise DegenerateRegionError(f"zero mass on ({a}, {b})")
        return var

    def partial_second_moment(self, a, b):
        """Integral of x^2 p(x) over (a, b)."""
        mass, mean, var = self.region_moments(a, b)
        return mass * (var + mean**2)

    def tail_quantile(self, p):
        """Smallest beta >= 0 with P(X > beta) = p, for p in (0, 1/2]."""

        def one(q):
            if q >= 0.5:
                return 0.0
            hi = 1.0
            while self.tail_prob(hi) > q:
                hi *= 2.0
                if hi > self.upper:
                    hi = self.upper
                    break
            return optimize.brentq(lambda b: self.tail_prob(b) - q, 0.0, hi, xtol=1e-15)

        return _scalarize(np.vectorize(one, otypes=[float])(p))

    def describe(self) -> dict:
        return {"family": self.family}


@dataclass(frozen=True)
class Laplace(SourceModel):
    """Laplace density (rate/2) exp(-rate |x|)."""

    rate: float = 1.0
    family = "laplace"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"Laplace rate must be positive, got {self.rate}")

    def pdf(self, x):
        return 0.5 * self.rate * np.exp(-self.rate * np.abs(x))

    def scalar_pdf(self, x):
        return 0.5 * self.rate * math.exp(-self.rate * abs(x))

    @property
    def variance(self) -> float:
        return 2.0 / self.rate**2

    def sample(self, rng, size=None):
        return rng.laplace(0.0, 1.0 / self.rate, size)

    def _half_piece(self, lo, hi):
        # X restricted to [lo, hi] with 0 <= lo <= hi; X - lo is a truncated exponential
        lam = self.rate
        with np.errstate(invalid="ignore", over="ignore"):
            L = hi - lo
            nonempty = hi > lo
            L = np.where(nonempty, L, 0.0)
            lo_f = np.where(np.isfinite(lo), lo, 0.0)
            w = np.where(nonempty, 0.5 * np.exp(-lam * lo_f) * -np.expm1(-lam * L), 0.0)
            r = np.where(np.isinf(L) | ~nonempty, 0.0, L / np.expm1(lam * np.where(nonempty, L, 1.0)))
            excess = np.where(nonempty, 1.0 / lam - r, 0.0)
            ey2 = 2.0 / lam**2 - np.where(np.isinf(L), 0.0, (L + 2.0 / lam) * r)
            var = np.where(nonempty, np.maximum(ey2 - excess**2, 0.0), 0.0)
        return _use_narrow(nonempty, L * lam, lo_f, np.where(np.isfinite(hi), hi, 0.0),
                           (w, excess, var), self.pdf)

    def region_moments(self, a, b):
        a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
        wp, ep, vp = self._half_piece(np.maximum(a, 0.0), np.maximum(b, 0.0))
        wn, en, vn = self._half_piece(np.maximum(-b, 0.0), np.maximum(-a, 0.0))
        mp = np.where(wp > 0, np.maximum(a, 0.0) + ep, 0.0)
        mn = np.where(wn > 0, -(np.maximum(-b, 0.0) + en), 0.0)
        return _scalarize(*_combine(wp, mp, vp, wn, mn, vn))

    def tail_prob(self, beta):
        beta = np.asarray(beta, float)
        half = 0.5 * np.exp(-self.rate * np.abs(beta))
        return _scalarize(np.where(beta >= 0, half, 1.0 - half))

    def gx(self, beta):
        beta = np.asarray(beta, float)
        _, excess, _ = self._half_piece(np.maximum(beta, 0.0), np.full_like(beta, np.inf))
        out = np.where(beta >= 0, excess, self.region_moments(beta, np.inf)[1] - beta)
        return _scalarize(out)

    def tail_quantile(self, p):
        p = np.asarray(p, float)
        return _scalarize(np.where(p >= 0.5, 0.0, -np.log(2.0 * np.minimum(p, 0.5)) / self.rate))

    def describe(self):
        return {"family": self.family, "rate": self.rate}


def _std_normal_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


@dataclass(frozen=True)
class Gaussian(SourceModel):
    """Zero-mean normal density with standard deviation ``sigma``."""

    sigma: float = 1.0
    family = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"Gaussian sigma must be positive, got {self.sigma}")

    def pdf(self, x):
        z = np.asarray(x, float) / self.sigma
        return _INV_SQRT_2PI / self.sigma * np.exp(-0.5 * z * z)

    def scalar_pdf(self, x):
        z = x / self.sigma
        return _INV_SQRT_2PI / self.sigma * math.exp(-0.5 * z * z)

    @property
    def variance(self) -> float:
        return self.sigma**2

    def sample(self, rng, size=None):
        return rng.normal(0.0, self.sigma, size)

    @staticmethod
    def _std_half_piece(lo, hi):
        # standard normal on [lo, hi], 0 <= lo <= hi; all ratios scaled by phi(lo)
        with np.errstate(invalid="ignore", over="ignore", under="ignore"):
            nonempty = hi > lo
            lo_f = np.where(np.isfinite(lo), lo, 0.0)
            hi_inf = np.isinf(hi)
            hi_f = np.where(hi_inf, lo_f + 1.0, hi)
            rho = np.where(hi_inf, 0.0, np.exp(-0.5 * (hi_f - lo_f) * (hi_f + lo_f)))
            scaled_mass = _SQRT_HALF_PI * (
                special.erfcx(lo_f / math.sqrt(2.0))
                - np.where(hi_inf, 0.0, special.erfcx(hi_f / math.sqrt(2.0)) * rho)
            )
            ok = nonempty & (scaled_mass > 0)
            sm = np.where(ok, scaled_mass, 1.0)
            mean = (1.0 - rho) / sm
            ez2 = 1.0 + (lo_f - np.where(hi_inf, 0.0, hi_f * rho)) / sm
            w = np.where(ok, _INV_SQRT_2PI * np.exp(-0.5 * lo_f * lo_f) * scaled_mass, 0.0)
            excess = np.where(ok, mean - lo_f, 0.0)
            var = np.where(ok, np.maximum(ez2 - mean**2, 0.0), 0.0)
        return _use_narrow(nonempty, np.where(hi_inf, np.inf, hi_f - lo_f), lo_f, hi_f,
                           (w, excess, var), _std_normal_pdf)

    def region_moments(self, a, b):
        s = self.sigma
        a, b = np.broadcast_arrays(np.asarray(a, float) / s, np.asarray(b, float) / s)
        wp, ep, vp = self._std_half_piece(np.maximum(a, 0.0), np.maximum(b, 0.0))
        wn, en, vn = self._std_half_piece(np.maximum(-b, 0.0), np.maximum(-a, 0.0))
        mp = np.where(wp > 0, np.maximum(a, 0.0) + ep, 0.0)
        mn = np.where(wn > 0, -(np.maximum(-b, 0.0) + en), 0.0)
        w, mean, var = _combine(wp, mp, vp, wn, mn, vn)
        return _scalarize(w, s * mean, s * s * var)

    def tail_prob(self, beta):
        return _scalarize(special.ndtr(-np.asarray(beta, float) / self.sigma))

    def gx(self, beta):
        beta = np.asarray(beta, float)
        z = np.maximum(beta, 0.0) / self.sigma
        w, excess, _ = self._std_half_piece(z, np.full_like(z, np.inf))
        if np.any((w <= 0) & (beta >= 0)):
            raise DegenerateRegionError("Gaussian tail mass underflowed")
        out = np.where(beta >= 0, self.sigma * excess, self.region_moments(beta, np.inf)[1] - beta)
        return _scalarize(out)

    def tail_quantile(self, p):
        p = np.asarray(p, float)
        return _scalarize(np.where(p >= 0.5, 0.0, -self.sigma * special.ndtri(np.minimum(p, 0.5))))

    def describe(self):
        return {"family": self.family, "sigma": self.sigma}


@dataclass(frozen=True)
class Uniform(SourceModel):
    """Uniform density on (-halfwidth, halfwidth).

    Bounded support: the optimal threshold may sit at the support edge
    (never transmit), and the density is only piecewise smooth.
    """

    halfwidth: float = 1.0
    family = "uniform"
    regime_note = "bounded support: threshold may clamp at the support edge"

    def __post_init__(self):
        if not self.halfwidth > 0:
            raise ValueError(f"Uniform halfwidth must be positive, got {self.halfwidth}")

    @property
    def upper(self) -> float:
        return self.halfwidth

    def pdf(self, x):
        x = np.asarray(x, float)
        return _scalarize(np.where(np.abs(x) <= self.halfwidth, 0.5 / self.halfwidth, 0.0))

    def scalar_pdf(self, x):
        return 0.5 / self.halfwidth if abs(x) <= self.halfwidth else 0.0

    @property
    def variance(self) -> float:
        return self.halfwidth**2 / 3.0

    def sample(self, rng, size=None):
        return rng.uniform(-self.halfwidth, self.halfwidth, size)

    def region_moments(self, a, b):
        h = self.halfwidth
        lo = np.clip(np.asarray(a, float), -h, h)
        hi = np.clip(np.asarray(b, float), -h, h)
        lo, hi = np.broadcast_arrays(lo, hi)
        width = np.maximum(hi - lo, 0.0)
        mass = width / (2.0 * h)
        mean = np.where(width > 0, 0.5 * (lo + hi), 0.0)
        return _scalarize(mass, mean, width**2 / 12.0)

    def tail_prob(self, beta):
        h = self.halfwidth
        return _scalarize(np.clip((h - np.asarray(beta, float)) / (2.0 * h), 0.0, 1.0))

    def gx(self, beta):
        beta = np.asarray(beta, float)
        if np.any(beta > self.halfwidth):
            raise DegenerateRegionError(f"no mass above beta > {self.halfwidth}")
        lo = np.maximum(beta, -self.halfwidth)
        return _scalarize(0.5 * (self.halfwidth + lo) - beta)

    def tail_quantile(self, p):
        p = np.asarray(p, float)
        return _scalarize(self.halfwidth * (1.0 - 2.0 * np.minimum(p, 0.5)))

    def describe(self):
        return {"family": self.family, "halfwidth": self.halfwidth}


class NumericSource(SourceModel):
    """Quadrature-backed view of another model: same density, numeric moments."""

    def __init__(self, base: SourceModel):
        self.base = base
        self.family = base.family
        self.upper = base.upper

    def pdf(self, x):
        return self.base.pdf(x)

    def scalar_pdf(self, x):
        return self.base.scalar_pdf(x)

    @property
    def variance(self) -> float:
        return self.base.variance

    def sample(self, rng, size=None):
        return self.base.sample(rng, size)

    def describe(self):
        return {**self.base.describe(), "moments": "quadrature"}

    def __repr__(self):
        return f"NumericSource({self.base!r})"


def make_source(family: str, param: float | None = None) -> SourceModel:
    """Build a source from a family name and its single scale parameter."""
    family = family.lower()
    if family == "laplace":
        return Laplace(1.0 if param is None else param)
    if family == "gaussian":
        return Gaussian(1.0 if param is None else param)
    if family == "uniform":
        return Uniform(1.0 if param is None else param)
    raise ValueError(f"unknown source family {family!r} (expected laplace, gaussian or uniform)")
