import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from remsched.sources import (
    DegenerateRegionError,
    Gaussian,
    Laplace,
    NumericSource,
    Uniform,
    make_source,
)

SOURCES = [Laplace(1.0), Laplace(2.5), Gaussian(1.0), Gaussian(0.4), Uniform(1.0), Uniform(3.0)]
ids = [f"{s.family}-{s.describe()}" for s in SOURCES]


def test_pdf_values():
    assert Laplace(1.0).pdf(0.0) == 0.5
    assert Laplace(1.0).pdf(-2.0) == Laplace(1.0).pdf(2.0)
    assert Uniform(1.0).pdf(1.5) == 0.0
    assert Uniform(2.0).pdf(0.3) == 0.25


@pytest.mark.parametrize("src", SOURCES, ids=ids)
def test_pdf_even_and_normalized(src):
    x = np.linspace(-5, 5, 101)
    assert_allclose(src.pdf(x), src.pdf(-x), rtol=0, atol=0)
    mass, mean, var = NumericSource(src).region_moments(-math.inf, math.inf)
    assert_allclose(mass, 1.0, atol=1e-10)
    assert_allclose(mean, 0.0, atol=1e-12)
    assert_allclose(var, src.variance, rtol=1e-10)


@pytest.mark.parametrize("src", SOURCES, ids=ids)
def test_log_concave_on_sampled_triples(src):
    rng = np.random.default_rng(3)
    top = min(src.upper, 6.0)
    x, y = rng.uniform(-top, top, (2, 500))
    th = rng.uniform(0, 1, 500)
    inside = src.pdf(x) > 0
    inside &= src.pdf(y) > 0
    lhs = np.log(src.pdf(th * x + (1 - th) * y))
    rhs = th * np.log(src.pdf(x)) + (1 - th) * np.log(src.pdf(y))
    assert np.all(lhs[inside] >= rhs[inside] - 1e-12)


def test_tail_prob_values():
    for src in SOURCES:
        assert src.tail_prob(0.0) == pytest.approx(0.5, abs=1e-15)
    # integral of exp(-x)/2 over (1, inf)
    assert Laplace(1.0).tail_prob(1.0) == pytest.approx(0.5 * math.exp(-1.0), rel=1e-15)
    assert Uniform(1.0).tail_prob(1.0) == 0.0
    assert Gaussian(1.0).tail_prob(1.959963984540054) == pytest.approx(0.025, rel=1e-12)


@pytest.mark.parametrize("src", SOURCES, ids=ids)
def test_tail_prob_matches_quadrature(src):
    b = np.array([-1.2, 0.0, 0.3, 0.9, 2.0, 3.5])
    assert_allclose(src.tail_prob(b), NumericSource(src).tail_prob(b), rtol=1e-9, atol=1e-14)


def test_gx_values():
    assert_allclose(Laplace(1.0).gx(np.array([0.0, 0.5, 3.0, 20.0])), 1.0, rtol=1e-14)
    assert Laplace(2.0).gx(0.7) == pytest.approx(0.5, rel=1e-14)
    # E[X | X > 0] for a standard normal is sqrt(2/pi); 40-digit quadrature gives the same
    assert Gaussian(1.0).gx(0.0) == pytest.approx(0.7978845608028654, rel=1e-14)
    assert Gaussian(1.0).gx(1.5) == pytest.approx(0.43867716662254319, rel=1e-12)
    assert Uniform(1.0).gx(0.2) == pytest.approx(0.4)
    assert Uniform(1.0).gx(1.0) == 0.0


def test_gx_raises_past_support():
    with pytest.raises(DegenerateRegionError):
        Uniform(1.0).gx(1.2)
    with pytest.raises(DegenerateRegionError):
        NumericSource(Uniform(1.0)).gx(1.2)


@pytest.mark.parametrize("src", SOURCES, ids=ids)
def test_gx_nonincreasing(src):
    top = src.upper if math.isfinite(src.upper) else 8 * math.sqrt(src.variance)
    g = np.asarray(src.gx(np.linspace(0, top, 500)))
    assert np.all(np.diff(g) <= 1e-9)
    assert np.all(g[:-1] > 0)


def test_truncated_moment_values():
    src = Laplace(1.0)
    assert src.truncated_mean(-1.3, 1.3) == pytest.approx(0.0, abs=1e-15)
    assert src.truncated_mean(0.8, math.inf) == pytest.approx(1.8, rel=1e-14)
    assert src.truncated_var(0.8, math.inf) == pytest.approx(1.0, rel=1e-13)
    u = Uniform(1.0)
    assert u.truncated_mean(0.2, 1.0) == pytest.approx(0.6)
    assert u.truncated_var(0.2, 1.0) == pytest.approx(0.8**2 / 12)
    # reference values from 40-digit mpmath quadrature
    mass, mean, var = Gaussian(1.0).region_moments(0.3, 1.2)
    assert_allclose([mass, mean, var], [0.26701890758933909, 0.70108054207613458, 0.064296849573682567], rtol=1e-13)
    mass, mean, var = Gaussian(1.0).region_moments(-0.5, 2.0)
    assert_allclose([mass, mean, var], [0.66871232932583390, 0.44574377827251484, 0.37659383613683590], rtol=1e-13)


def test_zero_mass_region_raises():
    with pytest.raises(DegenerateRegionError):
        Uniform(1.0).truncated_var(1.5, 2.0)
    assert Uniform(1.0).region_moments(1.5, 2.0) == (0.0, 0.0, 0.0)


interval = st.tuples(
    st.floats(-6, 6, allow_nan=False), st.floats(1e-6, 8, allow_nan=False)
).map(lambda p: (p[0], p[0] + p[1]))


@settings(max_examples=60, deadline=None)
@given(ab=interval, which=st.sampled_from(range(len(SOURCES))))
def test_closed_forms_match_quadrature(ab, which):
    src = SOURCES[which]
    a, b = ab
    mass, mean, var = src.region_moments(a, b)
    qm, qmu, qv = NumericSource(src).region_moments(a, b)
    assert mass == pytest.approx(qm, rel=1e-9, abs=1e-13)
    if qm > 1e-10:
        assert mean == pytest.approx(qmu, rel=1e-9, abs=1e-9 * (b - a))
        assert var == pytest.approx(qv, rel=1e-9, abs=1e-12 * (b - a) ** 2)


@settings(max_examples=60, deadline=None)
@given(cuts=st.lists(st.floats(-5, 5), min_size=2, max_size=2), which=st.sampled_from(range(len(SOURCES))))
def test_law_of_total_variance(cuts, which):
    src = SOURCES[which]
    a, b = sorted(cuts)
    parts = [src.region_moments(lo, hi) for lo, hi in ((-math.inf, a), (a, b), (b, math.inf))]
    w = np.array([p[0] for p in parts])
    mu = np.array([p[1] for p in parts])
    v = np.array([p[2] for p in parts])
    total = np.sum(w * v) + np.sum(w * mu**2) - np.sum(w * mu) ** 2
    assert total == pytest.approx(src.variance, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    edges=st.lists(st.floats(-3, 3), min_size=2, max_size=6, unique=True).filter(lambda e: len(e) % 2 == 0),
    which=st.sampled_from([0, 2]),
)
def test_symmetric_interval_has_least_variance(edges, which):
    src = SOURCES[which]
    edges = sorted(edges)
    pieces = list(zip(edges[::2], edges[1::2]))
    quad = NumericSource(src)
    w = m1 = m2 = 0.0
    for lo, hi in pieces:
        mass, mean, var = quad.region_moments(lo, hi)
        w, m1, m2 = w + mass, m1 + mass * mean, m2 + mass * (var + mean**2)
    if w < 1e-9:
        return
    var_union = m2 / w - (m1 / w) ** 2
    tau = src.tail_quantile(0.5 * (1 - w))
    assert src.truncated_var(-tau, tau) <= var_union + 1e-8


def test_tail_quantile_inverts_tail_prob():
    for src in SOURCES:
        p = np.array([0.49, 0.3, 0.1, 1e-3])
        assert_allclose(src.tail_prob(src.tail_quantile(p)), p, rtol=1e-12)
        assert_allclose(NumericSource(src).tail_quantile(0.2), src.tail_quantile(0.2), rtol=1e-9)


def test_sampling_moments_and_determinism():
    rng = np.random.default_rng(123)
    x = Laplace(1.0).sample(rng, 1_000_000)
    assert np.var(x) == pytest.approx(2.0, abs=0.01)
    g = Gaussian(1.0).sample(np.random.default_rng(5), 1_000_000)
    assert abs(np.mean(g)) < 0.005
    a = Uniform(1.0).sample(np.random.default_rng(9), 10)
    b = Uniform(1.0).sample(np.random.default_rng(9), 10)
    assert np.array_equal(a, b)


def test_narrow_intervals_keep_precision():
    # closed forms lose digits to cancellation on short pieces; the short-piece rule must hold them
    for src in (Laplace(1.0), Gaussian(1.0)):
        for width in (1e-3, 1e-6):
            _, _, var = src.region_moments(0.7, 0.7 + width)
            assert var == pytest.approx(width**2 / 12, rel=1e-5)


def test_constructor_validation():
    for bad in (lambda: Laplace(0.0), lambda: Gaussian(-1.0), lambda: Uniform(0.0)):
        with pytest.raises(ValueError):
            bad()
    assert make_source("Gaussian", 2.0) == Gaussian(2.0)
    with pytest.raises(ValueError, match="unknown source family"):
        make_source("cauchy")
    assert "bounded" in Uniform(1.0).regime_note
