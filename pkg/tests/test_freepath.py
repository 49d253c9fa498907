import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randflight import freepath as fp
from randflight import specfun as sf
from randflight.errors import DomainError, UnsupportedQueryError

MODELS = ["exp", "gamma:k=2", "gamma:k=0.5", "gamma:k=3.5", "chi:k=1", "chi:k=2", "chi:k=3",
          "betaprime:k=4", "pearson", "besselk:m=2", "besselk:m=3"]


def problem(spec, d, c=0.5):
    return fp.TransportProblem(fp.parse_model(spec), d, c)


def test_pdf_examples():
    assert fp.pdf(fp.parse_model("gamma:k=2"), 1.0) == pytest.approx(4 * math.exp(-2), rel=1e-12)
    assert fp.pdf(fp.parse_model("exp"), 0.0) == pytest.approx(1.0)
    assert fp.pdf(fp.parse_model("betaprime:k=2.5"), 1.0) == pytest.approx(1 / math.pi, rel=1e-12)


def test_pearson_has_no_pointwise_density():
    model = fp.parse_model("pearson")
    assert not model.has_density
    with pytest.raises(UnsupportedQueryError):
        fp.pdf(model, 0.5)


def test_extinction_examples():
    pearson = fp.parse_model("pearson")
    assert fp.extinction(pearson, 0.5) == 1.0
    assert fp.extinction(pearson, 1.5) == 0.0
    assert fp.extinction(fp.parse_model("gamma:k=2"), 1.0) == pytest.approx(3 * math.exp(-2), rel=1e-12)
    assert fp.extinction(fp.parse_model("exp"), 2.0) == pytest.approx(math.exp(-2), rel=1e-12)


@pytest.mark.parametrize("spec", [m for m in MODELS if m != "pearson"])
def test_unit_normalization_and_mean(spec):
    model = fp.parse_model(spec)
    f = lambda s: fp.pdf(model, float(s))
    pts = [0, 0.5, 1, 2, 5, 20, mp.inf]
    assert float(mp.quad(f, pts)) == pytest.approx(1.0, abs=1e-8)
    assert float(mp.quad(lambda s: s * f(s), pts)) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("spec", [m for m in MODELS if m != "pearson"])
def test_extinction_is_complementary_cdf(spec):
    model = fp.parse_model(spec)
    for s in (0.1, 0.7, 1.5, 4.0):
        cdf = float(mp.quad(lambda t: fp.pdf(model, float(t)), [0, min(s, 0.5), s]))
        assert fp.extinction(model, s) == pytest.approx(1 - cdf, abs=1e-8)
    assert fp.extinction(model, 0.0) == pytest.approx(1.0)
    e = fp.extinction(model, np.linspace(0, 30, 300))
    assert np.all(np.diff(e) <= 1e-15)


def test_sampling_examples():
    rng = np.random.default_rng(7)
    assert np.all(fp.sample(fp.parse_model("pearson"), rng, 100) == 1.0)
    x = fp.sample(fp.parse_model("exp"), rng, 10**6)
    assert abs(x.mean() - 1) < 3e-3
    y = fp.sample(fp.parse_model("betaprime:k=4"), rng, 10**6)
    se = np.std(y**2) / math.sqrt(y.size)
    assert abs(np.mean(y**2) - 2.0) < 3 * se


@pytest.mark.parametrize("spec", ["gamma:k=0.5", "chi:k=3", "besselk:m=3", "betaprime:k=3"])
def test_sampler_matches_extinction(spec):
    model = fp.parse_model(spec)
    x = fp.sample(model, np.random.default_rng(11), 200_000)
    for s in (0.3, 1.0, 2.5):
        p = fp.extinction(model, s)
        se = math.sqrt(p * (1 - p) / x.size)
        assert abs(np.mean(x > s) - p) < 4 * se


def test_mean_square_examples():
    assert fp.mean_square(fp.parse_model("gamma:k=2")) == pytest.approx(1.5)
    assert fp.mean_square(fp.parse_model("exp")) == pytest.approx(2.0)
    assert fp.mean_square(fp.parse_model("pearson")) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        fp.parse_model("betaprime:k=2")


def test_mean_square_extinction_examples():
    assert fp.mean_square_extinction(fp.parse_model("pearson")) == pytest.approx(1 / 3)
    assert fp.mean_square_extinction(fp.parse_model("exp")) == pytest.approx(2.0)
    assert fp.mean_square_extinction(fp.parse_model("chi:k=1")) == pytest.approx(math.pi / 3, rel=1e-12)
    with pytest.raises(DomainError):
        fp.mean_square_extinction(fp.parse_model("betaprime:k=3"))


@pytest.mark.parametrize("spec", [m for m in MODELS if m != "pearson"])
def test_mean_square_closed_forms_by_quadrature(spec):
    model = fp.parse_model(spec)
    pts = [0, 0.5, 1, 2, 5, 20, mp.inf]
    second = float(mp.quad(lambda s: s * s * fp.pdf(model, float(s)), pts))
    assert fp.mean_square(model) == pytest.approx(second, rel=1e-8)
    assert fp.mean_square(model) >= 1
    ext = float(mp.quad(lambda s: s * s * fp.extinction(model, float(s)), pts))
    assert fp.mean_square_extinction(model) == pytest.approx(ext, rel=1e-8)


def test_parse_model_round_trip_and_errors():
    for spec in MODELS:
        model = fp.parse_model(spec)
        assert fp.parse_model(model.spec_string()) == model
    for bad in ("gamma", "gamma:k=-1", "chi:k=0.5", "cauchy", "exp:k=1", "besselk:m=0"):
        with pytest.raises(DomainError):
            fp.parse_model(bad)


def test_problem_invariants():
    model = fp.parse_model("exp")
    for c in (0.0, 1.0, 1.2):
        with pytest.raises(DomainError):
            fp.TransportProblem(model, 3, c)
    with pytest.raises(DomainError):
        fp.TransportProblem(model, 0.5, 0.5)


def test_propagator_examples():
    assert fp.propagator(problem("exp", 3), 1.0) == pytest.approx(math.pi / 4, rel=1e-12)
    assert fp.propagator(problem("gamma:k=2", 3), 2.0) == pytest.approx(0.5, rel=1e-12)
    assert fp.propagator(problem("pearson", 2), 2.404825557695773) == pytest.approx(0.0, abs=1e-12)


def test_propagator_imag_examples():
    assert fp.propagator_imag(problem("exp", 1), 0.5) == pytest.approx(4 / 3, rel=1e-12)
    assert fp.propagator_imag(problem("exp", 2), 0.6) == pytest.approx(1.25, rel=1e-12)
    assert fp.propagator_imag(problem("pearson", 1), 1.0) == pytest.approx(math.cosh(1), rel=1e-12)
    with pytest.raises(DomainError):
        fp.propagator_imag(problem("exp", 3), 1.0)
    with pytest.raises(DomainError):
        fp.propagator_imag(problem("gamma:k=2", 3), 2.5)


def test_stretched_propagator_examples():
    assert fp.stretched_propagator(problem("exp", 3), 1.0) == pytest.approx(math.pi / 4, rel=1e-12)
    want = sf.sine_integral(math.pi) / math.pi
    assert fp.stretched_propagator(problem("pearson", 3), math.pi) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.5894899, rel=1e-6)
    with pytest.raises(DomainError):
        fp.stretched_propagator(problem("betaprime:k=3", 3), 1.0)


@pytest.mark.parametrize("spec", MODELS)
@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_transforms_are_normalized(spec, d):
    p = problem(spec, d)
    assert fp.propagator(p, 0.0) == pytest.approx(1.0, abs=1e-9)
    try:
        assert fp.stretched_propagator(p, 0.0) == pytest.approx(1.0, abs=1e-9)
    except DomainError:
        assert spec == "betaprime:k=4"


CLOSED = [("exp", d) for d in (1, 2, 3, 4, 5)] + [(f"gamma:k={k}", d) for k in (2, 3) for d in (1, 2, 3)]


@pytest.mark.parametrize("spec,d", CLOSED)
def test_closed_forms_match_quadrature(spec, d):
    p = problem(spec, d)
    for z in (0.25, 1.0, 4.0):
        closed = fp.propagator(p, z, method="closed")
        quad = fp.propagator(p, z, method="quad")
        assert closed == pytest.approx(quad, rel=1e-7, abs=1e-10)


@pytest.mark.parametrize("spec", ["exp", "gamma:k=2", "chi:k=2", "pearson", "besselk:m=2"])
@pytest.mark.parametrize("d", [1, 2.5, 3])
def test_series_matches_quadrature(spec, d):
    p = problem(spec, d)
    for z in (0.3, 0.6):
        assert fp.propagator(p, z, method="series") == pytest.approx(fp.propagator(p, z, method="quad"), rel=1e-8)


@pytest.mark.parametrize("spec", [m for m in MODELS if m != "betaprime:k=4"] + ["betaprime:k=6"])
@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_curvature_at_origin_gives_mean_square(spec, d):
    # k=4 beta prime has no fourth moment, so the stencil's error term is not O(h^4)
    p = problem(spec, d)
    h = 3e-3
    z0, zh, z2h = (fp.propagator(p, z) for z in (0.0, h, 2 * h))
    # fourth-order one-sided stencil for an even function
    second = (-z2h + 16 * zh - 15 * z0) / (6 * h * h)
    assert -second * d == pytest.approx(fp.mean_square(p.model), rel=1e-7)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_exp_propagator_is_gauss_series(d):
    p = problem("exp", d)
    for z in (0.2, 0.6, 1.0):
        series = sf.hyp_pfq([0.5, 1.0], [d / 2], -z * z)
        assert series == pytest.approx(fp.propagator(p, z, method="quad"), rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["exp", "gamma:k=2", "chi:k=3", "pearson", "besselk:m=3"]),
       st.integers(min_value=1, max_value=5), st.floats(min_value=0.0, max_value=30.0))
def test_propagator_bounded(spec, d, z):
    assert abs(fp.propagator(problem(spec, d), z)) <= 1 + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["exp", "gamma:k=2", "chi:k=2", "pearson"]),
       st.integers(min_value=1, max_value=5), st.floats(min_value=0.0, max_value=0.95))
def test_imaginary_propagator_increasing(spec, d, frac):
    p = problem(spec, d)
    absc = p.model.abscissa()
    top = 3.0 if math.isinf(absc) else absc
    lo = fp.propagator_imag(p, frac * top * 0.9)
    hi = fp.propagator_imag(p, frac * top * 0.9 + 0.02)
    assert 1.0 <= lo <= hi


@pytest.mark.parametrize("spec", ["chi:k=1", "chi:k=3", "gamma:k=2", "gamma:k=0.5", "besselk:m=3"])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_stretched_transform_matches_quadrature(spec, d):
    p = problem(spec, d)
    nu = d / 2 - 1
    for z in (0.4, 1.5, 3.0):
        kern = lambda s: fp.extinction(p.model, float(s)) * mp.gamma(nu + 1) * (2 / (s * z)) ** nu * mp.besselj(nu, s * z)
        want = float(mp.quad(kern, [0, 1, 2, 4, 8, 16, 40, mp.inf]))
        assert fp.stretched_propagator(p, z) == pytest.approx(want, rel=1e-7, abs=1e-10)
