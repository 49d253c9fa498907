import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randflight import freepath as fp
from randflight import transform as tr
from randflight.errors import DivergenceError, DomainError, NumericError


def exp_density_3d(r):
    return np.exp(-r) / (4 * np.pi * r**2)


def test_surface_area_and_volume():
    assert tr.surface_area(3, 2.0) == pytest.approx(16 * math.pi)
    assert tr.surface_area(1, 5.0) == pytest.approx(2.0)
    assert tr.ball_volume(2, 1.0) == pytest.approx(math.pi)


def test_forward_examples():
    rep = tr.forward_ft(exp_density_3d, 3, 1.0)
    assert rep.value == pytest.approx(math.pi / 4, rel=1e-9)
    assert rep.est_error >= 0
    assert tr.forward_ft(exp_density_3d, 3, 0.0).value == pytest.approx(1.0, rel=1e-9)


def test_forward_gaussian_chi2_flatland():
    p = fp.TransportProblem(fp.parse_model("chi:k=2"), 2, 0.5)
    f = lambda r: fp.pdf(p.model, r) / tr.surface_area(2, r)
    assert tr.forward_ft(f, 2, math.sqrt(math.pi)).value == pytest.approx(math.exp(-1), rel=1e-9)


def test_forward_rejects_negative_z():
    with pytest.raises(DomainError):
        tr.forward_ft(exp_density_3d, 3, -1.0)


def test_inverse_examples():
    rep = tr.inverse_ft(lambda z: 1 / (1 + z**2), 1, 1.0)
    assert rep.value == pytest.approx(math.exp(-1) / 2, rel=1e-8)


def test_inverse_exp4d_flux():
    p = fp.TransportProblem(fp.parse_model("exp"), 4, 0.5)

    def scattered(z):
        zeta = fp.propagator(p, z)
        return p.c * zeta**2 / (1 - p.c * zeta)

    r = 1.0
    total = tr.inverse_ft(scattered, 4, r).value + math.exp(-r) / tr.surface_area(4, r)
    assert total == pytest.approx(math.exp(-1) / math.pi**2, rel=1e-7)


def test_inverse_requires_scattered_transform():
    p = fp.TransportProblem(fp.parse_model("pearson"), 3, 0.5)
    with pytest.raises(NumericError):
        tr.inverse_ft(lambda z: fp.propagator(p, z), 3, 1.0)
    with pytest.raises(DomainError):
        tr.inverse_ft(lambda z: 1 / (1 + z**2), 3, 0.0)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_gaussian_round_trip(d):
    gauss = lambda r: np.exp(-np.asarray(r) ** 2 / 2)
    fbar = lambda z: tr.forward_ft(gauss, d, float(z), atol=1e-14).value
    for r in (0.5, 1.0, 2.0):
        back = tr.inverse_ft(fbar, d, r, check_decay=False, atol=1e-10).value
        assert back == pytest.approx(math.exp(-r * r / 2), rel=1e-6)


def test_diffusion_mode_examples():
    assert tr.diffusion_mode_kernel(3, 1.0, 1.0) == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-12)
    assert tr.diffusion_mode_kernel(1, 1.0, 1.0) == pytest.approx(math.exp(-1) / 2, rel=1e-12)
    assert tr.diffusion_mode_kernel(2, 1.0, 1.0) == pytest.approx(float(mp.besselk(0, 1)) / (2 * math.pi), rel=1e-12)


def test_diffusion_mode_errors():
    with pytest.raises(DivergenceError):
        tr.diffusion_mode_kernel(2, 1.0, 0.0)
    with pytest.raises(DomainError):
        tr.diffusion_mode_kernel(3, 0.0, 1.0)
    assert tr.diffusion_mode_kernel(1, 2.0, 0.0) == pytest.approx(0.25)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.1, max_value=5.0), st.floats(min_value=0.05, max_value=20.0))
def test_diffusion_mode_three_dimensional_form(length, r):
    want = math.exp(-r / length) / (4 * math.pi * r * length**2)
    assert tr.diffusion_mode_kernel(3, length, r) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("d", [1, 1.5, 2, 3, 4, 5])
@pytest.mark.parametrize("length", [0.5, 2.0])
def test_diffusion_mode_moments(d, length):
    f = lambda r: float(tr.surface_area(d, float(r)) * tr.diffusion_mode_kernel(d, length, float(r)))
    pts = [0, length, 5 * length, 40 * length, 2000 * length]
    assert float(mp.quad(f, pts)) == pytest.approx(1.0, rel=1e-7)
    second = float(mp.quad(lambda r: r * r * f(r), pts))
    assert second == pytest.approx(2 * d * length**2, rel=1e-7)


def test_moment_factor_low_orders():
    assert tr.moment_factor(3, 0) == pytest.approx(1.0)
    # m=2: -2 d times the z^2 coefficient
    assert tr.moment_factor(3, 2) == pytest.approx(-6.0)
    assert tr.moment_factor(1, 4) == pytest.approx(24.0)


def test_taylor_coefficients_of_known_function():
    coeffs, tail = tr.taylor_coefficients(lambda z: np.exp(-z * z), 0.5, 5)
    want = [(-1) ** j / math.factorial(j) for j in range(5)]
    # each further derivative costs accuracy
    np.testing.assert_allclose(coeffs[:3], want[:3], rtol=1e-10)
    np.testing.assert_allclose(coeffs[3:], want[3:], rtol=1e-6)
    assert tail < 1e-13


def test_even_moment_examples():
    p = fp.TransportProblem(fp.parse_model("exp"), 3, 0.5)
    total = lambda z: 1 / (1 - p.c * fp.propagator(p, z))
    assert tr.even_moment(total, 3, 0) == pytest.approx(2.0, rel=1e-9)
    # the m=2 entry of the collision block is 2/(1-c)^2 = 8 at c=1/2
    collision = lambda z: fp.propagator(p, z) / (1 - p.c * fp.propagator(p, z))
    assert tr.even_moment(collision, 3, 2) == pytest.approx(8.0, rel=1e-7)
    g = fp.TransportProblem(fp.parse_model("gamma:k=2"), 3, 0.5)
    assert tr.even_moment(lambda z: fp.propagator(g, z), 3, 2) == pytest.approx(1.5, rel=1e-7)


def test_even_moment_rejects_odd_order():
    with pytest.raises(DomainError):
        tr.even_moment(lambda z: np.exp(-z * z), 3, 3)


def test_even_moment_reports_failure():
    # a kink at the origin has no even Taylor series
    with pytest.raises(NumericError):
        tr.even_moment(lambda z: np.exp(-np.abs(z)), 3, 2)


@pytest.mark.parametrize("spec", ["exp", "gamma:k=2", "gamma:k=0.5", "chi:k=2", "pearson", "besselk:m=3"])
@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_even_moment_of_propagator_is_mean_square(spec, d):
    p = fp.TransportProblem(fp.parse_model(spec), d, 0.5)
    got = tr.even_moment(lambda z: fp.propagator(p, z), d, 2)
    assert got == pytest.approx(fp.mean_square(p.model), rel=1e-6)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_even_moment_of_diffusion_mode(d):
    length = 0.8
    fbar = lambda z: 1 / (1 + (z * length) ** 2)
    assert tr.even_moment(fbar, d, 2) == pytest.approx(2 * d * length**2, rel=1e-9)
    m4 = float(mp.quad(lambda r: r**4 * tr.surface_area(d, float(r)) * tr.diffusion_mode_kernel(d, length, float(r)),
                       [0, 1, 10, 100, 2000]))
    assert tr.even_moment(fbar, d, 4) == pytest.approx(m4, rel=1e-7)
