"""Radially symmetric d-dimensional Fourier transforms.

Both directions are written with the normalized kernel
``Lambda_nu(x) = Gamma(nu+1) (2/x)^nu J_nu(x)`` (``nu = d/2 - 1``)::

    fbar(z) = int_0^inf Omega_d(r) f(r) Lambda_nu(r z) dr
    f(r)    = int_0^inf Omega_d(z) / (2 pi)^d fbar(z) Lambda_nu(r z) dz

which is algebraically identical to the textbook pair with r^{d/2} J_nu and
z^{1-d/2} prefactors, but is finite at the origin and makes the transform
of a radial probability density the expectation of the kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy import integrate, special

from .errors import DivergenceError, DomainError, NumericError
from .specfun import bessel_j_zeros, bessel_lambda, wynn_epsilon


@dataclass(frozen=True)
class RadialFunction:
    """A radial function of r >= 0 in ``d`` dimensions."""

    evaluator: Callable
    d: float
    decay_hint: str = "exponential"

    def __call__(self, r):
        return self.evaluator(r)


@dataclass(frozen=True)
class QuadratureReport:
    value: float
    est_error: float
    panels_used: int
    extrapolation_order: int

    def __float__(self):
        return float(self.value)


_EPS = np.finfo(float).eps


def surface_area(d: float, r):
    """Area of the (d-1)-sphere of radius r."""
    return d * np.power(r, d - 1) * math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def ball_volume(d: float, r):
    """Volume of the d-ball of radius r."""
    return np.power(r, d) * math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def as_vectorized(fn: Callable) -> Callable:
    """Wrap ``fn`` so that it maps float arrays to float arrays."""

    def call(x):
        x = np.asarray(x, dtype=float)
        try:
            y = np.asarray(fn(x), dtype=float)
            if y.shape == x.shape:
                return y
        except Exception:
            pass
        return np.array([float(fn(float(t))) for t in x.ravel()]).reshape(x.shape)

    return call


_GL_X32, _GL_W32 = np.polynomial.legendre.leggauss(32)
_GL_X16, _GL_W16 = np.polynomial.legendre.leggauss(16)


def _panel(fun, a, b, rtol, atol):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    v32 = half * np.dot(_GL_W32, fun(mid + half * _GL_X32))
    v16 = half * np.dot(_GL_W16, fun(mid + half * _GL_X16))
    if abs(v32 - v16) <= max(atol, rtol * abs(v32)):
        return v32, abs(v32 - v16)
    val, err = integrate.quad(lambda t: float(fun(np.array([t]))[0]), a, b,
                              epsabs=atol, epsrel=rtol, limit=200)
    return val, err


def hankel_expectation(
    g: Callable,
    nu: float,
    z: float,
    *,
    breakpoints=(),
    rtol: float = 1e-11,
    atol: float = 1e-300,
    max_panels: int = 5000,
) -> QuadratureReport:
    """Compute ``int_0^inf g(s) Lambda_nu(s z) ds`` by panels between kernel zeros.

    Panel sums are accumulated until either the panels become negligible or
    Wynn's epsilon extrapolation of the partial sums settles.
    """
    g = as_vectorized(g)
    z = float(z)
    bps = sorted(float(b) for b in breakpoints if b > 0)
    if z == 0.0:
        pts = [0.0] + bps
        total, err = 0.0, 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            v, e = integrate.quad(lambda t: float(g(np.array([t]))[0]), a, b,
                                  epsabs=atol, epsrel=rtol, limit=200)
            total, err = total + v, err + e
        v, e = integrate.quad(lambda t: float(g(np.array([t]))[0]), pts[-1], np.inf,
                              epsabs=atol, epsrel=rtol, limit=400)
        return QuadratureReport(total + v, err + e, len(pts), 0)

    def integrand(s):
        return g(s) * bessel_lambda(nu, s * z)

    # panel edges: kernel zeros, refined by user breakpoints
    zeros = bessel_j_zeros(max(nu, -0.5), 64) / z
    next_zero = 0
    bp_iter = iter(bps)
    pending_bp = next(bp_iter, None)

    def next_edge(last):
        nonlocal next_zero, zeros, pending_bp
        if next_zero >= len(zeros):
            more = bessel_j_zeros(max(nu, -0.5), 2 * len(zeros)) / z
            zeros = more
        cand = zeros[next_zero]
        if pending_bp is not None and pending_bp <= cand:
            edge = pending_bp
            pending_bp = next(bp_iter, None)
            if edge == cand:
                next_zero += 1
            return edge
        next_zero += 1
        return cand

    # first stretch to the first zero uses adaptive quadrature (endpoint singularities)
    partial, total, errsum = [], 0.0, 0.0
    small_run, panels, order = 0, 0, 0
    last_est, est_err = None, math.inf
    a = 0.0
    while panels < max_panels:
        b = next_edge(a)
        if panels == 0:
            v, e = integrate.quad(lambda t: float(integrand(np.array([t]))[0]), a, b,
                                  epsabs=atol, epsrel=rtol, limit=200)
        else:
            v, e = _panel(integrand, a, b, rtol * 1e-2, atol)
        panels += 1
        total += v
        errsum += e
        partial.append(total)
        a = b
        scale = max(abs(total), atol)
        if abs(v) <= 1e-16 * scale:
            small_run += 1
            if small_run >= 3 and (pending_bp is None):
                return QuadratureReport(total, errsum + abs(v), panels, 0)
        else:
            small_run = 0
        if panels >= 6 and pending_bp is None:
            window = partial[-min(len(partial), 40):]
            est, werr, order = wynn_epsilon(window)
            if last_est is not None:
                est_err = max(abs(est - last_est), werr if math.isfinite(werr) else 0.0)
                if est_err <= rtol * abs(est) + atol and panels >= 10:
                    return QuadratureReport(est, est_err + errsum * 1e-3, panels, order)
            last_est = est
    raise NumericError(
        "panel budget exhausted in oscillatory quadrature",
        panels=panels, last_estimate=last_est, est_error=est_err, nu=nu, z=z,
    )


def forward_ft(f, d: float, z: float, **kw) -> QuadratureReport:
    """d-dimensional radial Fourier transform of ``f`` at ``z``."""
    if z < 0:
        raise DomainError("forward_ft requires z >= 0")
    fn = as_vectorized(f)

    def g(r):
        return surface_area(d, r) * fn(r)

    return hankel_expectation(g, d / 2 - 1, z, **kw)


def _check_decay(fbar, d, r):
    zs = np.geomspace(20.0, 2000.0, 61)
    env = np.abs(fbar(zs)) * zs ** ((d - 1) / 2)
    early, late = env[:20].max(), env[-20:].max()
    if not late < 0.5 * early and late > 1e-14:
        raise NumericError(
            "scattered transform decays too slowly for inversion; "
            "strip the uncollided term first",
            envelope_early=early, envelope_late=late, d=d, r=r,
        )


def inverse_ft(fbar, d: float, r: float, *, check_decay: bool = True, **kw) -> QuadratureReport:
    """Inverse d-dimensional radial Fourier transform of ``fbar`` at ``r``.

    ``fbar`` should be a scattered-only transform: the integrand envelope
    ``z^{(d-1)/2} fbar(z)`` must decay for the oscillatory quadrature and
    its extrapolation to be meaningful.
    """
    if not r > 0:
        raise DomainError("inverse_ft requires r > 0")
    fb = as_vectorized(fbar)
    if check_decay:
        _check_decay(fb, d, r)
    norm = 1.0 / (2 * math.pi) ** d

    def g(z):
        return norm * surface_area(d, z) * fb(z)

    return hankel_expectation(g, d / 2 - 1, r, **kw)


def diffusion_mode_kernel(d: float, nu, r):
    """Inverse transform of 1/(1 + (z nu)^2) in d dimensions."""
    nu = np.asarray(nu, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(nu <= 0):
        raise DomainError("diffusion length must be positive")
    if np.any(r_arr < 0):
        raise DomainError("radius must be non-negative")
    if d >= 2 and np.any(r_arr == 0):
        raise DivergenceError("diffusion mode diverges at r = 0 for d >= 2")
    order = (d - 2) / 2
    x = r_arr / nu
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(
            r_arr > 0,
            np.power(r_arr, 1 - d / 2) * special.kve(order, x) * np.exp(-x),
            # d < 2 limit: r^{1-d/2} K_{(d-2)/2}(r/nu) -> Gamma(1-d/2) 2^{-d/2} nu^{1-d/2}
            math.gamma(1 - d / 2) * 2 ** (-d / 2) * np.power(nu, 1 - d / 2) if d < 2 else 0.0,
        )
    # exp(-x) has underflowed long before kve stops returning finite values
    radial = np.where(x > 1e3, 0.0, radial)
    val = (2 * math.pi) ** (-d / 2) * np.power(nu, -d / 2 - 1) * radial
    return float(val) if np.ndim(val) == 0 else val


def taylor_coefficients(fbar, radius: float, count: int, *, max_degree: int = 160,
                        oversample: int = 4):
    """Coefficients a_j of fbar(z) = sum_j a_j z^{2j}, j < count.

    fbar is least-squares fitted by an even Chebyshev series on
    [-radius, radius] (only |z| is ever evaluated), with ``oversample``
    times more nodes than the degree to average out rounding noise.  The
    degree grows until the trailing coefficients reach the rounding plateau,
    then the series is differentiated at the centre.  ``radius`` must sit
    inside the disc of analyticity of fbar.  The trailing coefficients on the
    rounding floor are dropped before differentiating.  Returns the
    coefficients and the
    relative size of the trailing Chebyshev coefficients.
    """
    fb = as_vectorized(fbar)
    deg = 16
    while True:
        npts = oversample * (deg + 1)
        x = np.cos(np.pi * (np.arange(npts) + 0.5) / npts)
        coef = C.chebfit(x, fb(radius * np.abs(x)), deg)
        coef[1::2] = 0.0
        head = np.abs(coef).max()
        tail = np.abs(coef[-4:]).max()
        if tail <= 4e-16 * head or deg >= max_degree:
            break
        deg = min(2 * deg, max_degree)
    # coefficients at the rounding floor are noise that differentiation amplifies like n^{2j}
    above = np.nonzero(np.abs(coef[::2]) > 8 * _EPS * head)[0]
    coef = coef[: 2 * above[-1] + 1] if above.size else coef[:1]
    out = np.empty(count)
    for j in range(count):
        dj = C.chebval(0.0, C.chebder(coef, 2 * j)) if j else C.chebval(0.0, coef)
        out[j] = dj / (math.factorial(2 * j) * radius ** (2 * j))
    return out, tail / max(head, 1e-300)


def moment_factor(d: float, m: int) -> float:
    """Multiplier turning the z^m Taylor coefficient into the r^m moment."""
    j = m // 2
    return (-1) ** j * math.factorial(m) * math.sqrt(math.pi) * math.gamma((d + m) / 2) / (
        math.gamma(d / 2) * math.gamma((m + 1) / 2)
    )


_MOMENT_RADII = (0.125, 0.18, 0.25, 0.35, 0.5, 0.7)
_PLATEAU = 1e-13


def even_moment(fbar, d: float, m: int, radius: float | None = None, *, rtol: float = 1e-6) -> float:
    """``int_0^inf r^m Omega_d(r) f(r) dr`` from the even Taylor series of fbar at 0.

    Rounding in the sampled values limits the z^m coefficient to an error
    that shrinks like radius^-m, so the fit walks up a ladder of radii and
    stops at the first one whose Chebyshev series no longer reaches the
    rounding plateau (a singularity is too close).  The change between
    adjacent radii, scaled by that power law, estimates the error of the
    larger fit; the first radius with an estimate below ``rtol / 100`` is
    accepted.  With ``radius`` the ladder is ``(0.7 * radius, radius)``.
    ``NumericError`` is raised when no adjacent pair agrees to ``rtol``.
    """
    if m < 0 or m % 2:
        raise DomainError("m must be a non-negative even integer")
    j = m // 2
    fac = moment_factor(d, m)
    radii = _MOMENT_RADII if radius is None else (0.7 * radius, radius)
    vals, candidates = [], []
    for i, rad in enumerate(radii):
        try:
            a, tail = taylor_coefficients(fbar, rad, j + 1)
        except (ArithmeticError, ValueError):
            break
        if tail > _PLATEAU and vals:
            break
        vals.append(fac * a[j])
        if len(vals) < 2:
            continue
        diff = abs(vals[-1] - vals[-2]) / max(abs(vals[-1]), 1e-300)
        est = diff * (radii[i - 1] / rad) ** m
        if diff <= rtol:
            candidates.append((est, vals[-1]))
            if est <= 1e-2 * rtol:
                break
    if not candidates:
        raise NumericError("moment fit is not stable under radius refinement",
                           values=[float(v) for v in vals], radii=list(radii[:len(vals)]), m=m)
    return float(min(candidates)[1])
