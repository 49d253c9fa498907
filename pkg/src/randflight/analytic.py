"""Exact results: closed-form densities, benchmark fluxes and moments.

Every lookup returns ``UNAVAILABLE`` when no exact form is catalogued for
the requested family, dimension and quantity.  ``series_moment`` is an
independent exact route to any even moment, built from the raw moments of
the free-path distribution by power-series algebra in u = z**2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import freepath as fp
from . import specfun
from .errors import (BoundaryValueError, ConvergenceError, DivergenceError, DomainError,
                     UNAVAILABLE)
from .transform import surface_area

COLLISION = "collision"
FLUX = "flux"


# ---------------------------------------------------------------------------
# keys

@dataclass(frozen=True)
class Quantity:
    """Collision density or scalar flux, one order or summed, density or moment."""

    kind: str
    n: int | None = None
    m: int | None = None

    def __post_init__(self):
        if self.kind not in (COLLISION, FLUX):
            raise DomainError(f"unknown quantity kind {self.kind!r}")
        if self.n is not None:
            lowest = 1 if self.kind == COLLISION else 0
            if int(self.n) != self.n or self.n < lowest:
                raise DomainError(f"{self.kind} order must be an integer >= {lowest}")
        if self.m is not None and (int(self.m) != self.m or self.m < 0 or self.m % 2):
            raise DomainError("moment order must be a non-negative even integer")

    @property
    def total(self) -> bool:
        return self.n is None


def CollisionNth(n: int) -> Quantity:
    return Quantity(COLLISION, n)


def CollisionTotal() -> Quantity:
    return Quantity(COLLISION)


def FluxNth(n: int) -> Quantity:
    return Quantity(FLUX, n)


def FluxTotal() -> Quantity:
    return Quantity(FLUX)


def MomentCollision(m: int, n: int | None = None) -> Quantity:
    return Quantity(COLLISION, n, m)


def MomentFlux(m: int, n: int | None = None) -> Quantity:
    return Quantity(FLUX, n, m)


@dataclass(frozen=True)
class SolutionKey:
    problem: fp.TransportProblem
    quantity: Quantity


@dataclass(frozen=True)
class CaseologyConstants:
    """Discrete eigenvalue, its normalization and the continuum dispersion function."""

    nu0: float
    N0plus: float
    c: float

    def lam(self, nu):
        nu = np.asarray(nu, dtype=float)
        return 1.0 - self.c * nu * np.arctanh(nu)


# ---------------------------------------------------------------------------
# helpers

def _radius(r):
    r = np.asarray(r, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("densities are evaluated at r > 0")
    return r


def _out(val, like):
    val = np.asarray(val, dtype=float)
    return float(val) if np.ndim(like) == 0 else val


def _reject_jumps(r, jumps, what):
    hit = [j for j in jumps if np.any(np.isclose(r, j, rtol=0, atol=1e-12))]
    if hit:
        raise BoundaryValueError(f"{what} is discontinuous at r = {hit[0]:g}")


def _is(model, cls, param=None):
    if type(model) is not cls:
        return False
    return param is None or model.parameter == param


def _dim(d):
    return int(d) if float(d).is_integer() else None


# ---------------------------------------------------------------------------
# n-th collision densities

def _nth_collision_closed(problem, n, r):
    model, d, c = problem.model, _dim(problem.d), problem.c
    cn = c ** (n - 1)
    if isinstance(model, fp.Exponential):
        if d == 1:
            return 2 ** (0.5 - n) * np.sqrt(r) * (c * r) ** (n - 1) * special.kv(0.5 - n, r) / (
                math.sqrt(math.pi) * math.gamma(n))
        if d == 2:
            return 2 ** (-n / 2 - 1) * n * cn * r ** (n / 2 - 1) * special.kv(1 - n / 2, r) / (
                math.pi * math.gamma(n / 2 + 1))
        if d == 4 and n == 2:
            return -c * (r * r * special.expi(-r) + np.exp(-r) * (r - 1)) / (math.pi ** 2 * r * r)
        return None
    if _is(model, fp.Gamma, 2.0):
        if d == 1 and n == 2:
            return c * np.exp(-2 * r) * (8 * r ** 3 + 6 * r + 3) / 12
        if d == 1 and n == 3:
            return c * c * np.exp(-2 * r) * (2 * r * (r * (8 * r ** 3 + 30 * r + 45) + 45) + 45) / 240
        if d == 2:
            return 2 * cn * r ** (1.5 * n - 1) * special.kv(1 - 1.5 * n, 2 * r) / (
                math.pi * math.gamma(1.5 * n))
        if d == 3:
            return 2 * (c * r) ** (n - 1) * special.kv(1.5 - n, 2 * r) / (
                math.pi ** 1.5 * np.sqrt(r) * math.gamma(n))
        return None
    if _is(model, fp.Gamma, 0.5) and d == 1:
        if n == 2:
            return c * np.exp(-r / 2) * (2 * special.kve(0, r / 2) + math.pi) / (8 * math.pi)
        if n == 4:
            return c ** 3 * (math.pi * np.exp(-r / 2) * (r + 6)
                             + 8 * r * special.kv(1, r / 2)) / (64 * math.pi)
        return None
    if isinstance(model, fp.Chi):
        k = model.k
        if d is not None and k == d:
            lam2 = model.lam ** 2
            return cn * (math.pi * n / lam2) ** (-d / 2) * np.exp(-r * r * lam2 / n)
        if k == 3 and d == 1 and n == 2:
            pi = math.pi
            return c * np.exp(-2 * r * r / pi) * (16 * r ** 4 - 8 * pi * r * r + 3 * pi ** 2) / (
                2 * math.sqrt(2) * pi ** 3)
        if k == 4 and d == 2 and n == 2:
            pi = math.pi
            return 9 * c * np.exp(-9 * pi * r * r / 32) * (81 * pi ** 2 * r ** 4 + 2048) / 131072
        return None
    if isinstance(model, fp.Pearson):
        if d == 2 and n == 2:
            _reject_jumps(r, [2.0], "two-step density")
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.where(r < 2, c / (math.pi ** 2 * r * np.sqrt(np.abs(4 - r * r))), 0.0)
        if d == 2 and n == 3:
            if np.any(np.isclose(r, 1.0, rtol=0, atol=1e-12)):
                raise DivergenceError("three-step planar density has a log singularity at r = 1")
            return c * c * _pearson_planar_three(r)
        if d == 3 and n == 2:
            _reject_jumps(r, [2.0], "two-step density")
            return c * (np.sign(2 - r) + 1) / (16 * math.pi * r)
        if d == 3 and n == 3:
            return c * c * (np.abs(r - 3) - 3 * np.abs(r - 1) + 2 * r) / (32 * math.pi * r)
        if d == 3 and n == 4:
            return c ** 3 * (-(r - 4) * np.abs(r - 4) + 4 * (r - 2) * np.abs(r - 2)
                             + (8 - 3 * r) * r) / (128 * math.pi * r)
        return None
    return None


def _hyp2f1_third(x, y):
    """2F1(1/3, 2/3; 1; x) with y = 1 - x supplied exactly.

    Near x = 1 the Gauss series needs ~1/y terms, so the logarithmic
    expansion about x = 1 (the c = a + b case) is summed instead.
    """
    if y > 0.25:
        return specfun.hyp_pfq([1 / 3, 2 / 3], [1.0], x)
    a, b = 1 / 3, 2 / 3
    log_y = math.log(y)
    coef, total, n = 1.0, 0.0, 0
    while True:
        term = coef * (2 * special.digamma(n + 1) - special.digamma(a + n) - special.digamma(b + n) - log_y)
        total += term
        if abs(term) <= 1e-17 * abs(total):
            break
        coef *= (a + n) * (b + n) / ((n + 1) ** 2) * y
        n += 1
    return total / (math.gamma(a) * math.gamma(b))


def _pearson_planar_three(r):
    """Density of three unit planar steps, per unit area (r != 1)."""
    shape = np.shape(r)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    inside = r < 3
    ri = r[inside]
    x = ri * ri * (9 - ri * ri) ** 2 / (ri * ri + 3) ** 3
    y = 27 * ((ri - 1) * (ri + 1)) ** 2 / (ri * ri + 3) ** 3
    f = np.array([_hyp2f1_third(float(u), float(v)) for u, v in zip(x, y)])
    radial = 2 * math.sqrt(3) * ri * f / (math.pi * (ri * ri + 3))
    out[inside] = radial / (2 * math.pi * ri)
    return out.reshape(shape)


def nth_collision_density(problem: fp.TransportProblem, n: int, r):
    """Exact n-th collision density C(r|n), or ``UNAVAILABLE``."""
    Quantity(COLLISION, n)
    r_arr = _radius(r)
    model = problem.model
    if n == 1:
        if isinstance(model, fp.Pearson):
            _reject_jumps(r_arr, [1.0], "first-collision density (a unit shell)")
            return _out(np.zeros_like(r_arr), r)
        return _out(model.pdf(r_arr) / surface_area(problem.d, r_arr), r)
    val = _nth_collision_closed(problem, n, r_arr)
    if val is None:
        return UNAVAILABLE
    return _out(val, r)


# ---------------------------------------------------------------------------
# n-th scalar fluxes

_PEARSON_ROD_FLUX = {
    2: ((1.0, 3.0), lambda r: (np.sign(1 - r) + np.sign(3 - r) + 2) / 16),
    3: ((2.0, 4.0), lambda r: (2 * np.sign(2 - r) + np.sign(4 - r) + 3) / 32),
    4: ((1.0, 3.0, 5.0), lambda r: (2 * np.sign(1 - r) + 3 * np.sign(3 - r) + np.sign(5 - r) + 6) / 64),
    5: ((2.0, 4.0, 6.0), lambda r: (5 * np.sign(2 - r) + 4 * np.sign(4 - r) + np.sign(6 - r) + 10) / 128),
}


def nth_scalar_flux(problem: fp.TransportProblem, n: int, r):
    """Exact n-th scalar flux phi(r|n) (n = 0 is uncollided), or ``UNAVAILABLE``."""
    Quantity(FLUX, n)
    r_arr = _radius(r)
    model, d, c = problem.model, _dim(problem.d), problem.c
    if n == 0:
        if isinstance(model, fp.Pearson):
            _reject_jumps(r_arr, [1.0], "uncollided flux")
        return _out(model.extinction(r_arr) / surface_area(problem.d, r_arr), r)
    if isinstance(model, fp.Exponential):
        # unit-mean exponential: the flux of order n is the collision density of order n+1
        return nth_collision_density(problem, n + 1, r)
    if _is(model, fp.Gamma, 2.0) and d == 2:
        val = c ** n * r_arr ** (1.5 * n - 0.5) / (4 * math.gamma(1.5 * (n + 1))) * (2 / math.pi) * (
            2 * r_arr * special.kv(1.5 * (n - 1), 2 * r_arr) + 6 * n * special.kv((3 * n - 1) / 2, 2 * r_arr))
        return _out(val, r)
    if isinstance(model, fp.Pearson) and d == 1 and n in _PEARSON_ROD_FLUX:
        jumps, form = _PEARSON_ROD_FLUX[n]
        _reject_jumps(r_arr, jumps, f"flux of order {n}")
        return _out(c ** n * form(r_arr), r)
    return UNAVAILABLE


# ---------------------------------------------------------------------------
# totals

def caseology_constants(problem: fp.TransportProblem) -> CaseologyConstants:
    """nu0 and N0+ for the three-dimensional exponential problem."""
    from .diffusion import discrete_spectrum

    if not (isinstance(problem.model, fp.Exponential) and problem.d == 3):
        raise DomainError("caseology constants are tabulated for the 3D exponential problem only")
    c = problem.c
    spec = discrete_spectrum(problem)
    nu0 = spec.eigen_lengths[0]
    n0 = 0.5 * c * nu0 ** 3 * (c / (nu0 * nu0 - 1) - 1 / (nu0 * nu0))
    return CaseologyConstants(nu0, n0, c)


def davison_flux(problem: fp.TransportProblem, r):
    """Total scalar flux of the 3D exponential problem from its singular eigenfunctions."""
    cc = caseology_constants(problem)
    c, nu0 = problem.c, cc.nu0

    def continuum(y, rr):
        lam = 1 - (c / (2 * y)) * math.log((y + 1) / (y - 1))
        return math.exp(-rr * y) / ((math.pi * c / (2 * y)) ** 2 + lam * lam)

    def one(rr):
        disc = math.exp(-rr / nu0) / (nu0 * cc.N0plus)
        cont = integrate.quad(continuum, 1.0, 2.0, args=(rr,), epsabs=0, epsrel=1e-13, limit=200)[0]
        cont += integrate.quad(continuum, 2.0, np.inf, args=(rr,), epsabs=0, epsrel=1e-13, limit=200)[0]
        return (disc + cont) / (4 * math.pi * rr)

    r_arr = _radius(r)
    return _out(np.vectorize(one)(r_arr), r)


def liemert_flux(problem: fp.TransportProblem, r):
    """Total scalar flux of the planar exponential problem as a Bessel series."""
    if not (isinstance(problem.model, fp.Exponential) and problem.d == 2):
        raise DomainError("the Bessel series applies to the planar exponential problem")
    c = problem.c
    c2 = c * c

    def series(rr):
        # t_n = 2^{n+1/2} r^{n-1/2} n! c^{2n} K_{n-1/2}(r) / (sqrt(pi) (2n)!), via K-ratios
        term, ratio, total = c2 * math.exp(-rr), 1.0 + 1.0 / rr, 0.0
        n = 1
        while True:
            total += term
            nxt = term * rr * c2 * ratio / (2 * n + 1)
            if nxt <= 1e-17 * total:
                break
            ratio = 1.0 / ratio + (2 * n + 1) / rr
            term, n = nxt, n + 1
            if n > 10 ** 6:
                raise ConvergenceError("Bessel series failed to converge")
        return total

    r_arr = _radius(r)
    s = np.vectorize(series)(r_arr)
    val = (np.exp(-r_arr) / r_arr + c * special.k0(math.sqrt(1 - c2) * r_arr) + s) / (2 * math.pi)
    return _out(val, r)


def total_scalar_flux(problem: fp.TransportProblem, r):
    """Exact total scalar flux, or ``UNAVAILABLE``."""
    r_arr = _radius(r)
    model, d, c = problem.model, _dim(problem.d), problem.c
    if isinstance(model, fp.Exponential):
        if d == 1:
            k = math.sqrt(1 - c)
            return _out(np.exp(-k * r_arr) / (2 * k), r)
        if d == 2:
            return liemert_flux(problem, r)
        if d == 3:
            return davison_flux(problem, r)
        if d == 4 and c == 0.5:
            return _out(np.exp(-r_arr) * (1 + r_arr) / (2 * math.pi ** 2 * r_arr ** 3), r)
    return UNAVAILABLE


def total_collision_density(problem: fp.TransportProblem, r):
    """Exact total collision density, or ``UNAVAILABLE``."""
    r_arr = _radius(r)
    model, d, c = problem.model, _dim(problem.d), problem.c
    if isinstance(model, fp.Exponential):
        return total_scalar_flux(problem, r)
    if _is(model, fp.Gamma, 2.0):
        if d == 3:
            return _out(np.exp(-2 * math.sqrt(1 - c) * r_arr) / (math.pi * r_arr), r)
        if d == 1:
            root = math.sqrt(c * (c + 8))
            val = np.zeros_like(r_arr)
            for sgn in (1, -1):
                chi = math.sqrt(2 * (2 + c + sgn * root))
                val = val - (chi ** 4 - 16) * np.exp(-r_arr * chi) / (2 * c * chi * (chi * chi + 12))
            return _out(val, r)
    if isinstance(model, fp.BesselK) and problem.d == model.m:
        from .transform import diffusion_mode_kernel

        nu = 1 / (model.mu * math.sqrt(1 - c))
        return _out(diffusion_mode_kernel(problem.d, nu, r_arr) / (1 - c), r)
    return UNAVAILABLE


# ---------------------------------------------------------------------------
# moments

def _polylog_negative(order: int, c: float) -> float:
    """Li_{-order}(c) for 0 <= c < 1 by direct summation."""
    total, k = 0.0, 1
    while True:
        term = k ** order * c ** k
        total += term
        if k > order and term <= 1e-17 * total:
            return total
        k += 1


def _exp_moment(d, c, m, n, kind):
    # exponential flux moments follow from collision moments with the order shifted by one
    if kind == FLUX:
        n = None if n is None else n + 1
    if d == 1:
        if n is not None:
            return 2 ** m * c ** (n - 1) * math.gamma((m + 1) / 2) * math.gamma(m / 2 + n) / (
                math.sqrt(math.pi) * math.gamma(n))
        return (1 - c) ** (-m / 2 - 1) * math.gamma(m + 1)
    if d == 2:
        if n is not None:
            return 2 ** m * c ** (n - 1) * math.gamma(m / 2 + 1) * math.gamma((m + n) / 2) / math.gamma(n / 2)
        f = specfun.hyp_pfq([-0.5, -m / 2], [0.5], c * c)
        return (1 - c * c) ** (-m / 2 - 1) * (math.factorial(m) * f + c * 2 ** m * math.gamma(m / 2 + 1) ** 2)
    if d == 3:
        nth = {0: lambda n: 1, 2: lambda n: 2 * n, 4: lambda n: 4 / 3 * n * (5 * n + 13),
               6: lambda n: 8 / 9 * n * (35 * n * n + 273 * n + 502)}
        tot = {0: 1 / (1 - c), 2: 2 / (c - 1) ** 2, 4: 8 * (4 * c - 9) / (3 * (c - 1) ** 3),
               6: 16 * (44 * c * c - 144 * c + 135) / (3 * (c - 1) ** 4)}
    elif d == 4:
        nth = {0: lambda n: 1, 2: lambda n: 2 * n, 4: lambda n: 6 * n * (n + 3),
               6: lambda n: 24 * n * (n * n + 9 * n + 20)}
        tot = {0: 1 / (1 - c), 2: 2 / (c - 1) ** 2, 4: 12 * (c - 2) / (c - 1) ** 3,
               6: 144 * (2 * c * c - 6 * c + 5) / (c - 1) ** 4}
    else:
        nth = {0: lambda n: 1, 2: lambda n: 2 * n,
               4: lambda n: 4 * n * ((d + 2) * n + 5 * d - 2) / d,
               6: lambda n: 8 * n * (d * d * (n * (n + 15) + 74) + 6 * d * (n - 1) * (n + 10)
                                     + 8 * (n - 2) * (n - 1)) / d ** 2}
        tot = {0: 1 / (1 - c), 2: 2 / (c - 1) ** 2,
               4: 8 * (2 * c * (d - 1) - 3 * d) / ((c - 1) ** 3 * d),
               6: 48 * (2 * c * c * (d - 1) * (5 * d - 4) - 24 * c * (d - 1) * d + 15 * d * d)
               / ((c - 1) ** 4 * d * d)}
    if n is not None:
        return nth[m](n) * c ** (n - 1) if m in nth else None
    return tot.get(m)


def _gamma_moment(k, d, c, m, n, kind):
    if kind == COLLISION:
        nth = {0: lambda n: 1, 2: lambda n: (k + 1) * n / k,
               4: lambda n: (k + 1) * n * (d * (k * (k * n + n + 4) + 6) + 2 * k * (k + 1) * (n - 1)) / (d * k ** 3)}
        tot = {0: 1 / (1 - c), 2: (k + 1) / ((c - 1) ** 2 * k),
               4: -(k + 1) * (d * (c * ((k - 3) * k - 6) + (k + 2) * (k + 3)) + 4 * c * k * (k + 1))
               / ((c - 1) ** 3 * d * k ** 3)}
        if n is not None:
            return nth[m](n) * c ** (n - 1) if m in nth else None
        return tot.get(m)
    nth = {0: lambda n: 1, 2: lambda n: (k + 1) * (3 * k * n + k + 2) / (3 * k * k)}
    tot = {0: 1 / (1 - c), 2: (k + 1) * (2 * c * (k - 1) + k + 2) / (3 * (c - 1) ** 2 * k * k)}
    if n is not None:
        return nth[m](n) * c ** n if m in nth else None
    return tot.get(m)


def _chi_moment(k, d, c, m, n, kind):
    if k == 1 and d == 1 and kind == COLLISION:
        pre = math.pi ** ((m - 1) / 2) * math.gamma((m + 1) / 2)
        if n is not None:
            return pre * c ** (n - 1) * n ** (m / 2)
        return pre * _polylog_negative(m // 2, c) / c
    g2 = math.exp(2 * (math.lgamma(k / 2) - math.lgamma((k + 1) / 2)))
    if kind == COLLISION:
        nth = {0: lambda n: 1, 2: lambda n: k * n * g2 / 2,
               4: lambda n: k * n * g2 ** 2 * (d * (k * n + 2) + 2 * k * (n - 1)) / (4 * d)}
        tot = {0: 1 / (1 - c), 2: k * g2 / (2 * (c - 1) ** 2),
               4: -k * g2 ** 2 * (d * (c * (k - 2) + k + 2) + 4 * c * k) / (4 * (c - 1) ** 3 * d)}
        if n is not None:
            return nth[m](n) * c ** (n - 1) if m in nth else None
        return tot.get(m)
    nth = {0: lambda n: 1, 2: lambda n: (3 * k * n + k + 1) * g2 / 6,
           4: lambda n: g2 ** 2 * (15 * (d + 2) * k * k * n * n + 10 * k * n * (d * (k + 4) - k + 2)
                                   + 3 * d * (k + 1) * (k + 3)) / (60 * d)}
    tot = {0: 1 / (1 - c), 2: (c * (2 * k - 1) + k + 1) * g2 / (6 * (c - 1) ** 2)}
    if n is not None:
        return nth[m](n) * c ** n if m in nth else None
    return tot.get(m)


def _pearson_moment(d, c, m, n, kind):
    if kind == COLLISION:
        nth = {0: lambda n: 1, 2: lambda n: n, 4: lambda n: n * ((d + 2) * n - 2) / d,
               6: lambda n: n * ((d + 4) * n * ((d + 2) * n - 6) + 16) / d ** 2}
        tot = {0: 1 / (1 - c), 2: 1 / (1 - c) ** 2, 4: -(c * (d + 4) + d) / ((c - 1) ** 3 * d),
               6: (c * c * (d * (d + 12) + 48) + 4 * c * d * (d + 6) + d * d) / ((c - 1) ** 4 * d * d)}
        if n is not None:
            return nth[m](n) * c ** (n - 1) if m in nth else None
        return tot.get(m)
    nth = {0: lambda n: 1, 2: lambda n: (3 * n + 1) / 3,
           4: lambda n: (15 * (d + 2) * n * n + 10 * (d - 1) * n + 3 * d) / (15 * d)}
    tot = {0: 1 / (1 - c), 2: (2 * c + 1) / (3 * (c - 1) ** 2)}
    if n is not None:
        return nth[m](n) * c ** n if m in nth else None
    return tot.get(m)


def _generic_low_moment(problem, kind, m, n):
    """m = 0 and m = 2 hold for every family and dimension."""
    model, c = problem.model, problem.c
    if m == 0:
        if n is None:
            return 1 / (1 - c)
        return c ** (n - 1) if kind == COLLISION else c ** n
    a = model.mean_square()
    if kind == COLLISION:
        return a / (1 - c) ** 2 if n is None else n * a * c ** (n - 1)
    e2 = model.mean_square_extinction()
    if n is None:
        return (e2 * (1 - c) + c * a) / (1 - c) ** 2
    return c ** n * (n * a + e2)


def exact_moment(key: SolutionKey):
    """Tabulated even moment int r^m Omega_d(r) f(r) dr, or ``UNAVAILABLE``."""
    problem, q = key.problem, key.quantity
    if q.m is None:
        raise DomainError("exact_moment needs a moment quantity")
    model, d, c, m, n = problem.model, problem.d, problem.c, q.m, q.n
    val = None
    if isinstance(model, fp.Exponential):
        val = _exp_moment(d, c, m, n, q.kind)
    elif isinstance(model, fp.Gamma):
        val = _gamma_moment(model.k, d, c, m, n, q.kind)
    elif isinstance(model, fp.Chi):
        val = _chi_moment(model.k, d, c, m, n, q.kind)
    elif isinstance(model, fp.Pearson):
        val = _pearson_moment(d, c, m, n, q.kind)
    if val is None and m <= 2:
        val = _generic_low_moment(problem, q.kind, m, n)
    return UNAVAILABLE if val is None else float(val)


def _series_coefficients(problem, stretched, count):
    # coefficients of zeta-bar (or X-bar) in powers of u = z^2
    model, d = problem.model, problem.d
    out = np.empty(count)
    for j in range(count):
        poch = math.exp(math.lgamma(d / 2 + j) - math.lgamma(d / 2))
        mom = model.extinction_moment(2 * j) if stretched else model.raw_moment(2 * j)
        out[j] = (-1) ** j * mom / (4 ** j * math.factorial(j) * poch)
    return out


def _mul(a, b):
    return np.convolve(a, b)[: len(a)]


def _inv(a):
    out = np.zeros_like(a)
    out[0] = 1 / a[0]
    for j in range(1, len(a)):
        out[j] = -np.dot(a[1: j + 1], out[j - 1:: -1][:j]) / a[0]
    return out


def series_moment(problem: fp.TransportProblem, quantity: Quantity, max_order: int | None = None) -> float:
    """Even moment from power-series algebra on the raw moments of the free path.

    With ``max_order`` set, total quantities are summed over orders up to it.
    """
    if quantity.m is None:
        raise DomainError("series_moment needs a moment quantity")
    c, d, m = problem.c, problem.d, quantity.m
    count = m // 2 + 1
    zeta = _series_coefficients(problem, False, count)
    lead = _series_coefficients(problem, True, count) if quantity.kind == FLUX else zeta
    flux = quantity.kind == FLUX
    one = np.eye(count)[0]

    def order_term(order):
        # c^{n-1} zeta^n for collisions, c^n X zeta^n for fluxes
        power = one
        for _ in range(order):
            power = _mul(power, zeta)
        return (_mul(lead, power) * c ** order) if flux else power * c ** (order - 1)

    if quantity.n is not None:
        series = order_term(quantity.n)
    elif max_order is None:
        denom = -c * zeta
        denom[0] += 1.0
        series = _mul(lead, _inv(denom))
    else:
        series = sum(order_term(o) for o in range(0 if flux else 1, max_order + 1))
    j = m // 2
    poch = math.exp(math.lgamma(d / 2 + j) - math.lgamma(d / 2))
    return float((-1) ** j * 4 ** j * math.factorial(j) * poch * series[j])
