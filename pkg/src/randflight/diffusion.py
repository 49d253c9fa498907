"""Diffusion approximations: classical P1, Grosjean, and rigorous asymptotic.

All three are built from diffusion modes, the inverse transforms of
``1/(1 + (z nu)^2)``.  P1 and Grosjean lengths follow from moment matching
and need only <s^2> and int E s^2; rigorous modes come from the real roots
of ``1 - c zeta-bar(i chi) = 0`` and their residues.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import freepath as fp
from . import specfun
from .errors import BoundaryValueError, ConvergenceError, DomainError, NumericError, UnsupportedQueryError
from .transform import diffusion_mode_kernel, surface_area, taylor_coefficients

COLLISION = "collision"
FLUX = "flux"
P1 = "p1"
GROSJEAN = "grosjean"
RIGOROUS = "rigorous"

DEFAULT_CHI_MAX = 50.0


class TabulatedFormulaMismatch(UserWarning):
    """A tabulated diffusion length disagrees with the moment-matching value."""


def _check_quantity(quantity):
    if quantity not in (COLLISION, FLUX):
        raise DomainError(f"quantity must be {COLLISION!r} or {FLUX!r}")


def uncollided(problem: fp.TransportProblem, quantity: str, r):
    """p(r)/Omega_d(r) (collision) or E(r)/Omega_d(r) (flux)."""
    _check_quantity(quantity)
    model, d = problem.model, problem.d
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise DomainError("uncollided term requires r > 0")
    if isinstance(model, fp.Pearson):
        if quantity == COLLISION:
            if np.any(r == 1.0):
                raise BoundaryValueError("delta-shell uncollided collision density at r = 1")
            val = np.zeros_like(r)
        else:
            if np.any(r == 1.0):
                raise BoundaryValueError("uncollided flux jumps at r = 1")
            val = model.extinction(r) / surface_area(d, r)
    else:
        g = model.pdf(r) if quantity == COLLISION else model.extinction(r)
        val = g / surface_area(d, r)
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class DiffusionMode:
    nu: float
    weight: float


@dataclass
class DiffusionApproximation:
    """Optional uncollided term plus a weighted sum of diffusion modes."""

    quantity: str
    flavor: str
    include_uncollided: bool
    modes: list
    d: float
    problem: fp.TransportProblem | None = None
    breakdown: bool = False
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not m.nu > 0 for m in self.modes):
            raise DomainError("diffusion lengths must be positive")
        if self.flavor == GROSJEAN and not self.include_uncollided:
            raise DomainError("Grosjean approximation always carries the uncollided term")
        if self.flavor == P1 and len(self.modes) != 1:
            raise DomainError("P1 approximation has exactly one mode")

    def diffuse_part(self, r):
        r = np.asarray(r, dtype=float)
        total = np.zeros_like(r)
        for m in self.modes:
            if m.weight != 0.0:
                total = total + m.weight * diffusion_mode_kernel(self.d, m.nu, r)
        return float(total) if np.ndim(total) == 0 else total

    def __call__(self, r):
        val = self.diffuse_part(r)
        if self.include_uncollided:
            val = val + uncollided(self.problem, self.quantity, r)
        return val

    def moment(self, m: int) -> float:
        """Even moment int r^m Omega_d(r) f(r) dr, from the mode algebra."""
        if m % 2 or m < 0:
            raise DomainError("m must be a non-negative even integer")
        d, j = self.d, m // 2
        # moment of a unit diffusion mode: 4^j j! (d/2)_j nu^{2j}
        fac = 4 ** j * math.factorial(j) * math.exp(math.lgamma(d / 2 + j) - math.lgamma(d / 2))
        val = sum(mo.weight * fac * mo.nu ** m for mo in self.modes)
        if self.include_uncollided:
            model = self.problem.model
            val += model.raw_moment(m) if self.quantity == COLLISION else model.extinction_moment(m)
        return val


# ---------------------------------------------------------------------------
# moment-matching lengths

def _moments(problem, quantity):
    model = problem.model
    a = model.mean_square()
    e2 = model.mean_square_extinction() if quantity == FLUX else None
    return a, e2


def moment_matched_length_sq(problem: fp.TransportProblem, quantity: str, flavor: str) -> float:
    """nu^2 of the {0,2} moment-matched mode for the P1 or Grosjean ansatz."""
    _check_quantity(quantity)
    c, d = problem.c, problem.d
    a, e2 = _moments(problem, quantity)
    if flavor == P1:
        num = a if quantity == COLLISION else e2 * (1 - c) + c * a
    elif flavor == GROSJEAN:
        num = a * (2 - c) if quantity == COLLISION else e2 * (1 - c) + a
    else:
        raise DomainError(f"no moment-matched length for flavor {flavor!r}")
    return num / (2 * d * (1 - c))


def tabulated_length_sq(problem: fp.TransportProblem, quantity: str, flavor: str):
    """Per-family tabulated diffusion lengths squared, or None when not tabulated."""
    model, c, d = problem.model, problem.c, problem.d
    key = (quantity, flavor)
    if isinstance(model, fp.Exponential):
        table = {
            (COLLISION, P1): 1 / (d * (1 - c)),
            (FLUX, P1): 1 / (d * (1 - c)),
            (FLUX, GROSJEAN): (2 - c) / ((1 - c) * d),
        }
        return table.get(key)
    if isinstance(model, fp.Gamma):
        k = model.k
        table = {
            (COLLISION, P1): (k + 2) / (2 * d * k - 2 * c * d * k),
            (COLLISION, GROSJEAN): (c - 2) * (k + 1) / (2 * (c - 1) * d * k),
            (FLUX, P1): (-k - 1) * (2 * c * (k - 1) + k + 2) / (6 * (c - 1) * d * k ** 2),
            (FLUX, GROSJEAN): (k + 1) * (c * (k + 2) - 4 * k - 2) / (6 * (c - 1) * d * k ** 2),
        }
        return table.get(key)
    if isinstance(model, fp.Chi):
        k = model.k
        g2 = math.exp(2 * (math.lgamma(k / 2) - math.lgamma((k + 1) / 2)))
        table = {
            (COLLISION, P1): k * g2 / (4 * d * (1 - c)),
            (COLLISION, GROSJEAN): (2 - c) * k * g2 / (4 * (1 - c) * d),
            (FLUX, P1): (c * (2 * k - 1) + k + 1) * g2 / (12 * (1 - c) * d),
            (FLUX, GROSJEAN): ((c - 4) * k + c - 1) * g2 / (12 * (c - 1) * d),
        }
        return table.get(key)
    if isinstance(model, fp.Pearson):
        table = {
            (COLLISION, P1): 1 / (2 * (1 - c) * d),
            (COLLISION, GROSJEAN): (2 - c) / (2 * (1 - c) * d),
            (FLUX, P1): -(2 * c + 1) / (6 * (c - 1) * d),
            (FLUX, GROSJEAN): (c - 4) / (6 * (c - 1) * d),
        }
        return table.get(key)
    if isinstance(model, fp.BetaPrime):
        k = model.k
        table = {
            (COLLISION, P1): k / (2 * (1 - c) * d * (k - 2)),
            (COLLISION, GROSJEAN): (c - 2) * k / (2 * (c - 1) * d * (k - 2)),
        }
        return table.get(key)
    return None


def _cross_check(problem, quantity, flavor, nu2):
    tabulated = tabulated_length_sq(problem, quantity, flavor)
    if tabulated is not None and abs(tabulated - nu2) > 1e-9 * abs(nu2):
        warnings.warn(
            f"tabulated {flavor} {quantity} length^2 {tabulated:.12g} differs from the "
            f"moment-matched value {nu2:.12g} for {problem.model.spec_string()}, d={problem.d:g}; "
            "using the moment-matched value",
            TabulatedFormulaMismatch,
            stacklevel=3,
        )
    return tabulated


def p1_approximation(problem: fp.TransportProblem, quantity: str) -> DiffusionApproximation:
    """Single mode with weight 1/(1-c) matching the total m=0 and m=2 moments."""
    nu2 = moment_matched_length_sq(problem, quantity, P1)
    tabulated = _cross_check(problem, quantity, P1, nu2)
    return DiffusionApproximation(
        quantity, P1, False, [DiffusionMode(math.sqrt(nu2), 1 / (1 - problem.c))],
        problem.d, problem, notes={"tabulated_length_sq": tabulated},
    )


def grosjean_approximation(problem: fp.TransportProblem, quantity: str) -> DiffusionApproximation:
    """Exact uncollided term plus one mode matching the collided m=0 and m=2 moments."""
    nu2 = moment_matched_length_sq(problem, quantity, GROSJEAN)
    tabulated = _cross_check(problem, quantity, GROSJEAN, nu2)
    c = problem.c
    return DiffusionApproximation(
        quantity, GROSJEAN, True, [DiffusionMode(math.sqrt(nu2), c / (1 - c))],
        problem.d, problem, notes={"tabulated_length_sq": tabulated},
    )


# ---------------------------------------------------------------------------
# Pade {0,2} oracle

def pade_02(fbar, radius: float = 0.2):
    """Weight and nu^2 of the {0,2} Pade approximant a0/(1 + nu^2 z^2) of fbar.

    Uses the numerically fitted even Taylor series of fbar at z = 0.
    """
    coef, _ = taylor_coefficients(fbar, radius, 2)
    a0, a1 = coef
    return a0, -a1 / a0


def transformed_quantity(problem: fp.TransportProblem, quantity: str, part: str = "total"):
    """fbar(z) for the total, collided or scattered part of a quantity."""
    c = problem.c

    def zeta(z):
        return fp.propagator(problem, z)

    if quantity == COLLISION:
        if part == "total":
            return lambda z: zeta(z) / (1 - c * zeta(z))
        return lambda z: c * zeta(z) ** 2 / (1 - c * zeta(z))

    def xbar(z):
        return fp.stretched_propagator(problem, z)

    if part == "total":
        return lambda z: xbar(z) / (1 - c * zeta(z))
    return lambda z: c * xbar(z) * zeta(z) / (1 - c * zeta(z))


# ---------------------------------------------------------------------------
# discrete spectrum

@dataclass
class Spectrum:
    eigen_lengths: list
    chis: list
    residuals: list
    search_report: dict

    @property
    def breakdown(self) -> bool:
        return not self.eigen_lengths

    def __len__(self):
        return len(self.eigen_lengths)


def _h(problem, u, continuation=True):
    return fp.transform_u(problem, None, u, continuation=continuation)


def _char(problem, chi):
    return 1.0 - problem.c * _h(problem, -chi * chi)


def discrete_spectrum(problem: fp.TransportProblem, search_limit: float | None = None,
                      *, grid_points: int = 600, residual_tol: float = 1e-12) -> Spectrum:
    """Real roots chi = 1/nu of 1 - c zeta-bar(i chi) on the principal branch.

    The scan runs up to 0.999 of the abscissa of divergence (or
    ``search_limit``, default 50, when the transform is entire); meromorphic
    closed forms are continued past the abscissa with sign changes at poles
    rejected by the residual check.
    """
    model = problem.model
    absc = model.abscissa()
    closed = model.closed(problem.d, False)
    meromorphic = closed is not None and closed.meromorphic
    cap = DEFAULT_CHI_MAX if search_limit is None else float(search_limit)
    if absc == 0.0:
        return Spectrum([], [], [], {"reason": "algebraic tail: no imaginary-axis roots"})
    if math.isfinite(absc) and not meromorphic:
        upper = min(0.999 * absc, cap)
    else:
        upper = cap
    grid = np.unique(np.concatenate([
        np.geomspace(1e-4, upper, grid_points),
        np.linspace(upper * 0.9, upper, 60),
    ]))
    if meromorphic and math.isfinite(absc):
        grid = grid[np.abs(grid - absc) > 1e-9]
    with np.errstate(all="ignore"):
        if meromorphic:
            vals = np.asarray(_char(problem, grid), dtype=float)
        else:
            # zeta-bar(i chi) increases with chi, so the first sign change is the only one
            vals = np.full(len(grid), np.nan)
            for lo in range(0, len(grid), 64):
                chunk = slice(lo, lo + 64)
                try:
                    vals[chunk] = _char(problem, grid[chunk])
                except OverflowError:
                    for i in range(lo, min(lo + 64, len(grid))):
                        try:
                            vals[i] = float(_char(problem, grid[i]))
                        except OverflowError:
                            break
                if not np.all(vals[chunk] > 0):
                    break
    roots, resid, brackets = [], [], 0
    for i in range(len(grid) - 1):
        f0, f1 = vals[i], vals[i + 1]
        if not (np.isfinite(f0) and np.isfinite(f1)):
            continue
        if f0 == 0.0:
            cand = grid[i]
        elif np.sign(f0) != np.sign(f1):
            brackets += 1
            cand = optimize.brentq(lambda t: float(_char(problem, t)), grid[i], grid[i + 1],
                                   xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        else:
            continue
        res = float(_char(problem, cand))
        if abs(res) < residual_tol and not any(abs(cand - x) < 1e-12 for x in roots):
            roots.append(float(cand))
            resid.append(res)
    # root sitting exactly on the abscissa, where the transform stays finite
    at_edge = None
    if math.isfinite(absc) and absc > 0 and not meromorphic:
        try:
            edge_val = fp.value_at_abscissa(model, problem.d)
        except (DomainError, UnsupportedQueryError):
            edge_val = math.inf
        if math.isfinite(edge_val) and abs(1 - problem.c * edge_val) < residual_tol:
            roots.append(float(absc))
            resid.append(1 - problem.c * edge_val)
            at_edge = float(absc)
    order = np.argsort(roots)
    chis = [roots[i] for i in order]
    resid = [resid[i] for i in order]
    report = {"scan_upper": upper, "grid_points": len(grid), "brackets": brackets,
              "meromorphic": meromorphic, "root_at_abscissa": at_edge}
    return Spectrum([1 / x for x in chis], chis, resid, report)


def _consistent(problem, stretched):
    """One evaluation route for every stencil point, so differencing sees no seams."""
    model, d = problem.model, problem.d
    closed = model.closed(d, stretched)
    pf = model.pfq(d, stretched)
    tight = specfun.AccuracyPolicy(target_rel_error=1e-14)

    def h(u):
        u = np.asarray(u, dtype=float)
        if closed is not None:
            with np.errstate(all="ignore"):
                val = np.asarray(closed.func(u), dtype=float)
            if np.all(np.isfinite(val)):
                return val
        if pf is not None:
            try:
                return np.asarray(specfun.hyp_pfq(pf.upper, pf.lower, -pf.scale * u, tight))
            except ConvergenceError:
                pass
        return np.asarray(fp.transform_u(problem, None, u, stretched=stretched, continuation=True))

    return h


def _dh_du(problem, u0, scale):
    """Richardson-extrapolated central difference of h(u) = zeta-bar at u0."""
    h = _consistent(problem, False)

    def central(step):
        lo, hi = h(np.array([u0 - step, u0 + step]))
        return (hi - lo) / (2 * step)

    steps = [scale / 2 ** i for i in range(5)]
    table = [[central(s) for s in steps]]
    for level in range(1, len(steps)):
        prev = table[-1]
        fac = 4 ** level
        table.append([(fac * prev[i + 1] - prev[i]) / (fac - 1) for i in range(len(prev) - 1)])
    best, second = table[-1][0], table[-2][-1]
    if abs(best - second) > 1e-7 * abs(best):
        raise NumericError("derivative of the propagator is ill-conditioned at the root",
                           estimate=best, previous=second, u0=u0)
    return best


def _abscissa_derivative_diverges(model, d):
    pf = model.pfq(d, False)
    if pf is not None and len(pf.upper) == 2 and len(pf.lower) == 1:
        a, b = pf.upper
        (cc,) = pf.lower
        return cc - a - b <= 1
    return True


def residue_weight(problem: fp.TransportProblem, chi: float, quantity: str) -> float:
    """Weight of the diffusion mode of length 1/chi: -N(i chi) / (c h'(-chi^2) chi^2)."""
    _check_quantity(quantity)
    model, c = problem.model, problem.c
    absc = model.abscissa()
    closed = model.closed(problem.d, False)
    meromorphic = closed is not None and closed.meromorphic
    if math.isfinite(absc) and chi >= absc and not meromorphic:
        if _abscissa_derivative_diverges(model, problem.d):
            return 0.0
        raise NumericError("root on the abscissa with finite slope is not supported", chi=chi)
    u0 = -chi * chi
    scale = 0.05 * max(chi * chi, 1e-2)
    if math.isfinite(absc) and not meromorphic:
        scale = min(scale, 0.2 * (absc * absc - chi * chi))
    if meromorphic and math.isfinite(absc):
        scale = min(scale, 0.2 * abs(absc * absc - chi * chi))
    hprime = _dh_du(problem, u0, scale)
    if quantity == COLLISION:
        numer = _h(problem, u0)
    else:
        numer = fp.transform_u(problem, None, u0, stretched=True, continuation=True)
    return float(-numer / (c * hprime * chi * chi))


def rigorous_approximation(problem: fp.TransportProblem, quantity: str,
                           spectrum: Spectrum | None = None) -> DiffusionApproximation:
    """Sum of the discrete-spectrum diffusion modes; empty with ``breakdown`` set if none."""
    _check_quantity(quantity)
    if quantity == FLUX and not isinstance(problem.model, fp.Pearson):
        problem.model.mean_square_extinction()
    spec = discrete_spectrum(problem) if spectrum is None else spectrum
    modes = [DiffusionMode(1 / chi, residue_weight(problem, chi, quantity)) for chi in spec.chis]
    return DiffusionApproximation(quantity, RIGOROUS, False, modes, problem.d, problem,
                                  breakdown=spec.breakdown,
                                  notes={"spectrum": spec})
