"""Free-path distribution families and their transformed propagators.

Every family is scaled to unit mean free path.  Transforms are written as
functions of ``u = z**2``; negative ``u`` is an imaginary wavenumber
``z = i chi`` with ``u = -chi**2``, which is what the spectral root search
needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, special

from . import specfun
from .errors import ConvergenceError, DomainError, UnsupportedQueryError
from .transform import hankel_expectation


class PfqForm(NamedTuple):
    """Transform as pFq(upper; lower; -scale * u)."""

    upper: tuple
    lower: tuple
    scale: float


class ClosedForm(NamedTuple):
    """Closed-form transform as a vectorized function of u = z**2.

    ``meromorphic`` forms stay valid past the abscissa of divergence of the
    defining integral (analytic continuation with poles only).
    """

    func: Callable
    meromorphic: bool = False


def _atan_ratio(u):
    # arctan(sqrt u)/sqrt u, continued to artanh for u < 0
    u = np.asarray(u, dtype=float)
    out = np.ones_like(u)
    pos, neg = u > 0, u < 0
    ru = np.sqrt(np.abs(u))
    out[pos] = np.arctan(ru[pos]) / ru[pos]
    with np.errstate(divide="ignore"):
        out[neg] = np.arctanh(ru[neg]) / ru[neg]
    return out


_EXP_CLOSED = {
    1: ClosedForm(lambda u: 1.0 / (1.0 + u), True),
    2: ClosedForm(lambda u: 1.0 / np.sqrt(1.0 + u)),
    3: ClosedForm(_atan_ratio),
    4: ClosedForm(lambda u: 2.0 * (np.sqrt(1.0 + u) - 1.0) / u),
    5: ClosedForm(lambda u: 3.0 * ((u + 1.0) * _atan_ratio(u) - 1.0) / (2.0 * u)),
    6: ClosedForm(lambda u: 4.0 * (2.0 * (1.0 + u) ** 1.5 - 3.0 * u - 2.0) / (3.0 * u * u)),
}

_GAMMA_CLOSED = {
    (2, 1): ClosedForm(lambda u: -4.0 * (u - 4.0) / (u + 4.0) ** 2, True),
    (3, 1): ClosedForm(lambda u: -243.0 * (u - 3.0) / (u + 9.0) ** 3, True),
    (4, 1): ClosedForm(lambda u: 256.0 * (u * u - 96.0 * u + 256.0) / (u + 16.0) ** 4, True),
    (2, 2): ClosedForm(lambda u: 8.0 / (u + 4.0) ** 1.5),
    (3, 2): ClosedForm(lambda u: -27.0 * (u - 18.0) / (2.0 * (u + 9.0) ** 2.5)),
    (4, 2): ClosedForm(lambda u: -512.0 * (3.0 * u - 32.0) / (u + 16.0) ** 3.5),
    (2, 3): ClosedForm(lambda u: 4.0 / (u + 4.0), True),
    (3, 3): ClosedForm(lambda u: 81.0 / (u + 9.0) ** 2, True),
    (4, 3): ClosedForm(lambda u: -256.0 * (u - 48.0) / (3.0 * (u + 16.0) ** 3), True),
    (2, 4): ClosedForm(lambda u: (8.0 - 16.0 / np.sqrt(u + 4.0)) / u),
    (3, 4): ClosedForm(lambda u: 27.0 / (u + 9.0) ** 1.5),
    (4, 4): ClosedForm(lambda u: (1.0 + u / 16.0) ** -2.5),
    (2, 5): ClosedForm(lambda u: 12.0 / u * (1.0 - _atan_ratio(u / 4.0))),
    (3, 5): ClosedForm(
        lambda u: 81.0 * ((u + 9.0) * _atan_ratio(u / 9.0) / 3.0 - 3.0) / (2.0 * u * (u + 9.0))
    ),
    (4, 5): ClosedForm(lambda u: 256.0 / (u + 16.0) ** 2, True),
    (0.5, 1): ClosedForm(
        lambda u: np.sqrt((np.sqrt(1.0 + 4.0 * u) + 1.0) / (2.0 * (1.0 + 4.0 * u)))
    ),
}


def _cancel(upper, lower):
    upper, lower = list(upper), list(lower)
    for a in list(upper):
        if a in lower:
            upper.remove(a)
            lower.remove(a)
    return tuple(upper), tuple(lower)


def _int_key(x: float):
    return int(x) if float(x).is_integer() else x


class FreePathModel:
    """Base class for unit-mean free-path distributions."""

    family: str = ""
    parameter: float | None = None
    has_density: bool = True

    # --- distribution ---------------------------------------------------
    def pdf(self, s):
        raise NotImplementedError

    def extinction(self, s):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def raw_moment(self, q: float) -> float:
        """E[s**q]."""
        raise NotImplementedError

    def mean_square(self) -> float:
        return self.raw_moment(2)

    def mean_square_extinction(self) -> float:
        """int_0^inf E(s) s^2 ds."""
        return self.raw_moment(3) / 3.0

    def extinction_moment(self, q: float) -> float:
        """int_0^inf E(s) s^q ds."""
        return self.raw_moment(q + 1) / (q + 1)

    # --- transform metadata ----------------------------------------------
    def abscissa(self) -> float:
        """Largest chi for which the imaginary-argument transforms converge."""
        return math.inf

    def pfq(self, d: float, stretched: bool) -> PfqForm | None:
        return None

    def closed(self, d: float, stretched: bool) -> ClosedForm | None:
        return None

    def breakpoints(self) -> tuple:
        return ()

    def quadrature_only(self, stretched: bool) -> bool:
        return False

    # --- misc ------------------------------------------------------------
    def spec_string(self) -> str:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.spec_string()!r})"

    def __eq__(self, other):
        return type(self) is type(other) and self.parameter == other.parameter

    def __hash__(self):
        return hash((type(self).__name__, self.parameter))


class Gamma(FreePathModel):
    """p(s) = k^k s^{k-1} e^{-ks} / Gamma(k)."""

    family = "Gamma"

    def __init__(self, k: float):
        k = float(k)
        if not k > 0:
            raise DomainError("Gamma family requires k > 0")
        self.parameter = k
        self.k = k

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("pdf requires s >= 0")
        k = self.k
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = k * math.log(k) + special.xlogy(k - 1, s) - k * s - math.lgamma(k)
        val = np.where(np.isinf(s), 0.0, np.exp(np.where(np.isnan(logp), -np.inf, logp)))
        return float(val) if np.ndim(val) == 0 else val

    def extinction(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("extinction requires s >= 0")
        return specfun.upper_gamma_regularized(self.k, self.k * s)

    def sample(self, rng, size=None):
        return rng.gamma(self.k, 1.0 / self.k, size)

    def raw_moment(self, q):
        if q <= -self.k:
            raise DomainError("moment diverges")
        return math.exp(math.lgamma(self.k + q) - math.lgamma(self.k) - q * math.log(self.k))

    def abscissa(self):
        return self.k

    def pfq(self, d, stretched):
        k = self.k
        if stretched:
            up, lo = _cancel((0.5, (k + 1) / 2, k / 2 + 1), (1.5, d / 2))
        else:
            up, lo = _cancel((k / 2, (k + 1) / 2), (d / 2,))
        return PfqForm(up, lo, 1.0 / (k * k))

    def closed(self, d, stretched):
        if self.k == 1:
            return _EXP_CLOSED.get(_int_key(d))
        if stretched:
            return None
        return _GAMMA_CLOSED.get((_int_key(self.k), _int_key(d)))

    def spec_string(self):
        return f"gamma:k={self.k:g}"


class Exponential(Gamma):
    """p(s) = e^{-s}; the Gamma family at k = 1."""

    family = "Exponential"

    def __init__(self):
        super().__init__(1.0)

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("pdf requires s >= 0")
        val = np.exp(-s)
        return float(val) if np.ndim(val) == 0 else val

    def extinction(self, s):
        return self.pdf(s)

    def sample(self, rng, size=None):
        return rng.exponential(1.0, size)

    def raw_moment(self, q):
        if q <= -1:
            raise DomainError("moment diverges")
        return math.gamma(q + 1)

    def pfq(self, d, stretched):
        up, lo = _cancel((0.5, 1.0), (d / 2,))
        return PfqForm(up, lo, 1.0)

    def spec_string(self):
        return "exp"


class Chi(FreePathModel):
    """p(s) = 2 lam^k s^{k-1} e^{-lam^2 s^2} / Gamma(k/2), lam = Gamma((k+1)/2)/Gamma(k/2)."""

    family = "Chi"

    def __init__(self, k: float):
        k = float(k)
        if not k >= 1:
            raise DomainError("Chi family requires k >= 1")
        self.parameter = k
        self.k = k
        self.lam = math.exp(math.lgamma((k + 1) / 2) - math.lgamma(k / 2))

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("pdf requires s >= 0")
        k, lam = self.k, self.lam
        with np.errstate(invalid="ignore", over="ignore"):
            logp = (math.log(2) + k * math.log(lam) + special.xlogy(k - 1, s)
                    - (lam * s) ** 2 - math.lgamma(k / 2))
        val = np.where(np.isinf(s), 0.0, np.exp(np.where(np.isnan(logp), -np.inf, logp)))
        return float(val) if np.ndim(val) == 0 else val

    def extinction(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("extinction requires s >= 0")
        return specfun.upper_gamma_regularized(self.k / 2, (self.lam * s) ** 2)

    def sample(self, rng, size=None):
        return np.sqrt(rng.gamma(self.k / 2, 1.0, size)) / self.lam

    def raw_moment(self, q):
        if q <= -self.k:
            raise DomainError("moment diverges")
        return math.exp(math.lgamma((self.k + q) / 2) - math.lgamma(self.k / 2)
                        - q * math.log(self.lam))

    def pfq(self, d, stretched):
        k = self.k
        if stretched:
            up, lo = _cancel((0.5, (k + 1) / 2), (1.5, d / 2))
        else:
            up, lo = _cancel((k / 2,), (d / 2,))
        return PfqForm(up, lo, 1.0 / (4 * self.lam ** 2))

    def closed(self, d, stretched):
        if stretched:
            return None
        a = 1.0 / (4 * self.lam ** 2)
        if self.k == d:
            return ClosedForm(lambda u: np.exp(-a * u), True)
        key = (_int_key(self.k), _int_key(d))
        if key == (3, 1):
            return ClosedForm(lambda u: np.exp(-a * u) * (1 - 2 * a * u), True)
        if key == (4, 2):
            return ClosedForm(lambda u: np.exp(-a * u) * (1 - a * u), True)
        return None

    def spec_string(self):
        return f"chi:k={self.k:g}"


class BetaPrime(FreePathModel):
    """p(s) = s^{k-2} (1+s)^{1-2k} / B(k-1, k): algebraic tail, unit mean."""

    family = "BetaPrime"

    def __init__(self, k: float):
        k = float(k)
        if not k > 2:
            raise DomainError("BetaPrime family requires k > 2")
        self.parameter = k
        self.k = k

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("pdf requires s >= 0")
        k = self.k
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = special.xlogy(k - 2, s) + (1 - 2 * k) * np.log1p(s) - special.betaln(k - 1, k)
        val = np.where(np.isinf(s), 0.0, np.exp(np.where(np.isnan(logp), -np.inf, logp)))
        return float(val) if np.ndim(val) == 0 else val

    def extinction(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("extinction requires s >= 0")
        val = special.betainc(self.k, self.k - 1, 1.0 / (1.0 + s))
        return float(val) if np.ndim(val) == 0 else val

    def sample(self, rng, size=None):
        return rng.gamma(self.k - 1, 1.0, size) / rng.gamma(self.k, 1.0, size)

    def raw_moment(self, q):
        k = self.k
        if not -(k - 1) < q < k:
            raise DomainError(f"moment of order {q} diverges for BetaPrime k={k:g}")
        return math.exp(math.lgamma(k - 1 + q) + math.lgamma(k - q)
                        - math.lgamma(k - 1) - math.lgamma(k))

    def abscissa(self):
        return 0.0

    def quadrature_only(self, stretched):
        return True

    def spec_string(self):
        return f"betaprime:k={self.k:g}"


class Pearson(FreePathModel):
    """Fixed step length: p(s) = delta(s - 1)."""

    family = "Pearson"
    has_density = False

    def pdf(self, s):
        raise UnsupportedQueryError(
            "Pearson walk has a delta density; use sample() or extinction()"
        )

    def extinction(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("extinction requires s >= 0")
        val = np.where(s < 1.0, 1.0, 0.0)
        return float(val) if np.ndim(val) == 0 else val

    def sample(self, rng, size=None):
        return 1.0 if size is None else np.ones(size)

    def raw_moment(self, q):
        return 1.0

    def pfq(self, d, stretched):
        if stretched:
            return PfqForm((0.5,), (1.5, d / 2), 0.25)
        return PfqForm((), (d / 2,), 0.25)

    def closed(self, d, stretched):
        nu = d / 2 - 1
        if not stretched:
            return ClosedForm(lambda u: _lambda_of_u(nu, u), True)
        if d == 1:
            return ClosedForm(lambda u: _sinc_of_u(u), True)
        if d == 3:
            return ClosedForm(_si_ratio, True)
        return None

    def breakpoints(self):
        return (1.0,)

    def spec_string(self):
        return "pearson"


def _lambda_of_u(nu, u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = specfun.bessel_lambda(nu, np.sqrt(u[pos]))
    out[~pos] = specfun.bessel_lambda_imag(nu, np.sqrt(-u[~pos]))
    return out


def _sinc_of_u(u):
    u = np.asarray(u, dtype=float)
    r = np.sqrt(np.abs(u))
    out = np.ones_like(u)
    pos, neg = u > 0, u < 0
    out[pos] = np.sin(r[pos]) / r[pos]
    out[neg] = np.sinh(r[neg]) / r[neg]
    return out


def _si_ratio(u):
    u = np.asarray(u, dtype=float)
    r = np.sqrt(np.abs(u))
    out = np.ones_like(u)
    pos, neg = u > 0, u < 0
    out[pos] = special.sici(r[pos])[0] / r[pos]
    out[neg] = special.shichi(r[neg])[0] / r[neg]
    return out


_TINY, _HUGE = 1e-300, 1e3


class BesselK(FreePathModel):
    """Hand-built family whose collision density is pure diffusion in d = m.

    p(s) = mu p0(mu s) with p0(t) = t^{m/2} 2^{-m/2} m K_{m/2-1}(t) / Gamma(m/2+1);
    ``mu`` rescales p0 to unit mean.
    """

    family = "BesselK"

    def __init__(self, m: float):
        m = float(m)
        if not m >= 1:
            raise DomainError("BesselK family requires m >= 1")
        self.parameter = m
        self.m = m
        self.mu = m * math.gamma(1.5) * math.exp(
            math.lgamma((m + 1) / 2) - math.lgamma(m / 2 + 1))
        self._norm = math.log(m) - (m / 2) * math.log(2) - math.lgamma(m / 2 + 1)

    def _p0(self, t):
        m = self.m
        out = np.empty_like(t)
        # kve overflows below ~1e-308 and returns nan above ~1e17; both ends are limits
        pos = (t > _TINY) & (t < _HUGE)
        tp = t[pos]
        out[pos] = np.exp(self._norm + (m / 2) * np.log(tp) - tp) * special.kve(m / 2 - 1, tp)
        out[t >= _HUGE] = 0.0
        zero = t <= _TINY
        if m > 1:
            out[zero] = 0.0
        elif m == 1:
            out[zero] = 1.0
        else:
            out[zero] = np.inf
        return out

    def pdf(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("pdf requires s >= 0")
        val = self.mu * self._p0(np.atleast_1d(self.mu * s)).reshape(s.shape)
        return float(val) if np.ndim(val) == 0 else val

    def extinction(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise DomainError("extinction requires s >= 0")
        m = self.m
        t = np.atleast_1d(self.mu * s)
        out = np.ones_like(t)
        pos = (t > _TINY) & (t < _HUGE)
        tp = t[pos]
        out[pos] = np.exp(self._norm + (m / 2) * np.log(tp) - tp) * special.kve(m / 2, tp)
        out[t >= _HUGE] = 0.0
        out = out.reshape(s.shape)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, rng, size=None):
        w = rng.exponential(1.0, size)
        g = rng.gamma(self.m / 2, 1.0, size)
        return 2.0 * np.sqrt(w * g) / self.mu

    def raw_moment(self, q):
        m = self.m
        if q <= -min(m, 2):
            raise DomainError("moment diverges")
        return math.exp(
            math.log(m) + (q - 1) * math.log(2) + math.lgamma(q / 2 + 1)
            + math.lgamma((m + q) / 2) - math.lgamma(m / 2 + 1) - q * math.log(self.mu)
        )

    def abscissa(self):
        return self.mu

    def pfq(self, d, stretched):
        m = self.m
        if stretched:
            up, lo = _cancel((0.5, (m + 1) / 2), (d / 2,))
        else:
            up, lo = _cancel((1.0, m / 2), (d / 2,))
        return PfqForm(up, lo, 1.0 / self.mu ** 2)

    def closed(self, d, stretched):
        if not stretched and d == self.m:
            a = 1.0 / self.mu ** 2
            return ClosedForm(lambda u: 1.0 / (1.0 + a * u), True)
        return None

    def spec_string(self):
        return f"besselk:m={self.m:g}"


# ---------------------------------------------------------------------------
# model strings

_FAMILIES = {
    "exp": (Exponential, None),
    "exponential": (Exponential, None),
    "gamma": (Gamma, "k"),
    "chi": (Chi, "k"),
    "betaprime": (BetaPrime, "k"),
    "pearson": (Pearson, None),
    "besselk": (BesselK, "m"),
}


def parse_model(text: str) -> FreePathModel:
    """Parse ``exp``, ``gamma:k=2``, ``chi:k=3``, ``betaprime:k=4``, ``pearson``, ``besselk:m=3``."""
    name, _, rest = text.strip().partition(":")
    name = name.strip().lower()
    if name not in _FAMILIES:
        raise DomainError(f"unknown free-path family {name!r}")
    cls, key = _FAMILIES[name]
    if key is None:
        if rest.strip():
            raise DomainError(f"family {name!r} takes no parameters")
        return cls()
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        k, eq, v = item.partition("=")
        if not eq:
            raise DomainError(f"malformed parameter {item!r}")
        try:
            params[k.strip()] = float(v)
        except ValueError as exc:
            raise DomainError(f"parameter {k.strip()!r} is not a number") from exc
    if set(params) != {key}:
        raise DomainError(f"family {name!r} needs exactly the parameter {key!r}")
    return cls(params[key])


@dataclass(frozen=True)
class TransportProblem:
    """Free-path model, spatial dimension and single-scattering albedo."""

    model: FreePathModel
    d: float
    c: float

    def __post_init__(self):
        if not self.d >= 1:
            raise DomainError("dimension must satisfy d >= 1")
        if not 0 < self.c < 1:
            raise DomainError("albedo must satisfy 0 < c < 1")

    @property
    def nu(self) -> float:
        return self.d / 2 - 1


# ---------------------------------------------------------------------------
# module-level operations

def pdf(model: FreePathModel, s):
    return model.pdf(s)


def extinction(model: FreePathModel, s):
    return model.extinction(s)


def sample(model: FreePathModel, rng: np.random.Generator, size=None):
    return model.sample(rng, size)


def mean_square(model: FreePathModel) -> float:
    """<s^2> of the free-path distribution."""
    return model.mean_square()


def mean_square_extinction(model: FreePathModel) -> float:
    """int E(s) s^2 ds; a DomainError means no scalar-flux diffusion limit."""
    return model.mean_square_extinction()


_SERIES_SAFE = 0.5
# transforms feed high-order Taylor fits, so series are summed to rounding level
_FULL_PRECISION = specfun.AccuracyPolicy(target_rel_error=1e-17)


def _quad_real(model, nu, z, stretched):
    if not model.has_density and not stretched:
        # unit steps: the expectation is the kernel itself
        return float(specfun.bessel_lambda(nu, z))
    g = model.extinction if stretched else model.pdf
    rep = hankel_expectation(g, nu, z, breakpoints=model.breakpoints())
    return rep.value


def _quad_imag(model, nu, chi, stretched):
    g = model.extinction if stretched else model.pdf

    def kern(s):
        gs = g(s)
        if gs <= 0.0 or chi == 0:
            return gs
        return math.exp(math.log(gs) + specfun.log_bessel_lambda_imag(nu, s * chi))

    if isinstance(model, Pearson):
        return integrate.quad(kern, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=500)[0]
    # integrate over doubling chunks: the tail can decay slowly near the abscissa
    total, a, width, quiet = 0.0, 0.0, 1.0, 0
    while quiet < 2:
        b = a + width
        v = integrate.quad(kern, a, b, epsabs=0.0, epsrel=1e-13, limit=500)[0]
        total += v
        quiet = quiet + 1 if abs(v) <= 1e-16 * abs(total) else 0
        a, width = b, 2 * width
        if a > 1e7:
            break
    return total


def transform_u(problem_or_model, d: float | None, u, *, stretched: bool = False,
                method: str = "auto", continuation: bool = False):
    """zeta-bar (or X-bar when ``stretched``) as a function of u = z**2.

    Parameters
    ----------
    method : {"auto", "closed", "series", "quad"}
    continuation : allow u <= -abscissa**2 when a meromorphic closed form exists.
    """
    if isinstance(problem_or_model, TransportProblem):
        model, d = problem_or_model.model, problem_or_model.d
    else:
        model = problem_or_model
    if stretched and not isinstance(model, Pearson):
        model.mean_square_extinction()  # raises when the extinction moment diverges
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    nu = d / 2 - 1
    closed = model.closed(d, stretched)
    pfq = None if model.quadrature_only(stretched) and method == "auto" else model.pfq(d, stretched)
    absc = model.abscissa()

    beyond = u_arr < 0
    beyond &= np.sqrt(np.abs(u_arr)) >= absc
    if np.any(beyond) and not (continuation and closed is not None and closed.meromorphic):
        raise DomainError("imaginary argument at or beyond the abscissa of divergence")

    out = np.full(u_arr.shape, np.nan)
    todo = np.ones(u_arr.shape, dtype=bool)

    if method == "closed":
        if closed is None:
            raise UnsupportedQueryError("no closed form for this model and dimension")
        out = np.asarray(closed.func(u_arr), dtype=float)
        return _ret(out, u)
    if method == "series":
        if pfq is None:
            raise UnsupportedQueryError("no hypergeometric form for this model")
        out = specfun.hyp_pfq(pfq.upper, pfq.lower, -pfq.scale * u_arr)
        return _ret(np.asarray(out, dtype=float), u)

    if method == "auto" and pfq is not None:
        arg = -pfq.scale * u_arr
        p, q = len(pfq.upper), len(pfq.lower)
        safe = np.abs(arg) <= (_SERIES_SAFE if p == q + 1 else 2.0)
        if closed is None:
            # series for anything it can sum to full precision
            safe = np.abs(arg) < (0.9 if p == q + 1 else 30.0)
        if np.any(safe):
            try:
                out[safe] = specfun.hyp_pfq(pfq.upper, pfq.lower, arg[safe], _FULL_PRECISION)
                todo &= ~safe
            except ConvergenceError:
                pass
    if method == "auto" and closed is not None and np.any(todo):
        with np.errstate(all="ignore"):
            out[todo] = closed.func(u_arr[todo])
        todo &= np.isnan(out) & ~beyond
    if np.any(todo):
        if method not in ("auto", "quad"):
            raise DomainError(f"unknown method {method!r}")
        for i in np.nonzero(todo)[0]:
            ui = u_arr[i]
            if ui >= 0:
                out[i] = _quad_real(model, nu, math.sqrt(ui), stretched)
            else:
                out[i] = _quad_imag(model, nu, math.sqrt(-ui), stretched)
    return _ret(out, u)


def _ret(out, like):
    out = np.asarray(out, dtype=float)
    return float(out.reshape(-1)[0]) if np.ndim(like) == 0 else out.reshape(np.shape(like))


def _check_nonneg(x, name):
    if np.any(np.asarray(x, dtype=float) < 0):
        raise DomainError(f"{name} must be non-negative")


def propagator(problem: TransportProblem, z, *, method: str = "auto"):
    """Transformed single-step propagator zeta-bar_d(z)."""
    _check_nonneg(z, "z")
    return transform_u(problem, None, np.square(np.asarray(z, dtype=float)), method=method)


def propagator_imag(problem: TransportProblem, chi, *, method: str = "auto",
                    continuation: bool = False):
    """zeta-bar_d at z = i chi; real and >= 1 below the abscissa."""
    _check_nonneg(chi, "chi")
    return transform_u(problem, None, -np.square(np.asarray(chi, dtype=float)),
                       method=method, continuation=continuation)


def stretched_propagator(problem: TransportProblem, z, *, method: str = "auto"):
    """Transformed stretched extinction X-bar_d(z)."""
    _check_nonneg(z, "z")
    return transform_u(problem, None, np.square(np.asarray(z, dtype=float)),
                       stretched=True, method=method)


def stretched_propagator_imag(problem: TransportProblem, chi, *, method: str = "auto",
                              continuation: bool = False):
    """X-bar_d at z = i chi."""
    _check_nonneg(chi, "chi")
    return transform_u(problem, None, -np.square(np.asarray(chi, dtype=float)),
                       stretched=True, method=method, continuation=continuation)


def value_at_abscissa(model: FreePathModel, d: float, stretched: bool = False) -> float:
    """Limit of the transform as chi rises to the abscissa (inf if it diverges).

    Available for forms that reduce to a Gauss 2F1 at unit argument.
    """
    absc = model.abscissa()
    if not (0 < absc < math.inf):
        raise DomainError("model has no finite positive abscissa")
    pf = model.pfq(d, stretched)
    if pf is not None and len(pf.upper) == 2 and len(pf.lower) == 1:
        return specfun.hyp2f1_at_one(pf.upper[0], pf.upper[1], pf.lower[0])
    if pf is not None and len(pf.upper) == 1 and len(pf.lower) == 0:
        return math.inf
    raise UnsupportedQueryError("no closed value at the abscissa")
