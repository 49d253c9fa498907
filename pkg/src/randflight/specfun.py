"""Real-argument special functions.

Gamma, incomplete gamma, Bessel, Ei and Si are thin, domain-checked wrappers
around :mod:`scipy.special`.  The generalized hypergeometric series, the
normalized Bessel kernels used by the radial transforms and the Bessel-zero
finder are implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceError, DivergenceError, DomainError

_EPS = np.finfo(float).eps
_ROUNDING_FLOOR = 1e-14


@dataclass(frozen=True)
class AccuracyPolicy:
    """Truncation target and budget for series evaluations."""

    target_rel_error: float = 1e-12
    max_terms: int = 100_000
    series_arg_threshold: float = 50.0

    def __post_init__(self):
        if not self.target_rel_error > 0:
            raise DomainError("target_rel_error must be positive")
        if self.max_terms < 1:
            raise DomainError("max_terms must be at least 1")
        if not self.series_arg_threshold > 0:
            raise DomainError("series_arg_threshold must be positive")


DEFAULT_POLICY = AccuracyPolicy()


def _out(value, like):
    return float(value) if np.ndim(like) == 0 else value


def gamma_fn(x):
    """Euler gamma function for positive arguments."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise DomainError("gamma_fn requires x > 0")
    return _out(special.gamma(xa), x)


def upper_gamma_regularized(a, x):
    """Q(a, x) = Gamma(a, x) / Gamma(a)."""
    aa, xa = np.asarray(a, dtype=float), np.asarray(x, dtype=float)
    if np.any(~(aa > 0)) or np.any(~(xa >= 0)):
        raise DomainError("upper_gamma_regularized requires a > 0 and x >= 0")
    val = special.gammaincc(aa, xa)
    return float(val) if np.ndim(val) == 0 else val


def lower_gamma_regularized(a, x):
    """P(a, x) = 1 - Q(a, x)."""
    aa, xa = np.asarray(a, dtype=float), np.asarray(x, dtype=float)
    if np.any(~(aa > 0)) or np.any(~(xa >= 0)):
        raise DomainError("lower_gamma_regularized requires a > 0 and x >= 0")
    val = special.gammainc(aa, xa)
    return float(val) if np.ndim(val) == 0 else val


def bessel(kind: str, order: float, x):
    """Bessel J, modified I or modified K of real order at x >= 0."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(np.isnan(xa)):
        raise DomainError("bessel requires x >= 0")
    kind = kind.upper()
    if kind == "J":
        val = special.jv(order, xa)
    elif kind == "I":
        val = special.iv(order, xa)
    elif kind == "K":
        if np.any(xa == 0):
            raise DivergenceError("K_nu diverges at x = 0")
        val = special.kv(order, xa)
    else:
        raise DomainError(f"unknown Bessel kind {kind!r}")
    return _out(val, x)


def exp_integral_ei(x):
    """Exponential integral Ei(x) for x < 0."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa < 0)):
        raise DomainError("exp_integral_ei is only provided for x < 0")
    return _out(special.expi(xa), x)


def sine_integral(x):
    """Si(x) = int_0^x sin(t)/t dt for x >= 0."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa >= 0)):
        raise DomainError("sine_integral requires x >= 0")
    return _out(special.sici(xa)[0], x)


def _is_nonpositive_int(v: float) -> bool:
    return v <= 0 and float(v).is_integer()


def hyp_pfq(upper, lower, x, policy: AccuracyPolicy = DEFAULT_POLICY):
    """Generalized hypergeometric series pFq(upper; lower; x).

    Summed term by term with a geometric tail estimate.  On the unit circle
    at x = -1, where the series still converges conditionally when
    sum(lower) - sum(upper) > -1, the alternating partial sums are
    accelerated with Wynn's epsilon algorithm.  Raises
    ``ConvergenceError`` when the series cannot deliver the policy target,
    either because the argument is outside the disc of convergence, the term
    budget runs out, or cancellation between large alternating terms has
    eaten the requested precision.
    """
    upper = [float(a) for a in upper]
    lower = [float(b) for b in lower]
    if any(_is_nonpositive_int(b) for b in lower):
        raise DomainError("lower parameters must not be non-positive integers")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    p, q = len(upper), len(lower)
    terminating = any(_is_nonpositive_int(a) for a in upper)
    if not terminating:
        ax = np.abs(xa)
        if p == q + 1 and np.ndim(x) == 0 and float(x) == -1.0 and sum(lower) - sum(upper) > -1:
            return _alternating_at_minus_one(upper, lower, policy)
        if p == q + 1 and np.any(ax >= 1):
            raise ConvergenceError("|x| >= 1 is outside the disc of convergence")
        if p > q + 1 and np.any(ax > 0):
            raise ConvergenceError("series diverges for p > q + 1")
        if np.any(ax > policy.series_arg_threshold):
            raise ConvergenceError("argument beyond series_arg_threshold")

    tol = policy.target_rel_error
    term = np.ones_like(xa)
    total = np.ones_like(xa)
    peak = np.ones_like(xa)
    n = 0
    while True:
        if n >= policy.max_terms:
            raise ConvergenceError(f"no convergence within {policy.max_terms} terms")
        num = math.prod(a + n for a in upper)
        den = math.prod(b + n for b in lower) * (n + 1)
        term = term * (num / den) * xa
        total = total + term
        peak = np.maximum(peak, np.abs(term))
        n += 1
        if num == 0:
            break
        num_next = math.prod(a + n for a in upper)
        den_next = math.prod(b + n for b in lower) * (n + 1)
        rho = abs(num_next / den_next) * np.abs(xa)
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = np.where(rho < 1, np.abs(term) * rho / (1 - rho), np.inf)
        if np.all(tail <= tol * np.abs(total)):
            break
    # rounding is judged against a floor so that sub-1e-14 targets only tighten truncation
    rounding = 4 * _EPS * peak * math.sqrt(n)
    if np.any(rounding > max(tol, _ROUNDING_FLOOR) * np.abs(total)):
        raise ConvergenceError("cancellation in alternating series exceeds target")
    return float(total[0]) if np.ndim(x) == 0 else total


def wynn_epsilon(partial_sums) -> tuple[float, float, int]:
    """Wynn's epsilon extrapolation of a sequence of partial sums.

    Returns the estimate from the deepest even column, the difference to
    the previous even-column estimate, and the column order used.
    """
    s = [float(v) for v in partial_sums]
    if len(s) < 3:
        return s[-1], math.inf, 0
    prev = [0.0] * (len(s) + 1)
    cur = s[:]
    estimates = [(s[-1], 0)]
    for k in range(1, len(s)):
        nxt = []
        for j in range(len(cur) - 1):
            diff = cur[j + 1] - cur[j]
            if diff == 0.0:
                return cur[j + 1], 0.0, k
            nxt.append(prev[j + 1] + 1.0 / diff)
        prev, cur = cur, nxt
        if not cur:
            break
        if k % 2 == 0:
            estimates.append((cur[-1], k))
    best, order = estimates[-1]
    err = abs(best - estimates[-2][0]) if len(estimates) > 1 else math.inf
    return best, err, order


def _alternating_at_minus_one(upper, lower, policy):
    # conditionally convergent series on the unit circle: accelerate the partial sums
    term, total, sums = 1.0, 1.0, [1.0]
    best, err = math.nan, math.inf
    for n in range(min(policy.max_terms, 400)):
        num = math.prod(a + n for a in upper)
        den = math.prod(b + n for b in lower) * (n + 1)
        term *= -num / den
        total += term
        sums.append(total)
        if num == 0:
            return total
        if n >= 8 and n % 4 == 0:
            best, err, _ = wynn_epsilon(sums[-40:])
            if err <= policy.target_rel_error * abs(best):
                return best
    raise ConvergenceError("accelerated series at x = -1 did not reach the target")


def hyp2f1_at_one(a: float, b: float, c: float) -> float:
    """Gauss summation 2F1(a, b; c; 1); infinite when c - a - b <= 0."""
    if c - a - b <= 0:
        return math.inf
    return math.exp(
        math.lgamma(c) + math.lgamma(c - a - b) - math.lgamma(c - a) - math.lgamma(c - b)
    )


def _lambda_series(nu, x, imag):
    # 0F1(; nu+1; -/+ x^2/4) for small |x|, vectorized
    y = (x * x / 4.0) * (1.0 if imag else -1.0)
    term = np.ones_like(x)
    total = np.ones_like(x)
    for n in range(60):
        term = term * y / ((nu + 1 + n) * (n + 1))
        total = total + term
        if np.all(np.abs(term) <= 1e-17 * np.abs(total)):
            break
    return total


def bessel_lambda(nu: float, x):
    """Normalized kernel Gamma(nu+1) (2/x)^nu J_nu(x), equal to 1 at x = 0.

    For nu = d/2 - 1 this is the angular average of exp(i k.x) over the
    (d-1)-sphere, so the d-dimensional radial transform of a radial density
    is the expectation of this kernel.
    """
    xa = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(xa)
    small = xa < 2.0
    if np.any(small):
        out[small] = _lambda_series(nu, xa[small], imag=False)
    big = ~small
    if np.any(big):
        xb = xa[big]
        if nu == -0.5:
            out[big] = np.cos(xb)
        else:
            out[big] = math.gamma(nu + 1) * (2.0 / xb) ** nu * special.jv(nu, xb)
    return _out(out, x)


def bessel_lambda_imag(nu: float, x):
    """Gamma(nu+1) (2/x)^nu I_nu(x): the kernel above at imaginary argument."""
    xa = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(xa)
    small = xa < 2.0
    if np.any(small):
        out[small] = _lambda_series(nu, xa[small], imag=True)
    big = ~small
    if np.any(big):
        xb = xa[big]
        if nu == -0.5:
            out[big] = np.cosh(xb)
        else:
            with np.errstate(over="ignore"):
                logpart = math.lgamma(nu + 1) + nu * np.log(2.0 / xb) + xb
                out[big] = np.exp(logpart) * special.ive(nu, xb)
    return _out(out, x)


def log_bessel_lambda_imag(nu: float, x):
    """Natural log of :func:`bessel_lambda_imag`, safe for large x."""
    xa = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(xa)
    small = xa < 2.0
    if np.any(small):
        out[small] = np.log(_lambda_series(nu, xa[small], imag=True))
    big = ~small
    if np.any(big):
        xb = xa[big]
        if nu == -0.5:
            out[big] = xb + np.log1p(np.exp(-2 * xb)) - math.log(2)
        else:
            out[big] = math.lgamma(nu + 1) + nu * np.log(2.0 / xb) + xb + np.log(special.ive(nu, xb))
    return _out(out, x)


def bessel_j_zeros(nu: float, count: int) -> np.ndarray:
    """First ``count`` positive zeros of J_nu (nu >= -1/2).

    McMahon's expansion seeds each zero, then a bracketing solver polishes
    it.  If a bracket cannot be formed the asymptotic value is kept, which is
    harmless for its use as a quadrature panel boundary.
    """
    if nu < -0.5:
        raise DomainError("bessel_j_zeros supports nu >= -1/2")
    mu = 4.0 * nu * nu
    zeros = np.empty(count)
    prev = 0.0
    for k in range(1, count + 1):
        beta = (k + nu / 2.0 - 0.25) * math.pi
        guess = beta - (mu - 1) / (8 * beta) - 4 * (mu - 1) * (7 * mu - 31) / (3 * (8 * beta) ** 3)
        guess = max(guess, prev + 0.5)
        root = guess
        if nu != -0.5:
            lo, hi = max(prev + 1e-9, guess - 1.0), guess + 1.0
            flo, fhi = special.jv(nu, lo), special.jv(nu, hi)
            if flo * fhi < 0:
                root = optimize.brentq(lambda t: special.jv(nu, t), lo, hi, xtol=1e-14)
        zeros[k - 1] = root
        prev = root
    return zeros
