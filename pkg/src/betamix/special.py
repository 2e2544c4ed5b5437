"""Scalar and vectorised special functions used throughout betamix.

Gamma-family kernels (log-gamma, digamma, trigamma), the beta density with an
optional truncated support, the regularized incomplete beta function and its
inverse, plus two closed-form results about random lines in R^n: the
small-angle CDF approximation and the quasi-orthogonal line count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from .exceptions import DomainError, NumericError

__all__ = [
    "BetaShape",
    "log_gamma",
    "log_beta",
    "digamma",
    "trigamma",
    "inv_digamma",
    "beta_logpdf",
    "beta_pdf",
    "reg_inc_beta",
    "beta_quantile",
    "frankl_cdf_approx",
    "log_quasi_orthogonal_capacity",
    "quasi_orthogonal_capacity",
]

_TINY = 1e-300
_CF_EPS = 1e-15
_CF_MAX_ITER = 20000
_QUANTILE_MAX_ITER = 200


def _check_positive(name, x):
    if not (isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x) and x > 0):
        raise DomainError(f"{name} must be a finite positive real, got {x!r}")


def log_gamma(x: float) -> float:
    """ln Gamma(x) for finite x > 0."""
    _check_positive("x", x)
    return math.lgamma(x)


_STIRLING_SWITCH = 10.0


def _stirling_tail(x):
    # lnGamma(x) - [(x - 1/2) ln x - x + ln(2 pi)/2], valid for x >= 10
    r = 1.0 / (x * x)
    return (1.0 / 12 + r * (-1.0 / 360 + r * (1.0 / 1260 + r * (-1.0 / 1680 + r / 1188)))) / x


def _log_beta_kernel(a, b):
    # ln B(a, b) = lnGamma(p) + [lnGamma(q) - lnGamma(p + q)], p <= q. For
    # large q the bracket is expanded so that no O(q ln q) terms cancel.
    p, q = np.minimum(a, b), np.maximum(a, b)
    direct = gammaln(p) + gammaln(q) - gammaln(p + q)
    big = q >= _STIRLING_SWITCH
    if not np.any(big):
        return direct
    qs = np.where(big, q, _STIRLING_SWITCH)
    ratio = (
        -(qs - 0.5) * np.log1p(p / qs)
        - p * np.log(qs + p)
        + p
        + (_stirling_tail(qs) - _stirling_tail(qs + p))
    )
    return np.where(big, gammaln(p) + ratio, direct)


def log_beta(a, b):
    """ln B(a, b); broadcasts over array arguments.

    Accurate to a few ulp even when one argument is tiny and the other huge,
    where the textbook lnGamma(a) + lnGamma(b) - lnGamma(a + b) loses digits.
    """
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        _check_positive("a", a)
        _check_positive("b", b)
        return float(_log_beta_kernel(np.float64(a), np.float64(b)))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError("beta function arguments must be positive")
    return _log_beta_kernel(a, b)


# Asymptotic series coefficients (Bernoulli numbers B_2k / 2k and B_2k).
_DIGAMMA_ASYM = (
    1.0 / 12,
    -1.0 / 120,
    1.0 / 252,
    -1.0 / 240,
    1.0 / 132,
    -691.0 / 32760,
    1.0 / 12,
)
_TRIGAMMA_ASYM = (
    1.0 / 6,
    -1.0 / 30,
    1.0 / 42,
    -1.0 / 30,
    5.0 / 66,
    -691.0 / 2730,
    7.0 / 6,
)


def digamma(x: float) -> float:
    """Digamma function psi(x) for x > 0.

    Shifts the argument up to x >= 6 with psi(x) = psi(x + 1) - 1/x, then sums
    the asymptotic expansion.
    """
    _check_positive("x", x)
    x = float(x)
    terms = []
    if x < 0.5:
        # carry the rounding remainder of 1/x so fsum can round the total correctly
        q = 1.0 / x
        terms += [-q, -float(Fraction(1) / Fraction(x) - Fraction(q))]
        x += 1.0
    while x < 6.0:
        terms.append(-1.0 / x)
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    power = inv2
    for c in _DIGAMMA_ASYM:
        series += c * power
        power *= inv2
    terms.extend((math.log(x), -0.5 / x, -series))
    # fsum: near 0 the -1/x term dwarfs the rest, plain summation loses an ulp
    return math.fsum(terms)


def trigamma(x: float) -> float:
    """Trigamma function psi'(x) for x > 0 (same shift-then-expand scheme)."""
    _check_positive("x", x)
    x = float(x)
    shift = 0.0
    while x < 6.0:
        shift += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    series = 0.0
    power = inv2 * inv
    for c in _TRIGAMMA_ASYM:
        series += c * power
        power *= inv2
    return shift + inv + 0.5 * inv2 + series


def inv_digamma(y: float, tol: float = 1e-14, max_iter: int = 50) -> float:
    """Solve psi(x) = y for x > 0 by Newton's method (Minka's initialisation)."""
    if not math.isfinite(y):
        raise DomainError(f"inv_digamma needs a finite argument, got {y!r}")
    x = math.exp(y) + 0.5 if y >= -2.22 else -1.0 / (y + 0.5772156649015329)
    for _ in range(max_iter):
        step = (digamma(x) - y) / trigamma(x)
        x_new = x - step
        if x_new <= 0:
            x_new = 0.5 * x
        if abs(x_new - x) <= tol * x:
            return x_new
        x = x_new
    raise NumericError(f"inv_digamma({y}) did not converge")


@dataclass(frozen=True)
class BetaShape:
    """Beta distribution on (0, upper).

    ``upper < 1`` gives the scaled three-parameter beta used for a truncated
    non-null component: the density of ``upper * W`` with ``W ~ Beta(alpha, beta)``.
    """

    alpha: float
    beta: float
    upper: float = 1.0

    def __post_init__(self):
        _check_positive("alpha", self.alpha)
        _check_positive("beta", self.beta)
        if not (0.0 < self.upper <= 1.0):
            raise DomainError(f"upper must lie in (0, 1], got {self.upper!r}")

    @property
    def log_norm(self) -> float:
        """Log of the normalising constant upper^(a+b-1) * B(a, b)."""
        return (self.alpha + self.beta - 1.0) * math.log(self.upper) + log_beta(self.alpha, self.beta)

    def logpdf(self, z):
        return beta_logpdf(z, self)

    def pdf(self, z):
        return beta_pdf(z, self)

    def cdf(self, z):
        w = np.minimum(np.asarray(z, dtype=float) / self.upper, 1.0)
        return reg_inc_beta(w if np.ndim(z) else float(w), self.alpha, self.beta)


def beta_logpdf(z, shape: BetaShape):
    """Log density of ``shape`` at ``z`` in (0, 1); ``-inf`` beyond ``shape.upper``."""
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if np.any(~((z > 0.0) & (z < 1.0))):
        raise DomainError("z must lie strictly inside (0, 1)")
    a, b, c = shape.alpha, shape.beta, shape.upper
    with np.errstate(divide="ignore", invalid="ignore"):
        if c == 1.0:
            out = (a - 1.0) * np.log(z) + (b - 1.0) * np.log1p(-z) - shape.log_norm
        else:
            inside = z < c
            gap = np.where(inside, c - z, 1.0)
            out = (a - 1.0) * np.log(z) + (b - 1.0) * np.log(gap) - shape.log_norm
            out = np.where(inside, out, -np.inf)
    return float(out) if scalar else out


def beta_pdf(z, shape: BetaShape):
    """Density of ``shape`` at ``z``; evaluated in log space then exponentiated."""
    out = np.exp(beta_logpdf(z, shape))
    return float(out) if np.ndim(out) == 0 else out


def _betacf(x, a, b):
    # Modified Lentz evaluation of the incomplete-beta continued fraction,
    # run on all elements at once; converged elements are frozen.
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAX_ITER + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            return h
        xs, as_, bs = x[idx], a[idx], b[idx]
        cs, ds, hs = c[idx], d[idx], h[idx]
        m2 = 2.0 * m
        aa = m * (bs - m) * xs / ((qam[idx] + m2) * (as_ + m2))
        ds = 1.0 + aa * ds
        ds = np.where(np.abs(ds) < _TINY, _TINY, ds)
        cs = 1.0 + aa / cs
        cs = np.where(np.abs(cs) < _TINY, _TINY, cs)
        ds = 1.0 / ds
        hs = hs * ds * cs
        aa = -(as_ + m) * (qab[idx] + m) * xs / ((as_ + m2) * (qap[idx] + m2))
        ds = 1.0 + aa * ds
        ds = np.where(np.abs(ds) < _TINY, _TINY, ds)
        cs = 1.0 + aa / cs
        cs = np.where(np.abs(cs) < _TINY, _TINY, cs)
        ds = 1.0 / ds
        delta = ds * cs
        hs = hs * delta
        c[idx], d[idx], h[idx] = cs, ds, hs
        active[idx] = np.abs(delta - 1.0) >= _CF_EPS
    raise NumericError("incomplete beta continued fraction did not converge")


def reg_inc_beta(z, alpha, beta):
    """Regularized incomplete beta function I_z(alpha, beta).

    Broadcasts over array arguments. The continued fraction is evaluated
    directly for z below (alpha + 1) / (alpha + beta + 2) and through the
    reflection I_z(a, b) = 1 - I_{1-z}(b, a) above it.
    """
    scalar = np.ndim(z) == 0 and np.ndim(alpha) == 0 and np.ndim(beta) == 0
    z, a, b = np.broadcast_arrays(
        np.asarray(z, dtype=float), np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float)
    )
    shape = z.shape
    z, a, b = z.ravel(), a.ravel(), b.ravel()
    if np.any(~((z >= 0.0) & (z <= 1.0))):
        raise DomainError("z must lie in [0, 1]")
    if np.any(~((a > 0) & (b > 0) & np.isfinite(a) & np.isfinite(b))):
        raise DomainError("shape parameters must be finite and positive")

    out = np.where(z >= 1.0, 1.0, 0.0)
    interior = (z > 0.0) & (z < 1.0)
    if np.any(interior):
        zi, ai, bi = z[interior], a[interior], b[interior]
        flip = zi > (ai + 1.0) / (ai + bi + 2.0)
        x = np.where(flip, 1.0 - zi, zi)
        p = np.where(flip, bi, ai)
        q = np.where(flip, ai, bi)
        # log1p keeps precision for z near 0 on the reflected side
        log_x = np.where(flip, np.log1p(-zi), np.log(zi))
        log_1mx = np.where(flip, np.log(zi), np.log1p(-zi))
        log_front = p * log_x + q * log_1mx - _log_beta_kernel(p, q)
        frac = np.exp(log_front) * _betacf(x, p, q) / p
        out[interior] = np.where(flip, 1.0 - frac, frac)
    out = np.clip(out, 0.0, 1.0).reshape(shape)
    return float(out) if scalar else out


def _lower_quantile(p, a, b):
    # Solve I_z(a, b) = p for p <= 1/2 by Newton on t = log z, with the
    # root kept inside a shrinking bracket [lo, hi] (geometric bisection).
    lo, hi = math.log(5e-324), 0.0
    log_p = math.log(p)
    lnb = log_beta(a, b)
    t = min(math.log(a / (a + b)), -1e-16)
    trace = []
    for _ in range(_QUANTILE_MAX_ITER):
        z = math.exp(t)
        cdf = reg_inc_beta(z, a, b)
        h = math.log(cdf) if cdf > 0 else -math.inf
        trace.append((z, cdf))
        if h - log_p == 0.0 or abs(h - log_p) <= 1e-13:
            return z
        if h > log_p:
            hi = t
        else:
            lo = t
        if hi - lo <= 4e-16 * max(1.0, abs(t)):
            return math.exp(hi)
        t_new = math.nan
        if math.isfinite(h):
            # d log I / d log z = z f(z) / I(z)
            log_slope = a * t + (b - 1.0) * math.log1p(-z) - lnb - h
            if log_slope < 700:
                t_new = t - (h - log_p) / math.exp(log_slope)
        if not (lo < t_new < hi):
            t_new = 0.5 * (lo + hi)
        t = t_new
    raise NumericError(f"beta_quantile({p}, {a}, {b}) did not converge", trace)


def beta_quantile(p: float, alpha: float, beta: float) -> float:
    """Inverse of the regularized incomplete beta: z with I_z(alpha, beta) = p.

    Newton iterations seeded at the mean alpha / (alpha + beta) and guarded by
    bisection. Upper-half probabilities are solved through the reflection
    I_z(a, b) = 1 - I_{1-z}(b, a) so that both tails keep relative accuracy.
    The result is clamped to the open interval (0, 1).
    """
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    _check_positive("alpha", alpha)
    _check_positive("beta", beta)
    if p <= 0.5:
        z = _lower_quantile(p, alpha, beta)
    else:
        z = 1.0 - _lower_quantile(1.0 - p, beta, alpha)
    return min(max(z, 5e-324), math.nextafter(1.0, 0.0))


def _check_angle(alpha_angle, n):
    if not (0.0 < alpha_angle < math.pi / 2):
        raise DomainError(f"angle must lie strictly inside (0, pi/2), got {alpha_angle!r}")
    if int(n) != n or n < 3:
        raise DomainError(f"n must be an integer >= 3, got {n!r}")


def frankl_cdf_approx(alpha_angle: float, n: int) -> float:
    """Large-n approximation to P[theta <= alpha] for the angle between random lines.

    Returns (sin a)^(n-1) / (sqrt(pi (n-1) / 2) cos a); the exact value is
    I_{sin^2 a}((n-1)/2, 1/2).
    """
    _check_angle(alpha_angle, n)
    log_val = (
        (n - 1) * math.log(math.sin(alpha_angle))
        - 0.5 * math.log(math.pi * (n - 1) / 2.0)
        - math.log(math.cos(alpha_angle))
    )
    return math.exp(log_val)


def log_quasi_orthogonal_capacity(alpha_angle: float, n: int) -> float:
    """Natural log of the quasi-orthogonal line count, see :func:`quasi_orthogonal_capacity`."""
    _check_angle(alpha_angle, n)
    return (
        0.5 * math.log(math.pi * (n - 1) / 2.0)
        + math.log(math.cos(alpha_angle))
        - (n - 1) * math.log(math.sin(alpha_angle))
    )


def quasi_orthogonal_capacity(alpha_angle: float, n: int) -> float:
    """Number of lines through the origin of R^n with pairwise angles above ``alpha_angle``.

    m(n) = sqrt(pi (n-1) / 2) cos(a) (sin a)^-(n-1). Returns ``inf`` once the
    value leaves double range; use :func:`log_quasi_orthogonal_capacity` then.
    """
    log_val = log_quasi_orthogonal_capacity(alpha_angle, n)
    return math.exp(log_val) if log_val < 709.0 else math.inf
