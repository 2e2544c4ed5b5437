"""Two-group beta mixture for the pairwise z statistics, fitted by EM.

The null component is Beta((nu - 1)/2, 1/2), the law of sin^2 of the angle
between two random lines in R^nu. The non-null component is a free
Beta(a, b), optionally rescaled to the support [0, c_delta]. Each z_j is null
with prior probability p0.

Optional extensions: estimate the effective sample size nu inside the
M-step (dependent samples behave like fewer independent ones), and
re-estimate the non-null support bound c_delta every iteration.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .angles import ZVector
from .exceptions import DomainError, InputError, NumericError
from .special import (
    beta_quantile,
    digamma,
    inv_digamma,
    log_beta,
    reg_inc_beta,
    trigamma,
)

__all__ = [
    "MixtureParams",
    "FitOptions",
    "FitResult",
    "null_logpdf",
    "nonnull_logpdf",
    "moment_beta",
    "init_params",
    "seeded_params",
    "posterior_from_log_densities",
    "e_step",
    "m_step",
    "solve_beta_mle",
    "solve_nu",
    "c_delta_objective",
    "estimate_c_delta",
    "log_likelihood",
    "fit",
    "fit_summary",
    "bayes_threshold",
]

log = logging.getLogger(__name__)

SHAPE_MIN, SHAPE_MAX = 1e-3, 1e4
NU_MIN = 1.0 + 1e-6
EMPTY_WEIGHT = 1e-8
C_DELTA_GRID = 512
SEED_QUANTILE = 1e-3


@dataclass(frozen=True)
class MixtureParams:
    """Null weight p0, non-null shapes (a, b), effective sample size nu, support bound c_delta."""

    p0: float
    a: float
    b: float
    nu: float
    c_delta: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.p0 <= 1.0):
            raise DomainError(f"p0 must lie in [0, 1], got {self.p0}")
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"non-null shapes must be positive, got a={self.a}, b={self.b}")
        if not (self.nu > 1.0):
            raise DomainError(f"nu must exceed 1, got {self.nu}")
        if not (0.0 < self.c_delta <= 1.0):
            raise DomainError(f"c_delta must lie in (0, 1], got {self.c_delta}")

    @property
    def null_shape(self):
        return (self.nu - 1.0) / 2.0, 0.5


@dataclass(frozen=True)
class FitOptions:
    estimate_ess: bool = False
    estimate_c_delta: bool = False
    delta: float = 1e-3
    tol: float = 1e-8
    max_iter: int = 1000
    # False: c_delta is estimated once from the initial parameters, then frozen
    update_c_delta_each_iter: bool = True
    # True: a re-estimated c_delta is only kept when it does not lower the likelihood
    guard_c_delta: bool = True
    # True: also run EM from a start seeded on clearly non-null pairs, keep the better fit
    second_start: bool = True

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise InputError(f"delta must lie in (0, 1), got {self.delta}")
        if not (self.tol > 0):
            raise InputError("tol must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")


@dataclass(frozen=True)
class FitResult:
    params: MixtureParams
    posteriors: np.ndarray
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    options: FitOptions = field(default_factory=FitOptions)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def _as_z(z):
    return z.z if isinstance(z, ZVector) else np.asarray(z, dtype=float)


def null_logpdf(z, nu):
    """Log density of Beta((nu - 1)/2, 1/2) at z."""
    z = np.asarray(z, dtype=float)
    s = (nu - 1.0) / 2.0
    return (s - 1.0) * np.log(z) - 0.5 * np.log1p(-z) - log_beta(s, 0.5)


def nonnull_logpdf(z, a, b, c_delta=1.0):
    """Log density of c_delta * Beta(a, b) at z; -inf for z >= c_delta."""
    z = np.asarray(z, dtype=float)
    norm = (a + b - 1.0) * math.log(c_delta) + log_beta(a, b)
    if c_delta >= 1.0:
        return (a - 1.0) * np.log(z) + (b - 1.0) * np.log1p(-z) - norm
    inside = z < c_delta
    gap = np.where(inside, c_delta - z, 1.0)
    out = (a - 1.0) * np.log(z) + (b - 1.0) * np.log(gap) - norm
    return np.where(inside, out, -np.inf)


def _log_weighted(z, params):
    # log p0 f0(z) and log (1 - p0) f(z), with log(0) = -inf for p0 in {0, 1}
    with np.errstate(divide="ignore"):
        lp0 = math.log(params.p0) if params.p0 > 0 else -math.inf
        lp1 = math.log1p(-params.p0) if params.p0 < 1 else -math.inf
    l0 = null_logpdf(z, params.nu)
    l1 = nonnull_logpdf(z, params.a, params.b, params.c_delta)
    return lp0 + l0, lp1 + l1


def moment_beta(x):
    """Method-of-moments (a, b) for a sample on (0, 1); (1, 1) if it is degenerate."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return 1.0, 1.0
    m = float(x.mean())
    v = float(x.var())
    if not (v > 0) or not (0 < m < 1):
        return 1.0, 1.0
    common = m * (1.0 - m) / v - 1.0
    if common <= 0:
        return 1.0, 1.0
    return m * common, (1.0 - m) * common


def init_params(z, options: FitOptions | None = None) -> MixtureParams:
    """Starting values: p0 from the share of z above the null's 10% quantile (at nu = n),
    (a, b) by moments on the z values below it, nu = n and c_delta = 1."""
    if not isinstance(z, ZVector):
        raise InputError("init_params needs a ZVector (the sample size is required)")
    if z.M < 10:
        raise InputError(f"need at least 10 pairs to fit the mixture, got {z.M}")
    n = z.n_samples
    q10 = beta_quantile(0.10, (n - 1) / 2.0, 0.5)
    above = z.z > q10
    p0 = float(np.clip(above.mean(), 0.05, 0.95))
    a, b = moment_beta(z.z[~above])
    a, b = float(np.clip(a, 0.5, 500.0)), float(np.clip(b, 0.5, 500.0))
    return MixtureParams(p0=p0, a=a, b=b, nu=float(n), c_delta=1.0)


def seeded_params(z: ZVector) -> MixtureParams | None:
    """Alternative start: the non-null component fitted by moments to the z below
    the null's 1e-3 quantile at nu = n, p0 = share of the remaining pairs.

    Returns None when no pair lies below that quantile. This start matters
    when true edges are very rare: the default start then tends to end with
    a non-null component that only describes the lower tail of the null.
    """
    n = z.n_samples
    below = z.z < beta_quantile(SEED_QUANTILE, (n - 1) / 2.0, 0.5)
    count = int(below.sum())
    if count == 0:
        return None
    a, b = moment_beta(z.z[below])
    a, b = float(np.clip(a, 0.5, 500.0)), float(np.clip(b, 0.5, 500.0))
    p0 = float(np.clip(1.0 - count / z.M, 0.05, 1.0 - 0.5 / z.M))
    return MixtureParams(p0=p0, a=a, b=b, nu=float(n), c_delta=1.0)


def posterior_from_log_densities(log_f0, log_f, p0):
    """p0 f0 / (p0 f0 + (1 - p0) f) from log densities, via log-sum-exp.

    Where both weighted terms vanish the raw log densities are compared
    instead (1 if log f0 >= log f, else 0).
    """
    log_f0 = np.asarray(log_f0, dtype=float)
    log_f = np.asarray(log_f, dtype=float)
    with np.errstate(divide="ignore"):
        lp0 = math.log(p0) if p0 > 0 else -math.inf
        lp1 = math.log1p(-p0) if p0 < 1 else -math.inf
    w0, w1 = lp0 + log_f0, lp1 + log_f
    with np.errstate(invalid="ignore"):
        denom = np.logaddexp(w0, w1)
        post = np.exp(w0 - denom)
    both_zero = ~np.isfinite(denom)
    if both_zero.any():
        post = np.where(both_zero, (log_f0 >= log_f).astype(float), post)
    return post


def e_step(z, params: MixtureParams) -> np.ndarray:
    """Posterior null probabilities; exactly 1 where z >= c_delta < 1."""
    zz = _as_z(z)
    l0 = null_logpdf(zz, params.nu)
    l1 = nonnull_logpdf(zz, params.a, params.b, params.c_delta)
    return posterior_from_log_densities(l0, l1, params.p0)


def solve_beta_mle(s1, s2, a0=1.0, b0=1.0, max_iter=100):
    """Solve psi(a) - psi(a+b) = s1, psi(b) - psi(a+b) = s2 for (a, b).

    Newton on (log a, log b) with the trigamma Jacobian; if that fails to
    converge in ``max_iter`` steps a damped fixed-point iteration takes over.
    Solutions are kept inside [1e-3, 1e4].
    """
    lo, hi = math.log(SHAPE_MIN), math.log(SHAPE_MAX)
    u = min(max(math.log(a0), lo), hi)
    v = min(max(math.log(b0), lo), hi)
    trace = []
    for _ in range(max_iter):
        a, b = math.exp(u), math.exp(v)
        pab = digamma(a + b)
        g1 = digamma(a) - pab - s1
        g2 = digamma(b) - pab - s2
        trace.append((a, b, g1, g2))
        if max(abs(g1), abs(g2)) < 1e-13:
            return a, b
        t = trigamma(a + b)
        j11, j12 = (trigamma(a) - t) * a, -t * b
        j21, j22 = -t * a, (trigamma(b) - t) * b
        det = j11 * j22 - j12 * j21
        if det == 0 or not math.isfinite(det):
            break
        du = -(j22 * g1 - j12 * g2) / det
        dv = -(-j21 * g1 + j11 * g2) / det
        biggest = max(abs(du), abs(dv))
        if biggest > 1.0:
            du, dv = du / biggest, dv / biggest
        u_new = min(max(u + du, lo), hi)
        v_new = min(max(v + dv, lo), hi)
        if abs(u_new - u) < 1e-15 and abs(v_new - v) < 1e-15:
            return math.exp(u_new), math.exp(v_new)
        u, v = u_new, v_new

    a, b = math.exp(u), math.exp(v)
    for _ in range(1000):
        pab = digamma(a + b)
        a_new = min(max(inv_digamma(pab + s1), SHAPE_MIN), SHAPE_MAX)
        b_new = min(max(inv_digamma(pab + s2), SHAPE_MIN), SHAPE_MAX)
        a_new, b_new = 0.5 * (a + a_new), 0.5 * (b + b_new)
        trace.append((a_new, b_new, math.nan, math.nan))
        if abs(a_new - a) <= 1e-13 * a and abs(b_new - b) <= 1e-13 * b:
            return a_new, b_new
        a, b = a_new, b_new
    raise NumericError(f"beta shape equations did not converge (s1={s1}, s2={s2})", trace)


def _nu_equation(nu):
    return digamma((nu - 1.0) / 2.0) - digamma(nu / 2.0)


def solve_nu(mean_log_z, n):
    """Effective sample size: root of psi((nu-1)/2) - psi(nu/2) = mean_log_z on (1, n].

    The left side increases strictly with nu, so bisection finds the unique
    root; values beyond the interval are clamped to its ends.
    """
    lo, hi = NU_MIN, float(n)
    if _nu_equation(hi) <= mean_log_z:
        return hi
    if _nu_equation(lo) >= mean_log_z:
        return lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _nu_equation(mid) < mean_log_z:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 0.5 * (lo + hi)


def m_step(z, post, params: MixtureParams, estimate_ess: bool = False) -> MixtureParams:
    """Maximise the expected complete-data log-likelihood given posteriors ``post``.

    p0 is the mean posterior; (a, b) solve the digamma equations on
    w = z / c_delta with weights 1 - post; nu (if estimated) solves its own
    digamma equation with weights post. Components with total weight below
    1e-8 keep their previous parameters.
    """
    zz = _as_z(z)
    post = np.asarray(post, dtype=float)
    if post.shape != zz.shape:
        raise InputError("posterior vector does not match z")
    p0 = float(np.mean(post))
    a, b = params.a, params.b
    c = params.c_delta
    inside = zz < c
    w_non = (1.0 - post)[inside]
    total_non = float(w_non.sum())
    if total_non >= EMPTY_WEIGHT:
        w = zz[inside] / c
        s1 = float(np.dot(w_non, np.log(w))) / total_non
        s2 = float(np.dot(w_non, np.log1p(-w))) / total_non
        a, b = solve_beta_mle(s1, s2, a, b)

    nu = params.nu
    total_null = float(post.sum())
    if estimate_ess and total_null >= EMPTY_WEIGHT:
        n = z.n_samples if isinstance(z, ZVector) else params.nu
        nu = solve_nu(float(np.dot(post, np.log(zz))) / total_null, n)
    return MixtureParams(p0=p0, a=a, b=b, nu=nu, c_delta=c)


def c_delta_objective(z, params: MixtureParams, c, delta: float = 1e-3):
    """(1 - delta) M_c - p0 M (1 - I_c((nu-1)/2, 1/2)) at each candidate c.

    M_c counts the z above c; the second term is the expected number of null
    z above c. Accepts a scalar or an array of candidates.
    """
    zz = np.sort(_as_z(z))
    M = zz.size
    c = np.asarray(c, dtype=float)
    count_above = M - np.searchsorted(zz, c, side="right")
    s, _ = params.null_shape
    null_above = params.p0 * M * (1.0 - reg_inc_beta(c, s, 0.5))
    out = (1.0 - delta) * count_above - null_above
    return float(out) if out.ndim == 0 else out


def estimate_c_delta(z, params: MixtureParams, delta: float = 1e-3) -> float:
    """Support bound for the non-null component.

    Candidates c run over 512 evenly spaced points from the first decile of
    z up to 1. For each c the objective compares (1 - delta) M_c, with M_c the
    number of z above c, against p0 M (1 - I_c((nu-1)/2, 1/2)), the expected
    number of null z above c. Scanning upwards, the first place where the
    expected null count catches up (signed objective <= 0) is the crossing;
    the candidate next to it with the smaller squared objective is returned.
    If no crossing occurs before c = 1, returns 1.
    """
    zz = _as_z(z)
    grid = np.linspace(float(np.quantile(zz, 0.1)), 1.0, C_DELTA_GRID)
    gap = c_delta_objective(zz, params, grid, delta)
    crossed = np.flatnonzero(gap[:-1] <= 0.0)
    if crossed.size == 0:
        return 1.0
    i = int(crossed[0])
    if i > 0 and gap[i - 1] ** 2 < gap[i] ** 2:
        i -= 1
    return float(grid[i])


def log_likelihood(z, params: MixtureParams) -> float:
    """Sum over pairs of log[p0 f0(z_j) + (1 - p0) f(z_j)]."""
    w0, w1 = _log_weighted(_as_z(z), params)
    return float(np.sum(np.logaddexp(w0, w1)))


def _run_em(z: ZVector, params: MixtureParams, options: FitOptions):
    if options.estimate_c_delta:
        params = replace(params, c_delta=estimate_c_delta(z, params, options.delta))
    ll = log_likelihood(z, params)
    trace = [ll]
    converged = False
    iterations = 0
    for iterations in range(1, options.max_iter + 1):
        post = e_step(z, params)
        updated = m_step(z, post, params, options.estimate_ess)
        ll_new = log_likelihood(z, updated)
        if options.estimate_c_delta and options.update_c_delta_each_iter:
            c_new = estimate_c_delta(z, updated, options.delta)
            if c_new != updated.c_delta:
                # refit (a, b) on the new support; keep it only if the likelihood does not drop
                moved = m_step(z, post, replace(params, c_delta=c_new), options.estimate_ess)
                ll_moved = log_likelihood(z, moved)
                if ll_moved >= ll_new or not options.guard_c_delta:
                    updated, ll_new = moved, ll_moved
        params = updated
        trace.append(ll_new)
        if abs(ll_new - ll) / (1.0 + abs(ll_new)) < options.tol:
            converged = True
            break
        ll = ll_new
    return params, np.asarray(trace), iterations, converged


def fit(z: ZVector, options: FitOptions | None = None, **kwargs) -> FitResult:
    """Fit the beta mixture to ``z`` by EM.

    EM runs from ``init_params`` and, unless ``second_start`` is off, also
    from ``seeded_params``; the run with the larger final log-likelihood is
    returned (the default start wins ties).

    Parameters
    ----------
    z : ZVector
        Pair statistics; ``z.n_samples`` fixes the null shape (and caps nu).
    options : FitOptions, optional
        Fitting switches; keyword arguments override individual fields.

    Returns
    -------
    FitResult
        Final parameters, posterior null probabilities consistent with them,
        the log-likelihood after every iteration of the chosen run, and a
        convergence flag. Convergence means |delta loglik| / (1 + |loglik|) < ``tol``.
    """
    options = replace(options or FitOptions(), **kwargs)
    if not isinstance(z, ZVector):
        raise InputError("fit needs a ZVector")
    if z.M < 10:
        raise InputError(f"need at least 10 pairs to fit the mixture, got {z.M}")

    best = _run_em(z, init_params(z, options), options)
    seeded = seeded_params(z) if options.second_start else None
    if seeded is not None:
        other = _run_em(z, seeded, options)
        if other[1][-1] > best[1][-1]:
            best = other
    params, trace, iterations, converged = best
    if not converged:
        log.warning("EM stopped after %d iterations without converging", iterations)
    return FitResult(
        params=params,
        posteriors=e_step(z, params),
        loglik_trace=trace,
        iterations=iterations,
        converged=converged,
        options=options,
    )


def bayes_threshold(z, posteriors, tau=0.01):
    """Largest z among pairs with posterior null probability below tau (nan if none)."""
    zz = _as_z(z)
    keep = np.asarray(posteriors) < tau
    return float(zz[keep].max()) if keep.any() else math.nan


def fit_summary(result: FitResult, z: ZVector, tau: float = 0.01, epsilon: float = 1e-5) -> dict:
    """JSON-ready summary of a fit; undefined thresholds are reported as None."""
    p = result.params
    s, _ = p.null_shape
    z_bayes = bayes_threshold(z, result.posteriors, tau)
    return {
        "p0": p.p0,
        "a": p.a,
        "b": p.b,
        "nu": p.nu,
        "c_delta": p.c_delta,
        "loglik": result.loglik,
        "iterations": result.iterations,
        "converged": result.converged,
        "n": z.n_samples,
        "P": z.P,
        "M": z.M,
        "z_threshold_bayes": None if math.isnan(z_bayes) else z_bayes,
        "z_threshold_freq": beta_quantile(epsilon, s, 0.5),
    }
