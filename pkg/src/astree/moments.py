"""Moments of the external-vertex profile for ``c > 1``.

Mean occupancy of the leftmost depth-``n`` vertex::

    y_n(t) = sum_{k=0}^n a_k b_{n-k} exp(-c^(k-n) t),   E[X_n(t)] = 2^n y_n(t)

and its front-centred limit ``x_i(t) = b_inf sum_k a_k exp(-c^(k-i) t)``.

Covariances decompose over the depth ``m`` of the most recent common
ancestor of two uniformly chosen vertices.  Given the time ``T_m`` at which
the ancestor ``0_m`` splits (a hypoexponential sum with rates
``1, c^-1, ..., c^-m``), the two descendant lineages restart independently at
depth ``m + 1``, so::

    E[Y_{0_n}(t) | T_m] = y_{n-m-1}(c^-(m+1) (t - T_m)) 1{T_m <= t}

which expands into exponentials ``exp(-c^(k-n) (t - T_m))`` weighted by
``a_k b_{n-m-1-k}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from . import _numeric
from .core import (
    DEFAULT_CONTROL,
    ConditioningError,
    ConvergenceError,
    SeriesControl,
    ValidationError,
    check_analytic_c,
    validate,
    Parameters,
)
from .qseries import _b_inf, _series, a_table, b_table

__all__ = [
    "mean_occupancy",
    "mean_count",
    "limit_profile",
    "ode_profile",
    "HypoexpSpec",
    "hypoexp_restricted_mgf",
    "pair_cov",
    "profile_cov_exact",
    "cov_prefactor",
    "CovRegime",
    "cov_regime",
    "profile_cov_asymptotic",
]

CRITICAL_BAND = 1e-12
SQRT2 = math.sqrt(2.0)


def _logc(c, ctx):
    return math.log(c) if ctx is _numeric.DOUBLE else ctx.log(ctx.num(c))


def _cpow(c, e, ctx):
    """``c**e`` for integer ``e`` in the context's arithmetic."""
    if ctx is _numeric.DOUBLE:
        return c ** e
    return ctx.exp(e * _logc(c, ctx))


def _check_time(t, strict=False):
    t = float(t)
    if not math.isfinite(t) or t < 0 or (strict and t == 0):
        raise ValidationError(f"time must be {'positive' if strict else 'nonnegative'}, got {t!r}")
    return t


# --- first moments -------------------------------------------------------------


def _y(ctx, n, t, c):
    """``(y_n(t), abs_error_estimate)`` in context ``ctx``."""
    if n < 0:
        return ctx.num(0), ctx.num(0)
    a = a_table(c, n + 1, ctx)
    b = b_table(c, n + 1, ctx)
    t_ = ctx.num(t)
    terms = [a[k] * b[n - k] * ctx.exp(-_cpow(c, k - n, ctx) * t_) for k in range(n + 1)]
    err = ctx.eps * (2 * n + 6) * ctx.fsum(abs(x) for x in terms)
    return ctx.fsum(terms), err


def mean_occupancy(n: int, t: float, c: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """Probability ``y_n(t)`` that the vertex ``0...0`` at depth ``n`` is external."""
    c = check_analytic_c(c)
    t = _check_time(t)
    if n < 0:
        raise ValidationError("depth must be nonnegative")
    if t == 0:
        return 1.0 if n == 0 else 0.0
    # absolute floor scaled so that the count 2^n y_n is good to 1e-13
    value, _, _ = _numeric.evaluate(lambda ctx: _y(ctx, n, t, c), control,
                                    _numeric.relative_ok(1e-10, math.ldexp(1e-13, -n)),
                                    "mean_occupancy")
    return float(value)


def mean_count(n: int, t: float, c: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """``E[X_n(t)] = 2^n y_n(t)``."""
    return math.ldexp(mean_occupancy(n, t, c, control), n)


def limit_profile(i: int, t: float, c: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """Front-centred limit ``x_i(t)`` of the normalized profile ``2^-(n+i) X_{n+i}(t c^n)``."""
    c = check_analytic_c(c)
    t = _check_time(t, strict=True)

    def compute(ctx):
        a = a_table(c, control.k_max, ctx)
        t_ = ctx.num(t)
        terms = (a[k] * ctx.exp(-_cpow(c, k - i, ctx) * t_) for k in range(control.k_max))
        s, abs_sum, trunc = _series(ctx, terms, control)
        if not trunc.converged:
            raise ConvergenceError(f"limit_profile: no convergence by k={control.k_max}")
        binf = _b_inf(c, ctx)
        return binf * s, ctx.eps * 8 * (trunc.stop_index + 1) * binf * abs_sum, trunc

    value, _, _, _ = _numeric.evaluate(compute, control, _numeric.relative_ok(1e-10, 1e-14),
                                       "limit_profile")
    return float(value)


def ode_profile(t: float, depth_max: int, c: float, tol: float = 1e-10) -> np.ndarray:
    """Integrate ``dy_n/dt = c^-(n-1) y_{n-1} - c^-n y_n`` from ``y(0) = e_0``.

    An explicit adaptive Runge-Kutta (Dormand-Prince 8) integration, used as
    an oracle independent of the closed form.  Works for any ``c > 0``.
    """
    c = validate(Parameters(c), "simulate").c
    t = _check_time(t)
    if depth_max < 0:
        raise ValidationError("depth_max must be nonnegative")
    y0 = np.zeros(depth_max + 1)
    y0[0] = 1.0
    if t == 0:
        return y0
    rate = c ** -np.arange(depth_max + 1, dtype=float)

    def rhs(_, y):
        out = -rate * y
        out[1:] += rate[:-1] * y[:-1]
        return out

    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=tol, atol=tol * 1e-3)
    if sol.status != 0:
        raise ConvergenceError(f"ode_profile: integration failed: {sol.message}")
    return sol.y[:, -1]


# --- hypoexponential split time of the common ancestor -----------------------


@dataclass(frozen=True)
class HypoexpSpec:
    """``T_m``: sum of independent exponentials with rates ``c^-l``, ``l = 0..m``."""

    m: int
    c: float

    def __post_init__(self):
        if self.m < 0:
            raise ValidationError("m must be nonnegative")
        if not self.c > 1:
            raise ValidationError("distinct rates need c>1")

    @property
    def rates(self) -> tuple[float, ...]:
        return tuple(self.c ** -l for l in range(self.m + 1))


@lru_cache(maxsize=512)
def _weights(m: int, c: float, ctx):
    """Partial-fraction weights ``W_l = prod_{j!=l} r_j / (r_j - r_l)`` and rates.

    Built from log magnitudes: ``|W_l| = prod_{d=1}^{l} 1/(1-c^-d)
    * prod_{d=1}^{m-l} c^-d/(1-c^-d)`` with sign ``(-1)^(m-l)``.
    """
    logc = _logc(c, ctx)
    if ctx is _numeric.DOUBLE:
        lg = [0.0] + [-math.log(-math.expm1(-d * logc)) for d in range(1, m + 1)]
    else:
        lg = [ctx.num(0)] + [-ctx.log(-ctx.expm1(-d * logc)) for d in range(1, m + 1)]
    cum = [ctx.num(0)]
    for d in range(1, m + 1):
        cum.append(cum[-1] + lg[d])
    weights = []
    rates = []
    for l in range(m + 1):
        d = m - l
        logw = cum[l] + cum[d] - logc * (d * (d + 1) // 2)
        w = ctx.exp(logw)
        weights.append(-w if d % 2 else w)
        rates.append(ctx.exp(-l * logc))
    return tuple(weights), tuple(rates)


def _phi_discounted(ctx, s, r, t):
    """``exp(-s t) (1 - exp(-(r - s) t)) / (r - s)`` without overflow."""
    delta = r - s
    x = delta * t
    if abs(x) < 1e-6:
        series = t * (1 - x / 2 + x * x / 6 - x * x * x / 24)
        return ctx.exp(-s * t) * series
    if delta > 0:
        return ctx.exp(-s * t) * (-ctx.expm1(-x)) / delta
    return ctx.exp(-r * t) * (-ctx.expm1(x)) / (-delta)


def _discounted_mgf(ctx, s, t, m, c):
    """``E[exp(-s (t - T_m)) 1{T_m <= t}]`` and the sum of absolute terms."""
    weights, rates = _weights(m, c, ctx)
    terms = [w * r * _phi_discounted(ctx, s, r, t) for w, r in zip(weights, rates)]
    return ctx.fsum(terms), ctx.fsum(abs(x) for x in terms)


def hypoexp_restricted_mgf(s: float, t: float, spec: HypoexpSpec,
                           control: SeriesControl = DEFAULT_CONTROL) -> float:
    """``E[exp(s T_m) 1{T_m <= t}]`` by partial fractions.

    Raises :class:`ConditioningError` when the alternating sum cancels more
    than about ``1e6`` ulps at the working precision.
    """
    t = _check_time(t)
    c = float(spec.c)

    def compute(ctx):
        s_, t_ = ctx.num(s), ctx.num(t)
        value, abs_sum = _discounted_mgf(ctx, s_, t_, spec.m, c)
        scale = ctx.exp(s_ * t_)
        return value * scale, ctx.eps * abs_sum * scale

    try:
        value, _, _ = _numeric.evaluate(compute, control,
                                        _numeric.relative_ok(1e6 * _numeric.DOUBLE.eps),
                                        "hypoexp_restricted_mgf")
    except OverflowError:
        return math.inf
    return float(value)


# --- covariances ---------------------------------------------------------------


def _pair(ctx, n, n2, m, t, c):
    """``(y_{n,n2,m}(t), abs_error_estimate)``."""
    if m == n:
        yn, en = _y(ctx, n, t, c)
        yn2, en2 = _y(ctx, n2, t, c) if n2 != n else (yn, en)
        first = yn if n == n2 else ctx.num(0)
        value = first - yn * yn2
        return value, en * (1 + abs(yn2)) + en2 * abs(yn) + ctx.eps * abs(yn * yn2)
    N, N2 = n - m - 1, n2 - m - 1
    a = a_table(c, N2 + 1, ctx)
    b = b_table(c, N2 + 1, ctx)
    t_ = ctx.num(t)
    lam = [_cpow(c, k - n, ctx) for k in range(N + 1)]
    lam2 = [_cpow(c, k - n2, ctx) for k in range(N2 + 1)]
    single = [_discounted_mgf(ctx, x, t_, m, c) for x in lam]
    single2 = [_discounted_mgf(ctx, x, t_, m, c) for x in lam2]
    terms = []
    err_terms = []
    for k in range(N + 1):
        wk = a[k] * b[N - k]
        d1, e1 = single[k]
        for k2 in range(N2 + 1):
            w = wk * a[k2] * b[N2 - k2]
            d2, e2 = single2[k2]
            joint, ej = _discounted_mgf(ctx, lam[k] + lam2[k2], t_, m, c)
            terms.append(w * (joint - d1 * d2))
            err_terms.append(abs(w) * (ej + e1 * abs(d2) + e2 * abs(d1) + abs(joint) + abs(d1 * d2)))
    err = ctx.eps * (4 * (m + N2) + 16) * ctx.fsum(err_terms)
    return ctx.fsum(terms), err


def _validate_pair(n, n2, m, t, c):
    c = check_analytic_c(c)
    t = _check_time(t)
    if not 0 <= m <= n <= n2:
        raise ValidationError(f"need 0 <= m <= n <= n', got m={m}, n={n}, n'={n2}")
    return c, t


def pair_cov(n: int, n2: int, m: int, t: float, c: float,
             control: SeriesControl = DEFAULT_CONTROL) -> float:
    """``Cov[Y_{0_n}(t), Y_{0_m 1_{n'-m}}(t)]`` for vertices whose common ancestor is at depth ``m``."""
    c, t = _validate_pair(n, n2, m, t, c)
    value, _, _ = _numeric.evaluate(lambda ctx: _pair(ctx, n, n2, m, t, c), control,
                                    _numeric.relative_ok(1e-8, 1e-15), "pair_cov")
    return float(value)


def profile_cov_exact(n: int, n2: int, t: float, c: float,
                      control: SeriesControl = DEFAULT_CONTROL, report: bool = False):
    """Exact ``Cov[X_n(t), X_{n'}(t)]``.

    ``2^(n+n') sum_{m=0}^{n} 2^-min(m+1, n) y_{n,n',m}(t)``, summed in order
    ``m = 0..n``.  With ``report=True`` returns ``(value, digits)`` where
    ``digits`` is ``None`` for double precision.
    """
    if n > n2:
        n, n2 = n2, n
    c = check_analytic_c(c)
    t = _check_time(t)
    if n < 0:
        raise ValidationError("depths must be nonnegative")
    if t == 0:
        return (0.0, None) if report else 0.0

    def compute(ctx):
        parts = []
        errs = []
        for m in range(n + 1):
            v, e = _pair(ctx, n, n2, m, t, c)
            weight = ctx.num(2) ** (-min(m + 1, n))
            parts.append(weight * v)
            errs.append(weight * e)
        scale = ctx.num(2) ** (n + n2)
        return scale * ctx.fsum(parts), scale * ctx.fsum(errs)

    scale = 2.0 ** (n + n2)
    value, _, ctx = _numeric.evaluate(compute, control,
                                      _numeric.relative_ok(1e-8, 1e-14 * scale),
                                      "profile_cov_exact")
    value = float(value)
    if n == n2 and value < -1e-9 * scale:
        raise ConditioningError(f"negative variance {value:.6g} for X_{n}({t:g})")
    return (value, ctx.digits) if report else value


def cov_prefactor(i: int, i2: int, t: float, c: float,
                  control: SeriesControl = DEFAULT_CONTROL) -> float:
    """``b_inf^2 sum_{k,k'} a_k a_k' exp(-t (c^(k-i) + c^(k'-i'))) c^(k+k')``.

    The summand factorizes, so this is ``b_inf^2 U_i(t) U_i'(t)`` with
    ``U_i(t) = sum_k a_k c^k exp(-t c^(k-i))``.
    """
    c = check_analytic_c(c)
    t = _check_time(t, strict=True)

    def compute(ctx):
        t_ = ctx.num(t)
        a = a_table(c, control.k_max, ctx)
        us, errs = [], []
        for i_ in (i, i2):
            terms = (a[k] * _cpow(c, k, ctx) * ctx.exp(-_cpow(c, k - i_, ctx) * t_)
                     for k in range(control.k_max))
            s, abs_sum, trunc = _series(ctx, terms, control)
            if not trunc.converged:
                raise ConvergenceError(f"cov_prefactor: no convergence by k={control.k_max}")
            us.append(s)
            errs.append(ctx.eps * 8 * (trunc.stop_index + 1) * abs_sum)
        binf = _b_inf(c, ctx)
        value = binf * binf * us[0] * us[1]
        err = binf * binf * (errs[0] * abs(us[1]) + errs[1] * abs(us[0]) + errs[0] * errs[1])
        return value, err

    value, _, _ = _numeric.evaluate(compute, control, _numeric.relative_ok(1e-10, 1e-300),
                                    "cov_prefactor")
    return float(value)


@dataclass(frozen=True)
class CovRegime:
    tag: str
    prefactor: float
    scale_description: str


def cov_regime(c: float) -> CovRegime:
    """Growth regime of profile covariances; ``|c - sqrt 2| < 1e-12`` counts as critical."""
    c = check_analytic_c(c)
    if abs(c - SQRT2) < CRITICAL_BAND:
        return CovRegime("critical", 1.0, "2^n n sqrt(2)^(i+i')")
    if c < SQRT2:
        return CovRegime("subcritical", 2.0 / (2.0 - c * c), "(2/c)^(2n+i+i')")
    c2 = c * c
    return CovRegime("supercritical", c2 * c2 / (2.0 * (c2 - 1.0) * (c2 - 2.0)),
                     "2^(n+i') c^(i-i')")


def profile_cov_asymptotic(i: int, i2: int, n: int, t: float, c: float,
                           control: SeriesControl = DEFAULT_CONTROL):
    """Large-``n`` approximation of ``Cov[X_{n+i}(t c^n), X_{n+i'}(t c^n)]``.

    Returns ``(value, CovRegime)``.
    """
    if i > i2:
        raise ValidationError("need i <= i'")
    regime = cov_regime(c)
    pref = cov_prefactor(i, i2, t, c, control)
    if regime.tag == "subcritical":
        growth = (2.0 / c) ** (2 * n + i + i2)
    elif regime.tag == "critical":
        growth = 2.0 ** n * n * SQRT2 ** (i + i2)
    else:
        growth = 2.0 ** (n + i2) * c ** (i - i2)
    return pref * regime.prefactor * growth, regime
