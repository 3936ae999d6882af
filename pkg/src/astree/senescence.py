"""Limit of the proliferating fraction under a depth cap.

With ``S(y) = sum_k a_k exp(-c^k y)`` and ``tau = t / r`` the limit curve is
``L = N / D`` where::

    N = sum_{i>=0} 2^-i S(c^i tau)
    D = sum_{i>=0} (2^-i S(c^i tau) + 2 S(c^-(i+1) tau))

Evaluated literally, the inner sums cancel badly.  Writing
``G(s) = b_inf sum_j a_j c^-j exp(-c^j s)`` for the survival function of
``W = sum_{j>=0} c^-j E_j`` (``E_j`` i.i.d. standard exponentials) one has
``b_inf S(s) = G(s) - G(c s)``, and both outer sums telescope::

    b_inf N = G(tau) - sum_{i>=1} 2^-i G(c^i tau)
    b_inf D = 2 - G(tau) - sum_{i>=1} 2^-i G(c^i tau)

so ``1 - L = 2 P(W <= tau) / (b_inf D)``.  That form is the default; the
literal double sum is kept as ``method="direct"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import _numeric
from .core import (
    DEFAULT_CONTROL,
    ConvergenceError,
    SeriesControl,
    Truncation,
    ValidationError,
    check_analytic_c,
    validate,
    Parameters,
)
from .moments import HypoexpSpec, _cpow, hypoexp_restricted_mgf, mean_count
from .qseries import _b_inf, _series, a_table

__all__ = [
    "LimitCurvePoint",
    "limit_fraction",
    "limit_curve",
    "limit_fraction_array",
    "expected_counts_asymptotic",
    "expected_counts_exact",
    "split_time_survival",
    "senescent_upper_bound",
]


@dataclass(frozen=True)
class LimitCurvePoint:
    """One point of the limit curve.

    ``senescent`` is ``1 - L`` computed without cancellation, so it stays
    accurate where ``L`` rounds to 1.
    """

    t: float
    L: float
    numerator: float
    denominator: float
    senescent: float
    truncation: tuple[Truncation, ...]
    digits: int | None = None


def _checked(t, c, r):
    c = check_analytic_c(c)
    r = validate(Parameters(c, r), "analytic").r
    t = float(t)
    if not math.isfinite(t) or t <= 0:
        raise ValidationError(f"limit fraction needs t>0, got t={t!r}")
    return t, c, r


def _survival(ctx, s, c, control):
    """``(G(s) / b_inf, abs_error / b_inf, Truncation)``."""
    a = a_table(c, control.k_max, ctx)
    terms = (a[j] * ctx.exp(-_cpow(c, j, ctx) * s - j * _log(c, ctx)) for j in range(control.k_max))
    value, abs_sum, trunc = _series(ctx, terms, control)
    if not trunc.converged:
        raise ConvergenceError(f"survival series did not converge by k={control.k_max}")
    err = ctx.eps * 8 * (trunc.stop_index + 1) * abs_sum + 4 * ctx.num(trunc.last_term)
    return value, err, trunc


def _log(c, ctx):
    return math.log(c) if ctx is _numeric.DOUBLE else ctx.log(ctx.num(c))


def split_time_survival(s: float, c: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """``P(W > s)`` for ``W = sum_{j>=0} c^-j E_j``."""
    c = check_analytic_c(c)
    s = float(s)
    if s < 0:
        raise ValidationError("s must be nonnegative")

    def compute(ctx):
        g, err, _ = _survival(ctx, ctx.num(s), c, control)
        binf = _b_inf(c, ctx)
        return binf * g, binf * err

    value, _, _ = _numeric.evaluate(compute, control, _numeric.relative_ok(1e-12, 1e-15),
                                    "split_time_survival")
    return float(value)


def _telescoped(ctx, tau, c, control):
    binf = _b_inf(c, ctx)
    tau_ = ctx.num(tau)
    g0, e0, tr0 = _survival(ctx, tau_, c, control)
    g0, e0 = g0 * binf, e0 * binf
    tail, tail_err = [], []
    small = 0
    i = 0
    half = ctx.num(1)
    last = ctx.num(0)
    while True:
        i += 1
        half = half / 2
        gi, ei, _ = _survival(ctx, _cpow(c, i, ctx) * tau_, c, control)
        last = half * gi * binf
        tail.append(last)
        tail_err.append(half * ei * binf)
        if abs(last) <= control.rel_tol * abs(g0) or half <= control.rel_tol * ctx.eps:
            small += 1
            if small >= control.consec:
                break
        else:
            small = 0
        if i >= control.k_max:
            raise ConvergenceError(f"limit_fraction: outer sum did not converge by i={i}")
    s1 = ctx.fsum(tail)
    s1_err = ctx.fsum(tail_err) + ctx.eps * i * abs(s1)
    numer = (g0 - s1) / binf
    denom = (2 - g0 - s1) / binf
    f0 = 1 - g0
    err_num = (e0 + s1_err) / binf + ctx.eps * abs(numer)
    value = (numer, denom, f0)
    err = (err_num, err_num, e0)
    truncs = (tr0, Truncation(i, float(abs(last)), True, ctx.digits))
    return value, err, truncs


def _direct(ctx, tau, c, control):
    a = a_table(c, control.k_max, ctx)
    logc = _log(c, ctx)
    logtau = ctx.log(ctx.num(tau))

    double = ctx is _numeric.DOUBLE

    def inner(logy):
        def terms():
            for k in range(control.k_max):
                z = k * logc + logy
                yield ctx.num(0) if double and z > 700 else a[k] * ctx.exp(-ctx.exp(z))
        s, abs_sum, trunc = _series(ctx, terms(), control)
        if not trunc.converged:
            raise ConvergenceError("limit_fraction: inner sum did not converge")
        return s, abs_sum + 4 * ctx.num(trunc.last_term) / ctx.eps

    num_parts, den_parts, abs_total = [], [], []
    small = 0
    i = -1
    last = ctx.num(0)
    while True:
        i += 1
        w = ctx.num(2) ** (-i)
        s_ahead, abs_ahead = inner(i * logc + logtau)
        s_behind, abs_behind = inner(logtau - (i + 1) * logc)
        num_parts.append(w * s_ahead)
        den_parts.append(w * s_ahead)
        den_parts.append(2 * s_behind)
        abs_total.append(w * abs_ahead + 2 * abs_behind)
        last = abs(w * s_ahead) + abs(2 * s_behind)
        partial = abs(ctx.fsum(den_parts))
        if last <= control.rel_tol * partial:
            small += 1
            if small >= control.consec:
                break
        else:
            small = 0
        if i >= 5 * control.k_max:
            raise ConvergenceError(f"limit_fraction: outer sum did not converge by i={i}")
    numer = ctx.fsum(num_parts)
    denom = ctx.fsum(den_parts)
    err = ctx.eps * 8 * control.k_max * ctx.fsum(abs_total)
    value = (numer, denom, (denom - numer) * _b_inf(c, ctx) / 2)
    return value, (err, err, err * _b_inf(c, ctx)), (Truncation(i, float(last), True, ctx.digits),)


def limit_fraction(t: float, c: float, r: float = 1.0, control: SeriesControl = DEFAULT_CONTROL,
                   method: str = "telescoped", abs_tol: float | None = None) -> LimitCurvePoint:
    """Limiting proliferating fraction ``L(t)`` at rescaled time ``t``.

    ``r`` enters as ``t / r``: it is a time unit here, so a simulation with
    splitting rate ``r c^-n`` corresponds to ``limit_fraction(t, c, 1 / r)``.

    ``method="telescoped"`` (default) uses the survival-function form;
    ``method="direct"`` evaluates the double sums term by term, inner sums
    first.  In ``auto`` precision the digit count grows until the numerator,
    denominator and ``1 - L`` all meet their error targets; with ``abs_tol``
    only the absolute error of ``L`` is targeted, and ``senescent`` is then
    only as accurate as that.
    """
    t, c, r = _checked(t, c, r)
    tau = t / r
    if method == "telescoped":
        worker = _telescoped
    elif method == "direct":
        worker = _direct
    else:
        raise ValueError(f"unknown method {method!r}")

    def compute(ctx):
        value, err, truncs = worker(ctx, tau, c, control)
        return value, err, truncs

    def ok(value, err):
        numer, denom, f0 = value
        e_num, e_den, e_f0 = err
        if abs_tol is not None:
            return denom > 0 and (e_num + abs(numer / denom) * e_den) / denom <= abs_tol
        return (e_num <= 1e-12 * abs(numer) + 1e-300 and e_den <= 1e-12 * abs(denom)
                and e_f0 <= 1e-8 * abs(f0))

    (numer, denom, f0), _, truncs, ctx = _numeric.evaluate(compute, control, ok, "limit_fraction")
    binf = _b_inf(c, ctx)
    senescent = 2 * f0 / (binf * denom)
    return LimitCurvePoint(t, float(numer / denom), float(numer), float(denom), float(senescent),
                           truncs, ctx.digits)


def limit_curve(ts, c: float, r: float = 1.0, control: SeriesControl = DEFAULT_CONTROL):
    return [limit_fraction(t, c, r, control) for t in ts]


def expected_counts_asymptotic(t: float, c: float, r: float, h: int,
                               control: SeriesControl = DEFAULT_CONTROL) -> tuple[float, float]:
    """Leading-order ``(E Z^p, E Z^s)`` at model time ``t c^h``.

    ``zp = b_inf 2^h N`` and ``zs = b_inf 2^h (D - N) = 2^(h+1) P(W <= t/r)``.
    """
    if h < 0 or int(h) != h:
        raise ValidationError("h must be a nonnegative integer")
    point = limit_fraction(t, c, r, control)
    binf = float(_b_inf(check_analytic_c(c), _numeric.DOUBLE))
    zp = math.ldexp(binf * point.numerator, int(h))
    zs = math.ldexp(binf * (point.denominator * point.senescent) / 2, int(h) + 1)
    return zp, zs


def expected_counts_exact(t: float, c: float, r: float, h: int,
                          control: SeriesControl = DEFAULT_CONTROL) -> tuple[float, float]:
    """Finite-``h`` ``(E Z^p, E Z^s)`` at model time ``t c^h``.

    Depths ``0..h`` evolve as in the uncapped model, so
    ``E Z^p = sum_{n<=h} 2^n y_n`` and ``E Z^s = 2^(h+1) P(T_h <= t c^h / r)``
    with ``T_h`` the split time of the leftmost depth-``h`` vertex.  As in
    :func:`limit_fraction`, ``r`` divides time.
    """
    if h < 0 or int(h) != h:
        raise ValidationError("h must be a nonnegative integer")
    t, c, r = _checked(t, c, r)
    h = int(h)
    T = t * c ** h / r
    zp = math.fsum(mean_count(n, T, c, control) for n in range(h + 1))
    zs = math.ldexp(hypoexp_restricted_mgf(0.0, T, HypoexpSpec(h, c), control), h + 1)
    return zp, zs


def senescent_upper_bound(t: float, c: float, r: float = 1.0) -> float:
    """Rigorous upper bound on ``1 - L`` that is cheap in double precision.

    ``1 - L = 2 F(tau) / (F(tau) + P)`` with ``F(s) = P(W <= s)`` and
    ``P = sum_{i>=1} 2^-i F(c^i tau)``.  ``F(tau)`` is bounded above by
    Chernoff's inequality on the Laplace transform ``prod_j (1 + l c^-j)^-1``
    and ``P`` below by Cantelli's inequality on each term.  Useful where
    ``1 - L`` is far below rounding level and exact evaluation is costly.
    """
    t, c, r = _checked(t, c, r)
    tau = t / r
    logc = math.log(c)
    jmax = int(60 / logc) + 2
    q = np.exp(-logc * np.arange(jmax))

    def log_laplace(lam):
        # beyond jmax lam c^-j is tiny, so log1p is linear there
        return np.sum(np.log1p(lam * q)) + lam * q[-1] / (c - 1)

    def chernoff(x):
        lam = math.exp(x)
        return lam * tau - log_laplace(lam)

    res = minimize_scalar(chernoff, bounds=(-20.0, 200.0), method="bounded",
                          options={"xatol": 1e-6})
    log_f0 = min(float(res.fun), 0.0)
    mu = c / (c - 1)
    var = 1.0 / (1.0 - 1.0 / (c * c))
    best = -math.inf
    for i in range(1, 4000):
        s = tau * math.exp(i * logc)
        if s > mu:
            f_low = 1.0 - var / (var + (s - mu) ** 2)
            best = max(best, math.log(f_low) - i * math.log(2.0))
            if f_low > 0.5:
                break
    return min(1.0, 2.0 * math.exp(log_f0 - best))


def limit_fraction_array(ts, c: float, r: float = 1.0, outer: int = 60):
    """Vectorized double-precision limit curve.

    Returns ``(L, err)`` arrays where ``err`` is a rounding-error bound on
    ``L``.  Used by the fitter, which treats points with a large ``err`` as
    unusable rather than escalating precision.
    """
    c = check_analytic_c(c)
    tau = np.asarray(ts, dtype=float) / float(r)
    if np.any(~(tau > 0)):
        raise ValidationError("limit fraction needs t>0")
    a = np.array(a_table(c, 400, _numeric.DOUBLE))
    k = np.arange(a.size)
    with np.errstate(over="ignore", under="ignore"):
        coef = a * np.exp(-k * math.log(c))
    keep = np.nonzero(np.abs(coef) > 1e-22 * np.abs(coef).max())[0]
    coef = coef[: keep[-1] + 1]
    growth = c ** np.arange(coef.size, dtype=float)
    binf = float(_b_inf(c, _numeric.DOUBLE))
    scale = c ** np.arange(outer + 1, dtype=float)
    s = tau[:, None] * scale[None, :]
    with np.errstate(over="ignore", under="ignore"):
        e = np.exp(-s[..., None] * growth)
    g = binf * (e @ coef)
    g_abs = binf * (e @ np.abs(coef))
    eps = np.finfo(float).eps * 8 * coef.size
    half = 0.5 ** np.arange(outer + 1)
    half[0] = 0.0
    s1 = g @ half
    g0 = g[:, 0]
    numer = g0 - s1
    denom = 2.0 - g0 - s1
    L = numer / denom
    err_num = eps * (g_abs[:, 0] + g_abs @ half) + np.finfo(float).eps * (np.abs(g0) + np.abs(s1))
    err = err_num * (1.0 + np.abs(L)) / np.abs(denom)
    return L, err
