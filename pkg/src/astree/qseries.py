"""q-series constants of the mean-profile eigenstructure.

For ``c > 1``::

    a_k = (-1)^k c^k / ((c-1)(c^2-1)...(c^k-1))
    b_k = c^1 c^2 ... c^k / ((c-1)(c^2-1)...(c^k-1))
    b_inf = 1 / prod_{l>=1} (1 - c^-l)

The lower-triangular Toeplitz matrices built from ``a`` and ``b`` are
mutually inverse, and the columns of the ``a`` matrix are eigenvectors of the
bidiagonal generator of the mean profile.  The residual functions here check
those identities numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from . import _numeric
from .core import (
    DEFAULT_CONTROL,
    ConvergenceError,
    SeriesControl,
    Truncation,
    check_analytic_c,
    format_real,
    write_csv,
)

__all__ = [
    "coeff_a",
    "coeff_b",
    "b_infinity",
    "inverse_identity_residual",
    "eigen_residual",
    "euler_vanishing_sum",
    "QTable",
    "build_qtable",
    "dump_qtable",
]


def coeff_a(k: int, c: float) -> float:
    """``a_k`` by the recurrence ``a_k = -a_{k-1} c / (c^k - 1)``."""
    if k < 0:
        return 0.0
    c = check_analytic_c(c)
    return float(a_table(c, k + 1, _numeric.DOUBLE)[k])


def coeff_b(k: int, c: float) -> float:
    """``b_k`` by the recurrence ``b_k = b_{k-1} c^k / (c^k - 1)``."""
    if k < 0:
        return 0.0
    c = check_analytic_c(c)
    return float(b_table(c, k + 1, _numeric.DOUBLE)[k])


def _powm1(c, k, ctx):
    # c**k - 1 without cancellation for c close to 1
    if ctx is _numeric.DOUBLE:
        return math.expm1(k * math.log(c))
    return ctx.expm1(k * ctx.log(ctx.num(c)))


def _inv_powm1(c, k, ctx):
    """``1 / (c**k - 1)``, finite for every ``k``."""
    if ctx is _numeric.DOUBLE:
        x = k * math.log(c)
        return math.exp(-x) if x > 700 else 1.0 / math.expm1(x)
    return 1 / _powm1(c, k, ctx)


@lru_cache(maxsize=256)
def a_table(c: float, size: int, ctx=_numeric.DOUBLE) -> tuple:
    c_ = ctx.num(c)
    out = [ctx.num(1)]
    for k in range(1, size):
        out.append(-out[-1] * c_ * _inv_powm1(c, k, ctx))
    return tuple(out)


@lru_cache(maxsize=256)
def b_table(c: float, size: int, ctx=_numeric.DOUBLE) -> tuple:
    out = [ctx.num(1)]
    for k in range(1, size):
        out.append(out[-1] * (1 + _inv_powm1(c, k, ctx)))
    return tuple(out)


@lru_cache(maxsize=256)
def _b_inf(c: float, ctx=_numeric.DOUBLE):
    # log b_inf = -sum log(1 - c^-l); each factor is positive, so no cancellation
    logc = math.log(c) if ctx is _numeric.DOUBLE else ctx.log(ctx.num(c))
    terms = []
    l = 1
    while True:
        q = ctx.exp(-l * logc)
        if ctx is _numeric.DOUBLE:
            terms.append(-math.log1p(-q))
        else:
            terms.append(-ctx.log(1 - q))
        if q < ctx.eps * 1e-3:
            break
        l += 1
    return ctx.exp(ctx.fsum(terms))


def b_infinity(c: float, control: SeriesControl = DEFAULT_CONTROL) -> float:
    """``(prod_{l>=1} (1 - c^-l))^-1``, a number in ``(1, inf)``."""
    c = check_analytic_c(c)
    return float(_b_inf(c, _numeric.context_for(control)))


def inverse_identity_residual(n: int, c: float, control: SeriesControl = DEFAULT_CONTROL,
                              atol: float = 1e-12) -> float:
    """Entry ``n`` below the diagonal of ``F E``: ``sum_k b_{n-k} a_k``.

    Equals 1 for ``n = 0`` and 0 for ``n > 0``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    c = check_analytic_c(c)

    def compute(ctx):
        a = a_table(c, n + 1, ctx)
        b = b_table(c, n + 1, ctx)
        terms = [b[n - k] * a[k] for k in range(n + 1)]
        err = ctx.eps * (2 * n + 4) * ctx.fsum(abs(x) for x in terms)
        return ctx.fsum(terms), err

    value, _, _ = _numeric.evaluate(compute, control, lambda v, e: e <= atol,
                                    "inverse_identity_residual")
    return float(value)


def eigen_residual(K: int, c: float, control: SeriesControl = DEFAULT_CONTROL,
                   atol: float = 1e-12) -> float:
    """Largest ``|(A E)_ij + c^-j e_ij|`` over the leading ``K x K`` block.

    ``A`` has diagonal ``-c^-i`` and subdiagonal ``A[i, i-1] = c^-(i-1)``;
    ``E[i, j] = a_{i-j}``.  Rows ``i < K-1`` and columns ``j <= i`` are used.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    c = check_analytic_c(c)

    def compute(ctx):
        a = a_table(c, K, ctx)
        cinv = [ctx.exp(-i * ctx.log(ctx.num(c))) if ctx is not _numeric.DOUBLE
                else c ** -i for i in range(K)]
        A = [[ctx.num(0)] * K for _ in range(K)]
        for i in range(K):
            A[i][i] = -cinv[i]
            if i > 0:
                A[i][i - 1] = cinv[i - 1]
        E = [[a[i - j] if i >= j else ctx.num(0) for j in range(K)] for i in range(K)]
        worst = ctx.num(0)
        err = ctx.num(0)
        for i in range(K - 1):
            for j in range(i + 1):
                parts = [A[i][l] * E[l][j] for l in range(K)] + [cinv[j] * E[i][j]]
                worst = max(worst, abs(ctx.fsum(parts)))
                err = max(err, ctx.eps * (2 * K + 4) * ctx.fsum(abs(p) for p in parts))
        return worst, err

    value, _, _ = _numeric.evaluate(compute, control, lambda v, e: e <= atol, "eigen_residual")
    return float(value)


def _series(ctx, terms, control: SeriesControl):
    """Sum an iterator of terms under the consecutive-small-term rule.

    Returns ``(sum, sum_of_abs, Truncation)``; callers add
    ``Truncation.last_term`` to their error estimates for the dropped tail.
    """
    # extended contexts chase their own epsilon, not the double-oriented default
    tol = control.rel_tol if ctx.digits is None else min(control.rel_tol, ctx.eps)
    acc = []
    abs_acc = ctx.num(0)
    small = 0
    k = -1
    term = ctx.num(0)
    for k, term in enumerate(terms):
        acc.append(term)
        abs_acc += abs(term)
        if abs(term) <= tol * abs_acc:
            small += 1
            if small >= control.consec:
                return ctx.fsum(acc), abs_acc, Truncation(k, float(abs(term)), True, ctx.digits)
        else:
            small = 0
        if k + 1 >= control.k_max:
            break
    return ctx.fsum(acc), abs_acc, Truncation(k, float(abs(term)), False, ctx.digits)


def euler_vanishing_sum(N: int, c: float, control: SeriesControl = DEFAULT_CONTROL,
                        report: bool = False):
    """Truncated ``sum_k a_k c^(N k)``.

    The generating function ``sum_k a_k x^k`` is the infinite product
    ``prod_{j>=0} (1 - x c^-j)``, which vanishes at ``x = c^N``; the sum is
    therefore a pure cancellation test.
    """
    if N < 0:
        raise ValueError("N must be nonnegative")
    c = check_analytic_c(c)

    def compute(ctx):
        a = a_table(c, control.k_max, ctx)
        logc = math.log(c) if ctx is _numeric.DOUBLE else ctx.log(ctx.num(c))
        terms = (a[k] * ctx.exp(N * k * logc) for k in range(control.k_max))
        value, abs_sum, trunc = _series(ctx, terms, control)
        if not trunc.converged:
            raise ConvergenceError(f"euler_vanishing_sum: no convergence by k={control.k_max}")
        return value, ctx.eps * 4 * control.k_max * abs_sum, trunc

    value, _, trunc, _ = _numeric.evaluate(compute, control, lambda v, e: e <= 1e-12,
                                           "euler_vanishing_sum")
    return (float(value), trunc) if report else float(value)


@dataclass(frozen=True)
class QTable:
    c: float
    a: tuple[float, ...]
    b: tuple[float, ...]
    b_inf: float
    control: SeriesControl
    truncation: Truncation


def build_qtable(c: float, control: SeriesControl = DEFAULT_CONTROL) -> QTable:
    """Tabulate ``a_k`` and ``b_k`` until ``a_k`` is negligible and ``b_k`` has
    converged to ``b_inf`` (both to ``control.rel_tol``)."""
    c = check_analytic_c(c)
    ctx = _numeric.DOUBLE
    a = a_table(c, control.k_max, ctx)
    b = b_table(c, control.k_max, ctx)
    binf = float(_b_inf(c, ctx))
    amax = max(abs(x) for x in a)
    small = 0
    for k in range(control.k_max):
        if abs(a[k]) <= control.rel_tol * amax and abs(b[k] - binf) <= control.rel_tol * binf:
            small += 1
            if small >= control.consec:
                trunc = Truncation(k, abs(a[k]), True)
                break
        else:
            small = 0
    else:
        raise ConvergenceError(f"q-table for c={c:g} did not converge within k_max={control.k_max}")
    return QTable(c, tuple(float(x) for x in a[: k + 1]), tuple(float(x) for x in b[: k + 1]),
                  binf, control, trunc)


def dump_qtable(path_or_stream, table: QTable, meta=None) -> None:
    rows = ((k, ak, bk) for k, (ak, bk) in enumerate(zip(table.a, table.b)))
    write_csv(path_or_stream, ("k", "a_k", "b_k"), rows, meta,
              trailer=[f"# b_inf={format_real(table.b_inf)}"])
