"""Least-squares estimation of ``c`` (and optionally ``r``) from the limit curve.

The objective is ``sum_j w_j (L_obs_j - L(t_j; c, r))^2``.  ``c`` is searched
in ``log c``: a coarse grid scan locates the best cell, then a bounded Brent
search refines it.  With ``r`` free, each probe of ``c`` minimizes over
``log r`` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    ANALYTIC_C_FLOOR,
    AstreeError,
    ConvergenceError,
    ValidationError,
    read_csv_rows,
)
from .senescence import limit_fraction, limit_fraction_array, senescent_upper_bound

__all__ = ["Observation", "FitResult", "ingest", "model_curve", "objective", "fit_c"]

# absolute error in L above which the vectorized double evaluation is not trusted
_ARRAY_ERR = 1e-10


@dataclass(frozen=True)
class Observation:
    t: float
    L_obs: float
    weight: float = 1.0


@dataclass
class FitResult:
    c_hat: float
    r_hat: float
    sse: float
    iterations: int
    bracket: tuple[float, float]
    boundary: bool = False
    shrunk: bool = False
    r_free: bool = False
    diagnostics: list[str] = field(default_factory=list)
    valley: list[tuple[float, float, float]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "c_hat": self.c_hat,
            "r_hat": self.r_hat,
            "sse": self.sse,
            "iterations": self.iterations,
            "bracket": list(self.bracket),
            "boundary": self.boundary,
            "shrunk": self.shrunk,
            "r_free": self.r_free,
            "diagnostics": list(self.diagnostics),
            "valley": [list(v) for v in self.valley],
        }


def ingest(source) -> list[Observation]:
    """Parse ``t,L[,weight]`` CSV from a path, stream or literal text."""
    header, rows = read_csv_rows(source)
    if header not in (["t", "L"], ["t", "L", "weight"]):
        raise ValidationError(f"expected header t,L[,weight], got {','.join(header)}")
    out, bad = [], []
    for lineno, fields in rows:
        if len(fields) != len(header):
            bad.append(f"line {lineno}: expected {len(header)} fields, got {len(fields)}")
            continue
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            bad.append(f"line {lineno}: non-numeric field in {fields}")
            continue
        t, L = vals[0], vals[1]
        w = vals[2] if len(vals) == 3 else 1.0
        if not (math.isfinite(t) and t > 0):
            bad.append(f"line {lineno}: t must be positive, got {fields[0]}")
        elif not (0.0 <= L <= 1.0):
            bad.append(f"line {lineno}: L must lie in [0,1], got {fields[1]}")
        elif not (math.isfinite(w) and w > 0):
            bad.append(f"line {lineno}: weight must be positive, got {w}")
        else:
            out.append(Observation(t, L, w))
    if bad:
        raise ValidationError("rejected rows:\n  " + "\n  ".join(bad))
    if not out:
        raise ValidationError("no observations")
    return out


@lru_cache(maxsize=4096)
def _curve(ts: tuple, c: float) -> tuple:
    # L(t; c, 1); doubles where the rounding bound allows, auto precision elsewhere
    L, err = limit_fraction_array(np.array(ts), c)
    out = []
    for t, v, e in zip(ts, L.tolist(), err.tolist()):
        if not (e <= _ARRAY_ERR and math.isfinite(v)):
            try:
                if senescent_upper_bound(t, c) <= 1e-12:
                    v = 1.0
                else:
                    v = limit_fraction(t, c, abs_tol=_ARRAY_ERR).L
            except AstreeError:
                v = math.nan
        out.append(v)
    return tuple(out)


def model_curve(ts, c: float, r: float = 1.0, h: int | None = None) -> np.ndarray:
    """``L(t / r; c)`` at each ``t``; with ``h`` the times are raw model times."""
    ts = np.asarray(ts, dtype=float)
    scaled = ts / r if h is None else ts / (r * c ** h)
    return np.array(_curve(tuple(scaled.tolist()), float(c)))


def objective(obs, c: float, r: float = 1.0, h: int | None = None) -> float:
    t = np.array([o.t for o in obs])
    L = np.array([o.L_obs for o in obs])
    w = np.array([o.weight for o in obs])
    resid = L - model_curve(t, c, r, h)
    val = float(np.sum(w * resid * resid))
    return val if math.isfinite(val) else math.inf


def _best_r(obs, c, h, log_r_bounds, counter):
    def f(x):
        counter[0] += 1
        return objective(obs, c, math.exp(x), h)

    grid = np.linspace(*log_r_bounds, 13)
    vals = [f(x) for x in grid]
    k = int(np.argmin(vals))
    if not math.isfinite(vals[k]):
        return math.nan, math.inf
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-7})
    if res.fun <= vals[k]:
        return math.exp(res.x), float(res.fun)
    return math.exp(grid[k]), float(vals[k])


def fit_c(obs, r: float | str = 1.0, c_lo: float = ANALYTIC_C_FLOOR, c_hi: float = 10.0,
          tol: float = 1e-6, h: int | None = None, grid_points: int = 25,
          r_bounds: tuple[float, float] = (1e-3, 1e3)) -> FitResult:
    """Minimize the weighted squared error over ``c`` in ``[c_lo, c_hi]``.

    ``r`` is a fixed time unit or ``"free"``.  ``tol`` is the tolerance on
    ``log c``.  Probes whose objective cannot be evaluated shrink the bracket
    to the finite stretch around the best probe; a minimum at a bracket end
    sets ``boundary``.  A flat objective is reported in ``diagnostics``.
    """
    obs = list(obs)
    if len(obs) < 3:
        raise ValidationError(f"a fit needs at least 3 observations, got {len(obs)}")
    if not (c_lo > 1 and c_hi > c_lo):
        raise ValidationError(f"need 1 < c_lo < c_hi, got [{c_lo}, {c_hi}]")
    if c_lo < ANALYTIC_C_FLOOR:
        raise ValidationError(f"c_lo must be at least {ANALYTIC_C_FLOOR} (limit curve is "
                              f"ill-conditioned below)")
    r_free = r == "free"
    if not r_free:
        r = float(r)
        if not (r > 0 and math.isfinite(r)):
            raise ValidationError("r must be positive")
    counter = [0]
    found_r: dict[float, float] = {}
    log_r_bounds = (math.log(r_bounds[0]), math.log(r_bounds[1]))

    def f(x):
        c = math.exp(x)
        if r_free:
            rr, val = _best_r(obs, c, h, log_r_bounds, counter)
            found_r[x] = rr
            return val
        counter[0] += 1
        return objective(obs, c, r, h)

    xs = np.linspace(math.log(c_lo), math.log(c_hi), grid_points)
    vals = np.array([f(x) for x in xs])
    diagnostics = []
    finite = np.isfinite(vals)
    if not finite.any():
        raise ConvergenceError("objective is not finite anywhere in the bracket")
    k = int(np.argmin(np.where(finite, vals, np.inf)))
    lo_i, hi_i = k, k
    while lo_i > 0 and finite[lo_i - 1]:
        lo_i -= 1
    while hi_i < xs.size - 1 and finite[hi_i + 1]:
        hi_i += 1
    shrunk = lo_i > 0 or hi_i < xs.size - 1
    if shrunk:
        diagnostics.append(f"objective non-finite at {int((~finite).sum())} probe(s); bracket "
                           f"shrunk to [{math.exp(xs[lo_i]):.6g}, {math.exp(xs[hi_i]):.6g}]")
    span = vals[lo_i:hi_i + 1]
    if span.max() - span.min() <= 1e-14 * (1.0 + span.min()):
        diagnostics.append("objective is flat over the bracket: c is not identifiable "
                           "from these observations")
    a, b = xs[max(k - 1, lo_i)], xs[min(k + 1, hi_i)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": tol})
    best_x, best_val = (res.x, float(res.fun)) if res.fun <= vals[k] else (xs[k], float(vals[k]))
    boundary = (k == lo_i and best_x - xs[lo_i] < 2 * tol) or (k == hi_i and xs[hi_i] - best_x < 2 * tol)
    if boundary:
        diagnostics.append("no interior minimum: best point sits on the bracket edge")
    c_hat = math.exp(best_x)
    if r_free:
        r_hat = found_r.get(best_x)
        if r_hat is None:
            r_hat, best_val = _best_r(obs, c_hat, h, log_r_bounds, counter)
    else:
        r_hat = r
    valley = []
    if r_free:
        valley = [(math.exp(x), found_r.get(x, math.nan), float(v)) for x, v in zip(xs, vals)]
    return FitResult(c_hat, float(r_hat), best_val, counter[0],
                     (math.exp(xs[lo_i]), math.exp(xs[hi_i])), bool(boundary), bool(shrunk),
                     r_free, diagnostics, valley)
