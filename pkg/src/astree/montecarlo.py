"""Replicate runner and z-score comparison against the analytic engine."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import Parameters, ValidationError, check_analytic_c
from .moments import mean_count, profile_cov_exact
from .senescence import expected_counts_asymptotic, expected_counts_exact, limit_fraction
from .simulator import sample_profiles, sample_senescence

__all__ = [
    "MomentReport",
    "estimate_mean_profile",
    "estimate_cov",
    "estimate_covs",
    "estimate_L_curve",
    "estimate_counts",
    "jackknife_cov",
    "battery_verdict",
    "deviation_verdict",
]


@dataclass(frozen=True)
class MomentReport:
    """One simulated moment next to its analytic value.

    ``z = (estimate - exact) / std_error``.  The standard error is floored at
    ``1 / replicates`` (the resolution of a mean of integer counts) so that
    a degenerate sample with zero spread still gives a finite ``z``.
    """

    quantity: str
    estimate: float
    std_error: float
    exact: float
    z: float
    replicates: int

    @property
    def deviation(self) -> float:
        return self.estimate - self.exact

    def as_dict(self) -> dict:
        return asdict(self)


def _report(quantity, estimate, se, exact, replicates) -> MomentReport:
    se = max(float(se), 1.0 / replicates)
    return MomentReport(quantity, float(estimate), se, float(exact),
                        (float(estimate) - float(exact)) / se, int(replicates))


def _need(replicates, least, what):
    if replicates < least:
        raise ValidationError(f"{what} needs at least {least} replicates, got {replicates}")


def estimate_mean_profile(c: float, t: float, depths: Sequence[int], replicates: int, seed: int,
                          r: float = 1.0, threads: int | None = None) -> list[MomentReport]:
    """Sample mean of ``X_n(t)`` per depth against ``E[X_n(t)]``."""
    c = check_analytic_c(c)
    _need(replicates, 100, "estimate_mean_profile")
    depths = [int(n) for n in depths]
    X = sample_profiles(Parameters(c, r), [t], replicates, seed, max(depths) + 1, threads)[:, 0, :]
    out = []
    for n in depths:
        x = X[:, n].astype(float)
        se = x.std(ddof=1) / math.sqrt(replicates)
        out.append(_report(f"mean X_{n}", x.mean(), se, mean_count(n, r * t, c), replicates))
    return out


def jackknife_cov(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Sample covariance and its leave-one-out jackknife standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 3:
        raise ValidationError("jackknife needs at least 3 replicates")
    # covariance is shift invariant; centring first keeps the sums small
    dx = x - x.mean()
    dy = y - y.mean()
    sxy = math.fsum(dx * dy)
    sx, sy = math.fsum(dx), math.fsum(dy)
    cov = (sxy - sx * sy / n) / (n - 1)
    mx = (sx - dx) / (n - 1)
    my = (sy - dy) / (n - 1)
    loo = ((sxy - dx * dy) - (n - 1) * mx * my) / (n - 2)
    se = math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    return cov, se


def estimate_covs(c: float, t: float, pairs: Sequence[tuple[int, int]], replicates: int,
                  seed: int, r: float = 1.0, threads: int | None = None) -> list[MomentReport]:
    """Covariances of several depth pairs from one shared replicate sample."""
    c = check_analytic_c(c)
    _need(replicates, 1000, "estimate_cov")
    pairs = [(int(a), int(b)) for a, b in pairs]
    width = max(max(p) for p in pairs) + 1
    X = sample_profiles(Parameters(c, r), [t], replicates, seed, width, threads)[:, 0, :]
    out = []
    for n, n2 in pairs:
        cov, se = jackknife_cov(X[:, n], X[:, n2])
        out.append(_report(f"cov X_{n},X_{n2}", cov, se, profile_cov_exact(n, n2, r * t, c),
                           replicates))
    return out


def estimate_cov(c: float, t: float, n: int, n2: int, replicates: int, seed: int,
                 r: float = 1.0, threads: int | None = None) -> MomentReport:
    """Sample covariance of ``(X_n(t), X_n'(t))`` with a jackknife standard error."""
    return estimate_covs(c, t, [(n, n2)], replicates, seed, r, threads)[0]


def estimate_L_curve(c: float, r: float, h: int, grid: Sequence[float], replicates: int,
                     seed: int, threads: int | None = None) -> list[MomentReport]:
    """Replicate mean of ``L(t c^h)`` on a grid of rescaled times ``t``.

    The exact column is the ``h -> infinity`` limit, so the deviations include
    a finite-``h`` bias on top of sampling noise.  ``r`` is the simulated
    splitting rate; the limit formula takes it as the time unit ``1 / r``.
    """
    c = check_analytic_c(c)
    _need(replicates, 2, "estimate_L_curve")
    grid = sorted(float(t) for t in grid)
    scale = c ** h
    Z = sample_senescence(Parameters(c, r, h), [t * scale for t in grid], replicates, seed,
                          threads)
    L = Z[:, :, 0] / Z.sum(axis=2)
    out = []
    for j, t in enumerate(grid):
        est = L[:, j].mean()
        se = L[:, j].std(ddof=1) / math.sqrt(replicates)
        out.append(_report(f"L({t:.6g})", est, se, limit_fraction(t, c, 1.0 / r).L, replicates))
    return out


def estimate_counts(c: float, r: float, h: int, t: float, replicates: int, seed: int,
                    threads: int | None = None) -> tuple[MomentReport, ...]:
    """Means of ``Z^p(t c^h)`` and ``Z^s(t c^h)`` against analytic values.

    Returns reports against the leading-order values, then against the exact
    finite-``h`` means.
    """
    c = check_analytic_c(c)
    _need(replicates, 2, "estimate_counts")
    Z = sample_senescence(Parameters(c, r, h), [t * c ** h], replicates, seed, threads)[:, 0, :]
    out = []
    for label, exact in (("", expected_counts_asymptotic(t, c, 1.0 / r, h)),
                         (" finite-h", expected_counts_exact(t, c, 1.0 / r, h))):
        for k, name in enumerate(("Z^p", "Z^s")):
            x = Z[:, k].astype(float)
            out.append(_report(f"mean {name}({t:.6g}){label}", x.mean(),
                               x.std(ddof=1) / math.sqrt(replicates), exact[k], replicates))
    return tuple(out)


def battery_verdict(reports: Sequence[MomentReport], z_max: float = 4.0,
                    frac_over_2: float = 0.25) -> tuple[bool, str]:
    """All ``|z| < z_max`` and fewer than ``frac_over_2`` of them beyond 2."""
    if not reports:
        raise ValidationError("empty battery")
    zs = np.array([abs(rep.z) for rep in reports])
    worst = float(zs.max())
    frac = float(np.mean(zs > 2))
    ok = bool(worst < z_max and frac < frac_over_2)
    text = (f"{'PASS' if ok else 'FAIL'}: {len(reports)} cases, max |z| = {worst:.3f} "
            f"(limit {z_max:g}), |z|>2 in {100 * frac:.1f}% (limit {100 * frac_over_2:g}%)")
    return ok, text


def deviation_verdict(reports: Sequence[MomentReport], band: float) -> tuple[bool, str]:
    """Largest ``|estimate - exact|`` below ``band``."""
    worst = max(abs(rep.deviation) for rep in reports)
    ok = bool(worst < band)
    return ok, (f"{'PASS' if ok else 'FAIL'}: {len(reports)} points, max |estimate - exact| = "
                f"{worst:.4f} (band {band:g})")
