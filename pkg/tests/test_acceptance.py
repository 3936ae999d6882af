"""Acceptance criteria 1-9 at their stated tolerances.

Each test prints one ``criterion k: PASS|FAIL ...`` line (shown even under
output capture) and then asserts the same verdict.
"""

import math
import time

import numpy as np
import pytest

from astree.core import ConditioningError, Parameters, replay_masses
from astree.fit import Observation, fit_c
from astree.moments import (
    cov_regime,
    limit_profile,
    mean_occupancy,
    ode_profile,
    profile_cov_asymptotic,
    profile_cov_exact,
)
from astree.montecarlo import (
    battery_verdict,
    deviation_verdict,
    estimate_covs,
    estimate_L_curve,
    estimate_mean_profile,
)
from astree.qseries import eigen_residual, inverse_identity_residual
from astree.senescence import limit_fraction
from astree.simulator import (
    StopRule,
    coupled_tail_count,
    sample_senescence,
    simulate_profile,
    simulate_senescence,
    simulate_tree,
)

FIG3_GRID = np.geomspace(0.05, 10, 40)


@pytest.fixture
def verdict(capsys):
    started = time.perf_counter()

    def report(k, ok, detail, budget):
        elapsed = time.perf_counter() - started
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            print(f"\ncriterion {k}: {'PASS' if ok else 'FAIL'} {detail} "
                  f"[{elapsed:.1f}s, budget {budget:g}s]")
        assert ok, detail

    return report


def test_criterion_1_mass_conservation(verdict):
    bad = 0
    events = 0
    for c in (0.8, 1.05, 2.0, 3.0):
        for seed in range(100):
            runs = [simulate_profile(Parameters(c), StopRule(target_external=200), seed),
                    simulate_tree(Parameters(c), StopRule(target_external=200), seed)[1],
                    simulate_senescence(Parameters(c, 1.0, 6), [50.0], seed, record=True)[1]]
            for traj in runs:
                for m in replay_masses(traj.events_depth):
                    events += 1
                    bad += m != 1
    verdict(1, bad == 0, f"{events} events over 1200 runs, {bad} with mass != 1", 60)


def test_criterion_2_qseries_identities(verdict):
    worst = {}
    for c, band in ((1.5, 1e-10), (2.0, 1e-10), (3.0, 1e-10), (1.05, 1e-8), (1.2, 1e-8)):
        r = max(abs(inverse_identity_residual(n, c)) for n in range(1, 31))
        worst[c] = (max(r, eigen_residual(15, c)), band)
    ok = all(v <= band for v, band in worst.values())
    detail = ", ".join(f"c={c:g}: {v:.1e}" for c, (v, _) in worst.items())
    verdict(2, ok, f"max residuals {detail}", 1)


def test_criterion_3_mean_profile(verdict):
    gap = 0.0
    for c in (1.3, 2.0, 3.0):
        for t in (0.5, 1.0, 3.0):
            y = ode_profile(t, 12, c)
            gap = max(gap, max(abs(mean_occupancy(n, t, c) - y[n]) for n in range(13)))
    reports = []
    for c in (1.3, 2.0):
        for t in (1.0, 3.0):
            reports += estimate_mean_profile(c, t, range(9), 10_000, seed=31 + int(10 * c) + int(t))
    ok_mc, text = battery_verdict(reports, z_max=4.0, frac_over_2=0.25)
    verdict(3, gap <= 1e-8 and ok_mc, f"closed form vs ODE max gap {gap:.1e}; MC {text}", 300)


def test_criterion_4_limit_profile(verdict):
    c, t, n = 2.0, 1.0, 20
    rel = max(abs(mean_occupancy(n + i, t * c ** n, c) / limit_profile(i, t, c) - 1)
              for i in range(-2, 3))
    rng = np.random.default_rng(4)
    selfsim = 0.0
    for _ in range(50):
        i = int(rng.integers(-5, 6))
        s = float(rng.uniform(0.05, 5.0))
        cc = float(rng.choice([1.3, 2.0, 3.0]))
        a, b = limit_profile(i, s, cc), limit_profile(i + 1, cc * s, cc)
        selfsim = max(selfsim, abs(a - b))
    total = math.fsum(limit_profile(i, t, c) for i in range(-40, 80))
    ok = rel < 0.01 and selfsim <= 1e-12 and abs(total - 1) <= 1e-8
    verdict(4, ok, f"rel gap at n=20 {rel:.2e}, self-similarity {selfsim:.1e}, "
                   f"|sum - 1| {abs(total - 1):.1e}", 10)


def test_criterion_5_covariance(verdict):
    anchor = 0.0
    for t in (0.5, 1.0, 2.0):
        y0, y1 = mean_occupancy(0, t, 2.0), mean_occupancy(1, t, 2.0)
        anchor = max(anchor,
                     abs(profile_cov_exact(0, 0, t, 2.0) - math.exp(-t) * (1 - math.exp(-t))),
                     abs(profile_cov_exact(0, 1, t, 2.0) + 2 * y0 * y1))
    reports = estimate_covs(2.0, 2.0, [(2, 2), (3, 4), (4, 4)], 100_000, seed=5)
    zs = ", ".join(f"{rep.quantity} z={rep.z:+.2f}" for rep in reports)
    ok = anchor <= 1e-12 and all(abs(rep.z) < 5 for rep in reports)
    verdict(5, ok, f"anchor gap {anchor:.1e}; {zs}", 1200)


def test_criterion_6_covariance_asymptotics(verdict):
    k2 = cov_regime(2.0).prefactor
    k12 = cov_regime(1.2).prefactor
    consts_ok = abs(k2 - 4 / 3) < 1e-15 and abs(k12 - 2 / (2 - 1.44)) < 1e-15
    achieved, ratio, digits = None, math.nan, None
    for n in range(4, 21):
        try:
            exact, digits = profile_cov_exact(n, n, 2.0 ** n, 2.0, report=True)
        except ConditioningError:
            break
        asym, _ = profile_cov_asymptotic(0, 0, n, 1.0, 2.0)
        achieved, ratio = n, exact / asym
    ok = consts_ok and achieved is not None and abs(ratio - 1) < 0.10
    prec = "double" if digits is None else f"{digits} digits"
    verdict(6, ok, f"constants {k2:.6f}, {k12:.6f}; exact/asymptotic = {ratio:.4f} at achieved "
                   f"n={achieved} ({prec})", 600)


def test_criterion_7_limit_curve(verdict):
    rescale = max(abs(limit_fraction(t, c, r).L - limit_fraction(t / r, c).L)
                  for c in (1.2, 1.5, 2.0) for t in (0.1, 1.0, 4.0) for r in (0.5, 3.0))
    monotone = True
    for c in (1.2, 1.3, 1.5):
        pts = [limit_fraction(t, c) for t in FIG3_GRID]
        monotone &= all(a.L >= b.L and a.senescent < b.senescent for a, b in zip(pts, pts[1:]))
    worst = {}
    for k, c in enumerate((1.2, 1.3, 1.5)):
        reports = estimate_L_curve(c, 1.0, 20, FIG3_GRID, 50, seed=70 + k)
        worst[c] = max(abs(rep.deviation) for rep in reports)
    ok = rescale <= 1e-13 and monotone and max(worst.values()) < 0.05
    dev = ", ".join(f"c={c:g}: {v:.4f}" for c, v in worst.items())
    verdict(7, ok, f"rescaling gap {rescale:.1e}, monotone={monotone}, "
                   f"max |sim - limit| {dev}", 1800)


def test_criterion_8_coupling(verdict):
    h, c, reps = 4, 2.0, 10_000
    T = 2 * c ** h
    tails = np.empty(reps)
    integral = True
    for j in range(reps):
        traj = simulate_profile(Parameters(c), StopRule(max_time=T), (8 << 24) + j,
                                snapshots=[T / 4, T / 2, T])
        values = coupled_tail_count(traj, h)
        integral &= all(v.denominator == 1 for _, v in values)
        tails[j] = float(values[-1][1])
    zs = sample_senescence(Parameters(c, 1.0, h), [T], reps, seed=88)[:, 0, 1].astype(float)
    pooled = math.sqrt(tails.var(ddof=1) / reps + zs.var(ddof=1) / reps)
    gap = abs(tails.mean() - zs.mean()) / pooled
    verdict(8, integral and gap < 4, f"integral={integral}; tail mean {tails.mean():.4f} vs "
                                     f"Z^s mean {zs.mean():.4f}, {gap:.2f} pooled SE", 300)


def test_criterion_9_fit_recovery(verdict):
    ts = np.geomspace(0.05, 10, 30)
    clean = [Observation(float(t), limit_fraction(t, 1.3).L) for t in ts]
    err_clean = abs(fit_c(clean).c_hat - 1.3)
    base = np.array([limit_fraction(t, 1.5).L for t in ts])
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(900 + seed)
        noisy = np.clip(base + 0.01 * rng.standard_normal(base.size), 0, 1)
        obs = [Observation(float(t), float(x)) for t, x in zip(ts, noisy)]
        errs.append(abs(fit_c(obs).c_hat - 1.5))
    ok = err_clean < 1e-3 and max(errs) < 0.05
    verdict(9, ok, f"noiseless |c_hat - c| {err_clean:.1e}; noisy max |c_hat - c| "
                   f"{max(errs):.4f} over 20 seeds", 120)
