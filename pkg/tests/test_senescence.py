import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astree.core import ValidationError
from astree.senescence import (
    expected_counts_asymptotic,
    expected_counts_exact,
    limit_fraction,
    limit_fraction_array,
    senescent_upper_bound,
    split_time_survival,
)


def limit_fraction_by_sampling(t, c, samples=1_000_000, seed=3):
    """1 - 2F(t) / (F(t) + sum_i 2^-i F(c^i t)) with F the law of sum_j c^-j E_j."""
    rng = np.random.default_rng(seed)
    J = int(40 / math.log(c))
    W = np.zeros(samples)
    for j in range(J):
        W += rng.exponential(c ** -j, samples)
    W.sort()

    def F(s):
        return np.searchsorted(W, s, side="right") / samples

    f0 = F(t)
    P = sum(2.0 ** -i * F(c ** i * t) for i in range(1, 80))
    return 1 - 2 * f0 / (f0 + P)


FROZEN = [(1.3, 2.0, 0.8415107608057923), (2.0, 2.0, 0.23939853471268485),
          (2.0, 0.3, 0.9843602164797424)]


@pytest.mark.parametrize("c, t, L", FROZEN)
def test_frozen_curve_values(c, t, L):
    assert limit_fraction(t, c).L == pytest.approx(L, rel=1e-12)


@pytest.mark.parametrize("c, t, L", FROZEN)
def test_curve_against_sampled_oracle(c, t, L):
    assert limit_fraction_by_sampling(t, c) == pytest.approx(L, abs=3e-3)


@pytest.mark.parametrize("c, t", [(1.3, 0.5), (1.5, 2.0), (2.0, 1.0), (3.0, 0.2)])
def test_direct_and_telescoped_agree(c, t):
    a = limit_fraction(t, c, method="telescoped")
    b = limit_fraction(t, c, method="direct")
    assert a.L == pytest.approx(b.L, rel=1e-10)
    assert a.senescent == pytest.approx(b.senescent, rel=1e-8)


@settings(max_examples=20)
@given(st.floats(0.05, 10.0), st.floats(0.2, 5.0), st.sampled_from([1.2, 1.5, 2.0]))
def test_time_unit_rescaling(t, r, c):
    assert limit_fraction(t, c, r).L == pytest.approx(limit_fraction(t / r, c).L,
                                                      rel=1e-13, abs=1e-13)


@pytest.mark.parametrize("c", [1.3, 2.0])
def test_curve_decreases(c):
    pts = [limit_fraction(t, c) for t in np.geomspace(0.05, 10, 25)]
    L = [p.L for p in pts]
    s = [p.senescent for p in pts]
    assert all(x >= y for x, y in zip(L, L[1:]))
    assert all(x < y for x, y in zip(s, s[1:]))
    assert all(0 <= x <= 1 for x in L)


def test_senescent_matches_one_minus_L():
    p = limit_fraction(2.0, 1.5)
    assert p.senescent == pytest.approx(1 - p.L, rel=1e-10)


def test_tiny_time_keeps_senescent_fraction():
    p = limit_fraction(0.001, 1.5)
    assert p.L == 1.0 and 0 < p.senescent < 1e-30


@pytest.mark.parametrize("c", [1.1, 1.2, 1.5, 3.0])
@pytest.mark.parametrize("t", [0.2, 1.0, 5.0])
def test_senescent_upper_bound_is_an_upper_bound(c, t):
    assert senescent_upper_bound(t, c) >= limit_fraction(t, c).senescent


def test_array_evaluation_agrees_where_trusted():
    ts = np.geomspace(0.3, 10, 12)
    L, err = limit_fraction_array(ts, 2.0)
    for t, v, e in zip(ts, L, err):
        if e <= 1e-10:
            assert v == pytest.approx(limit_fraction(t, 2.0).L, abs=1e-9)


def test_survival_function_range():
    assert 0 < split_time_survival(1.0, 2.0) < 1
    assert split_time_survival(0.0, 2.0) == pytest.approx(1.0)


@pytest.mark.parametrize("c, t", [(1.3, 1.0), (2.0, 0.5)])
def test_expected_counts_consistent_with_L(c, t):
    zp, zs = expected_counts_asymptotic(t, c, 1.0, 6)
    assert zp / (zp + zs) == pytest.approx(limit_fraction(t, c).L, rel=1e-12)
    zp2, zs2 = expected_counts_asymptotic(t, c, 1.0, 7)
    assert zp2 == pytest.approx(2 * zp, rel=1e-15)
    assert zs2 == pytest.approx(2 * zs, rel=1e-15)


def test_exact_counts_approach_asymptotic_counts():
    c, t = 2.0, 1.0
    ratios = []
    for h in (4, 8, 12):
        exact = expected_counts_exact(t, c, 1.0, h)
        asym = expected_counts_asymptotic(t, c, 1.0, h)
        ratios.append(abs(exact[0] / asym[0] - 1))
    assert ratios[-1] < ratios[0] and ratios[-1] < 1e-3


def test_exact_counts_small_h():
    # h = 0: zp = P(root unsplit), zs = 2 P(root split)
    zp, zs = expected_counts_exact(1.5, 2.0, 1.0, 0)
    assert zp == pytest.approx(math.exp(-1.5), rel=1e-14)
    assert zs == pytest.approx(2 * (1 - math.exp(-1.5)), rel=1e-14)


@pytest.mark.parametrize("bad", [dict(t=0.0), dict(t=-1.0), dict(c=1.0), dict(r=0.0)])
def test_rejects_bad_arguments(bad):
    args = dict(t=1.0, c=2.0, r=1.0)
    args.update(bad)
    with pytest.raises(ValidationError):
        limit_fraction(**args)
