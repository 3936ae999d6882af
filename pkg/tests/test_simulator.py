from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from astree.core import Parameters, PathWord, Profile, SeedRecord, ValidationError, replay_masses
from astree.simulator import (
    StopRule,
    coupled_tail_count,
    sample_profiles,
    sample_senescence,
    simulate_profile,
    simulate_senescence,
    simulate_tree,
)


def test_stop_rule_needs_exactly_one_criterion():
    with pytest.raises(ValidationError):
        StopRule()
    with pytest.raises(ValidationError):
        StopRule(max_time=1.0, max_events=3)
    with pytest.raises(ValidationError):
        StopRule(target_external=0)


def test_deterministic_given_seed():
    a = simulate_profile(Parameters(1.5), StopRule(max_time=30.0), 11)
    b = simulate_profile(Parameters(1.5), StopRule(max_time=30.0), 11)
    c = simulate_profile(Parameters(1.5), StopRule(max_time=30.0), 12)
    assert np.array_equal(a.events_time, b.events_time)
    assert np.array_equal(a.events_depth, b.events_depth)
    assert a.final == b.final
    assert not np.array_equal(a.events_time, c.events_time)


@settings(max_examples=15)
@given(st.sampled_from([0.8, 1.05, 2.0, 3.0]), st.integers(0, 2 ** 32))
def test_mass_is_one_after_every_event(c, seed):
    traj = simulate_profile(Parameters(c), StopRule(target_external=200), seed)
    assert all(m == 1 for m in replay_masses(traj.events_depth))
    assert traj.final.total == 200


def test_replay_matches_snapshots():
    times = [0.5, 2.0, 7.0]
    traj = simulate_profile(Parameters(2.0), StopRule(max_time=8.0), 5, snapshots=times)
    assert traj.replay() == list(traj.snapshots)
    assert traj.replay_final() == traj.final
    assert [w for w, _ in traj.snapshots] == times


def test_event_times_increase():
    traj = simulate_profile(Parameters(1.3), StopRule(max_events=500), 2)
    assert traj.n_events == 500
    assert np.all(np.diff(traj.events_time) > 0)
    assert traj.final_time == traj.events_time[-1]


def test_empty_run_has_diagnostic_status():
    traj = simulate_profile(Parameters(2.0), StopRule(max_events=0), 1)
    assert traj.n_events == 0
    assert traj.final == Profile((1,))
    assert traj.status.startswith("empty")


def test_absorption_needs_h():
    with pytest.raises(ValidationError):
        simulate_profile(Parameters(2.0), StopRule(absorption=True), 1)


def test_tree_shares_the_profile_path():
    params, stop = Parameters(1.5), StopRule(target_external=300)
    tree, traj = simulate_tree(params, stop, 9)
    prof = simulate_profile(params, stop, 9)
    assert np.array_equal(traj.events_depth, prof.events_depth)
    depths = {}
    for w in tree:
        depths[w.depth] = depths.get(w.depth, 0) + 1
    assert Profile.from_mapping(depths) == traj.final
    # external vertices form an antichain covering unit mass
    assert sum(Fraction(1, 2 ** w.depth) for w in tree) == 1
    words = sorted(tree)
    assert not any(a.is_ancestor_of(b) for a, b in zip(words, words[1:]))


def test_tree_absorption_fills_the_truncated_layer():
    tree, traj = simulate_tree(Parameters(2.0, 1.0, 3), StopRule(absorption=True), 4)
    assert tree == frozenset(PathWord.from_int(k, 4) for k in range(16))
    assert traj.status == "absorbed"


def test_senescence_absorbs_to_full_layer():
    states = simulate_senescence(Parameters(2.0, 1.0, 3), [1e6], 1)
    assert states[0].zp == 0 and states[0].zs == 16 and states[0].absorbed
    assert states[0].L == 0.0


def test_senescence_counts_partition_external_vertices():
    grid = [1.0, 10.0, 100.0, 1000.0]
    states, traj = simulate_senescence(Parameters(1.3, 1.0, 6), grid, 3, record=True)
    for s in states:
        assert s.zp + s.zs == s.profile.total
        assert s.profile[8] == 0
    assert [s.time for s in states] == grid
    zs = [s.zs for s in states]
    assert zs == sorted(zs)


def test_senescence_needs_h():
    with pytest.raises(ValidationError):
        simulate_senescence(Parameters(2.0), [1.0], 1)


def test_coupled_tail_count_is_integral():
    h = 4
    grid = [4.0, 16.0, 32.0, 64.0]
    for seed in range(30):
        full = simulate_profile(Parameters(2.0), StopRule(max_time=64.0), seed, snapshots=grid)
        tails = coupled_tail_count(full, h)
        assert all(v.denominator == 1 for _, v in tails)
        counts = [int(v) for _, v in tails]
        assert counts == sorted(counts) and counts[-1] <= 2 ** (h + 1)


def test_coupled_tail_count_examples():
    traj = simulate_profile(Parameters(2.0), StopRule(max_events=0), 1, snapshots=[0.0])
    assert coupled_tail_count(traj, 0) == [(0.0, 0)]
    with pytest.raises(ValidationError):
        coupled_tail_count(traj, -1)


def test_sample_profiles_shape_and_thread_independence():
    a = sample_profiles(Parameters(2.0), [0.5, 2.0], 20, 7, 6)
    b = sample_profiles(Parameters(2.0), [0.5, 2.0], 20, 7, 6, threads=4)
    assert a.shape == (20, 2, 6)
    assert np.array_equal(a, b)
    weights = 2.0 ** -np.arange(6)
    assert np.all(a @ weights <= 1.0)


def test_sample_senescence_shape():
    z = sample_senescence(Parameters(1.5, 1.0, 3), [1.0, 1e5], 5, 1)
    assert z.shape == (5, 2, 2)
    assert np.all(z[:, 1] == [0, 16])


def test_seed_record_streams_differ():
    a = simulate_profile(Parameters(2.0), StopRule(max_events=20), SeedRecord(1, 0))
    b = simulate_profile(Parameters(2.0), StopRule(max_events=20), SeedRecord(1, 1))
    assert not np.array_equal(a.events_time, b.events_time)
