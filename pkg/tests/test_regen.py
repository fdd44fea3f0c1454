import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from rwre_lab.env import (DirichletNeighbors, EnvironmentHandle,
                          EnvironmentModel, Homogeneous, SiteKernel,
                          nearest_neighbor_jumps)
from rwre_lab.regen import (ConfirmationPolicy, InputError,
                            InsufficientDataError, classify_times,
                            confirmed_times_levels, detect_joint_regenerations,
                            detect_regenerations, first_confirmed_time,
                            joint_times_from_levels, markov_slab_test,
                            regeneration_increment_stats)
from rwre_lab.walk import Trajectory, simulate_pair, simulate_walk

JS2 = nearest_neighbor_jumps(2)


def traj_from_levels(levels):
    """2-d trajectory whose first coordinate follows the given levels."""
    levels = np.asarray(levels, dtype=np.int64)
    pos = np.zeros((levels.shape[0], 2), dtype=np.int64)
    pos[:, 0] = levels
    return Trajectory(start=pos[0], positions=pos, walk_seed=1, env_seed=1)


@pytest.fixture(scope="module")
def dirichlet_model():
    return EnvironmentModel(2, 0, 1.0, DirichletNeighbors(
        JS2, np.array([4.0, 2.0, 1.0, 2.0])))


class TestClassification:
    def test_hand_trace(self):
        # levels 0,1,0,1,2,3: time 1 backtracks at time 2; time 3 is not a
        # fresh strict maximum (running max already 1); time 4 is the first
        # strict exceedance that never backtracks
        conf, cens = classify_times(np.array([0, 1, 0, 1, 2, 3]), margin=1)
        assert conf.tolist() == [4]
        assert cens.tolist() == [5]
        assert first_confirmed_time(np.array([0, 1, 0, 1, 2, 3]), 1) == 4

    def test_monotone_walk_all_candidates(self):
        lvl = np.arange(11)
        conf, cens = classify_times(lvl, margin=3)
        # the last `margin` fresh maxima cannot reach level + 3 in horizon
        assert conf.tolist() == list(range(1, 8))
        assert cens.tolist() == [8, 9, 10]

    def test_margin_one_keeps_more(self):
        lvl = np.array([0, 1, 2, 1, 2, 3])
        c1, _ = classify_times(lvl, margin=1)
        c3, _ = classify_times(lvl, margin=3)
        assert set(c3) <= set(c1)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            classify_times(np.array([], dtype=np.int64), 1)

    def test_no_confirmed_returns_minus_one(self):
        assert first_confirmed_time(np.array([0, -1, -2]), 1) == -1


class TestPolicy:
    def test_margin_floor(self):
        with pytest.raises(InputError):
            ConfirmationPolicy(margin=0)

    def test_tail_handling_values(self):
        with pytest.raises(InputError):
            ConfirmationPolicy(tail_handling="ignore")
        assert ConfirmationPolicy(tail_handling="censor").tail_handling == "censor"


def test_detect_regenerations_statuses():
    traj = traj_from_levels([0, 1, 0, 1, 2, 3])
    drop = detect_regenerations(traj, 0, ConfirmationPolicy(margin=1))
    assert [(r.time, r.status) for r in drop] == [(4, "confirmed")]
    keep = detect_regenerations(traj, 0, ConfirmationPolicy(1, "censor"))
    assert [(r.time, r.status) for r in keep] == [(4, "confirmed"),
                                                 (5, "censored")]
    assert keep[0].level == 2
    assert np.array_equal(keep[0].position, [2, 0])


@settings(max_examples=200, deadline=None)
@given(hs.lists(hs.sampled_from([-1, 0, 1]), min_size=1, max_size=60),
       hs.integers(min_value=1, max_value=4))
def test_no_backtracking_property(steps, margin):
    lvl = np.concatenate([[0], np.cumsum(steps)])
    conf, cens = classify_times(lvl, margin)
    for s in conf:
        assert np.all(lvl[s + 1:] > lvl[s])
        assert np.max(lvl[s:]) >= lvl[s] + margin
    for s in cens:
        assert np.all(lvl[s + 1:] > lvl[s])
        assert np.max(lvl[s:]) < lvl[s] + margin
    # confirmed levels and times are strictly increasing
    assert np.all(np.diff(lvl[conf]) > 0)


@settings(max_examples=100, deadline=None)
@given(hs.lists(hs.sampled_from([-1, 0, 0, 1, 1]), min_size=2, max_size=80),
       hs.integers(min_value=1, max_value=3))
def test_horizon_extension_only_discards_backtrackers(steps, margin):
    lvl = np.concatenate([[0], np.cumsum(steps)])
    half = lvl[:len(lvl) // 2 + 1]
    conf_half, _ = classify_times(half, margin)
    conf_full, _ = classify_times(lvl, margin)
    full_set = set(conf_full.tolist())
    for s in conf_half:
        if s not in full_set:
            # a confirmed time may only disappear when the extension
            # revealed a return to its level
            assert np.min(lvl[s + 1:]) <= lvl[s]


def test_joint_regeneration_levels(dirichlet_model):
    handle = EnvironmentHandle(dirichlet_model, env_seed=3)
    pair = simulate_pair(handle, [0, 0], [0, 0], 3000, 1, 2)
    policy = ConfirmationPolicy(margin=4)
    recs = detect_joint_regenerations(pair, 0, policy)
    assert len(recs) > 10
    for r in recs:
        assert pair.first.levels(0)[r.mu1] == r.level
        assert pair.second.levels(0)[r.mu2] == r.level
    levels = [r.level for r in recs]
    assert levels == sorted(levels)
    # array form agrees with the record form
    mu1, mu2, common = joint_times_from_levels(
        pair.first.levels(0), pair.second.levels(0), 4)
    assert [int(v) for v in mu1] == [r.mu1 for r in recs]
    assert [int(v) for v in mu2] == [r.mu2 for r in recs]
    assert [int(v) for v in common] == levels


def test_increment_stats_deterministic():
    traj = traj_from_levels(np.arange(12))
    recs = detect_regenerations(traj, 0, ConfirmationPolicy(margin=2))
    st = regeneration_increment_stats(recs, traj, 0)
    assert st.tau_mean == 1.0
    assert st.tau_var == 0.0
    assert np.all(st.autocorr == 0.0)
    assert st.slab_sup_max == 1.0
    assert np.array_equal(st.dx_mean, [1.0, 0.0])


def test_increment_stats_requires_three_records():
    traj = traj_from_levels([0, 1, 2])
    recs = detect_regenerations(traj, 0, ConfirmationPolicy(margin=2))
    with pytest.raises(InsufficientDataError):
        regeneration_increment_stats(recs, traj, 0)


def test_increment_autocorr_small_for_real_walks(dirichlet_model):
    handle = EnvironmentHandle(dirichlet_model, env_seed=8)
    traj = simulate_walk(handle, [0, 0], 40000, walk_seed=2)
    recs = detect_regenerations(traj, 0, ConfirmationPolicy(margin=4))
    st = regeneration_increment_stats(recs, traj, 0)
    assert st.count > 2000
    assert np.all(np.abs(st.autocorr) < 4.0 / np.sqrt(st.count))


def test_markov_slab_test_requires_replicas(dirichlet_model):
    handle = EnvironmentHandle(dirichlet_model, env_seed=1)
    pairs = [simulate_pair(handle, [0, 0], [0, 0], 400, 2 * i + 1, 2 * i + 2)
             for i in range(5)]
    with pytest.raises(InsufficientDataError):
        markov_slab_test(pairs, 0, ConfirmationPolicy(margin=4))


def test_markov_slab_test_runs(dirichlet_model):
    pairs = []
    for i in range(150):
        handle = EnvironmentHandle(dirichlet_model, env_seed=1000 + i)
        pairs.append(simulate_pair(handle, [0, 0], [0, 0], 500,
                                   2 * i + 1, 2 * i + 2))
    report = markov_slab_test(pairs, 0, ConfirmationPolicy(margin=4))
    assert report.replicas >= 100
    assert report.correlation_bound == pytest.approx(4 / np.sqrt(report.replicas))
    assert -1.0 <= report.duration_correlation <= 1.0
    assert 0.0 <= report.min_ks_pvalue_adjusted <= 1.0
