import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxrl.actions import DOCKING_EXPLICIT, continuous, discrete, explicit
from proxrl.errors import DomainError
from proxrl.metrics import (EpisodeMetrics, action_histogram, aggregate, bootstrap_ci, evaluate_policy,
                            evaluate_random, iqm, read_records, read_trajectory, write_records,
                            write_trajectory)
from proxrl.network import init_params


def test_iqm_examples():
    assert iqm([1, 2, 3, 4, 5, 6, 7, 8]) == 4.5
    assert iqm([0, 0, 0, 1]) == 0.0
    assert iqm([5.0]) == 5.0
    assert iqm([1, 2, 100]) == pytest.approx(103 / 3)
    with pytest.raises(DomainError):
        iqm([])


def brute_iqm(values):
    v = sorted(values)
    k = len(v) // 4
    mid = v[k:len(v) - k]
    return sum(mid) / len(mid)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=60))
def test_iqm_matches_brute_force_and_is_bounded(values):
    m = iqm(values)
    assert m == pytest.approx(brute_iqm(values), rel=1e-9, abs=1e-6)
    assert min(values) - 1e-6 <= m <= max(values) + 1e-6


@given(st.lists(finite, min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_iqm_permutation_invariant(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert iqm(shuffled) == pytest.approx(iqm(values), rel=1e-12, abs=1e-9)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(-100, 100), st.floats(0.1, 10))
def test_iqm_affine_equivariant(values, shift, scale):
    moved = [scale * v + shift for v in values]
    assert iqm(moved) == pytest.approx(scale * iqm(values) + shift, rel=1e-9, abs=1e-6)


def test_iqm_robust_to_outlier():
    base = list(range(20))
    assert iqm(base + [1e9]) == pytest.approx(iqm(base + [20]), abs=1.0)


def test_bootstrap_constant_and_bracketing(rng):
    lo, hi = bootstrap_ci(np.full(30, 2.5))
    assert lo == hi == 2.5
    data = rng.normal(size=50)
    lo, hi = bootstrap_ci(data)
    assert lo <= iqm(data) <= hi
    assert bootstrap_ci(data, seed=3) == bootstrap_ci(data, seed=3)


def test_bootstrap_width_shrinks_with_n(rng):
    small = rng.normal(size=100)
    large = rng.normal(size=400)
    w_small = np.subtract(*bootstrap_ci(small)[::-1])
    w_large = np.subtract(*bootstrap_ci(large)[::-1])
    assert w_large < w_small


def test_aggregate_std_is_population(rng):
    data = rng.normal(size=17)
    rep = aggregate(data)
    assert rep.std == pytest.approx(np.std(data, ddof=0))
    assert rep.n == 17 and rep.ci_low <= rep.iqm <= rep.ci_high


def test_episode_metrics_validation():
    with pytest.raises(DomainError):
        EpisodeMetrics(0, "Timeout", 0.0, 2, 0.0, 10, 1.0, 1.0, 0.0)
    with pytest.raises(DomainError):
        EpisodeMetrics(0, "Timeout", 0.0, 0, -1.0, 10, 1.0, 1.0, 0.0)


def test_evaluate_policy_deterministic_and_sized():
    space = discrete(3, 1.0)
    params = init_params(8, space, seed=4)
    a = evaluate_policy("docking", space, params, num_cases=100)
    b = evaluate_policy("docking", space, params, num_cases=100)
    assert len(a) == 100
    assert [r.case_seed for r in a] == list(range(1_000_000, 1_000_100))
    assert a == b


def test_records_round_trip(tmp_path):
    space = continuous(1.0)
    recs = evaluate_policy("inspection", space, init_params(11, space, seed=1), num_cases=3)
    path = tmp_path / "eval.csv"
    write_records(path, recs)
    back = read_records(path)
    for x, y in zip(recs, back):
        for k, v in vars(x).items():
            w = getattr(y, k)
            assert (math.isnan(v) and math.isnan(w)) if isinstance(v, float) and math.isnan(v) else v == w


def test_inspection_eval_uses_eval_weight():
    space = continuous(1.0)
    recs = evaluate_policy("inspection", space, init_params(11, space, seed=2), num_cases=4)
    for r in recs:
        assert 0 <= r.inspected_points <= 99
        assert math.isnan(r.violation_percent)


def test_random_baseline_docking_never_succeeds():
    recs = evaluate_random("docking", continuous(0.1), num_cases=30)
    assert sum(r.success for r in recs) == 0
    assert iqm([r.success for r in recs]) == 0.0
    for r in recs:
        assert 0.0 <= r.violation_percent <= 100.0
        assert 100.0 <= r.initial_distance <= 150.0


def test_trajectory_recording(tmp_path):
    space = discrete(3, 0.1)
    params = init_params(8, space, seed=0)
    recs, traj = evaluate_policy("docking", space, params, num_cases=2, record_trajectories=(0,))
    rows = traj[0]
    assert len(rows) == recs[0].episode_length + 1
    path = tmp_path / "t.csv"
    write_trajectory(path, "docking", rows)
    data = read_trajectory(path)
    assert data["step"][0] == 0 and data["step"][-1] == recs[0].episode_length
    total = data["reward"].sum()
    assert total == pytest.approx(recs[0].total_reward, abs=1e-9)


@settings(max_examples=30)
@given(st.integers(1, 200), st.sampled_from([continuous(0.5), discrete(5, 1.0), explicit(DOCKING_EXPLICIT[0])]),
       st.integers(0, 2**31))
def test_histogram_conserves_counts(n, space, seed):
    rng = np.random.default_rng(seed)
    if space.is_discrete:
        from proxrl.actions import choice_set
        table = choice_set(space)
        u = table[rng.integers(0, len(table), size=(n, 3))]
    else:
        u = rng.uniform(-space.u_max, space.u_max, size=(n, 3))
    centers, counts = action_histogram(u, space)
    assert counts.shape == (3, len(centers))
    assert (counts.sum(axis=1) == n).all()


def test_histogram_edges():
    space = continuous(1.0)
    centers, counts = action_histogram(np.zeros((10, 3)), space)
    assert counts[:, len(centers) // 2].tolist() == [10, 10, 10]
    _, counts = action_histogram(np.array([[1.0, -1.0, 1.0]]), space)
    assert counts[0, -1] == 1 and counts[1, 0] == 1
    with pytest.raises(DomainError):
        action_histogram(np.empty((0, 3)), space)
