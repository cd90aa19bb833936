import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_rl.demos import (
    CurriculumState,
    DemoFormatError,
    DemoSet,
    EmptySampleError,
    advance_curriculum,
    generate_demos,
    inject_missing_states,
    label_from_dynamics,
    optimal_mean_return,
    read_demos,
    remove_states,
    rollout_expert,
    sample_pairs,
    select_missing_states,
    value_iteration,
    write_demos,
)
from hybrid_rl.environments import (
    EAST,
    SOUTH,
    IN_TAXI,
    LANDMARKS,
    NORTH,
    PICKUP,
    TaxiState,
    random_small_mdp,
    taxi_decode,
    taxi_encode,
    taxi_legal_starts,
    taxi_mdp,
)
from hybrid_rl.numerics import DomainError, NumericError

MDP = taxi_mdp()
Q = value_iteration(MDP)
GREEDY = Q.greedy
FULL = generate_demos(MDP, GREEDY, "full", 0.0, 0)


def _grid_distance(a, b):
    """Shortest taxi path on the walled grid, by breadth-first search."""
    walls_east = {(0, 1), (1, 1), (3, 0), (4, 0), (3, 2), (4, 2)}
    dist = {a: 0}
    q = deque([a])
    while q:
        r, c = q.popleft()
        if (r, c) == b:
            return dist[b]
        nbrs = [(r + 1, c), (r - 1, c)]
        if (r, c) not in walls_east:
            nbrs.append((r, c + 1))
        if (r, c - 1) not in walls_east:
            nbrs.append((r, c - 1))
        for nr, nc in nbrs:
            if 0 <= nr < 5 and 0 <= nc < 5 and (nr, nc) not in dist:
                dist[(nr, nc)] = dist[(r, c)] + 1
                q.append((nr, nc))
    raise AssertionError("unreachable cell")


def _shortest_path_return(s):
    st_ = taxi_decode(int(s))
    here = (st_.row, st_.col)
    pick, drop = LANDMARKS[st_.passenger], LANDMARKS[st_.destination]
    n_actions = _grid_distance(here, pick) + 1 + _grid_distance(pick, drop) + 1
    return -(n_actions - 1) + 20.0


def test_value_iteration_sweeps_frozen():
    assert Q.iterations == 20
    assert Q.residual < 1e-10


def test_optimal_return_matches_shortest_path_oracle():
    starts = taxi_legal_starts()
    oracle = np.mean([_shortest_path_return(s) for s in starts])
    assert oracle == pytest.approx(7.93, abs=1e-12)
    assert optimal_mean_return(MDP) == pytest.approx(oracle, abs=1e-12)


def test_greedy_moves_toward_adjacent_passenger():
    # passenger at R=(0,0); taxi just below it must go north, taxi on it must pick up
    s = taxi_encode(TaxiState(1, 0, 0, 1))
    assert GREEDY[s] == NORTH
    assert GREEDY[taxi_encode(TaxiState(0, 0, 0, 1))] == PICKUP
    # carrying a passenger from (0,0) to G: the wall at (0,1) makes south and
    # east equally short, and ties go to the lower action index
    assert GREEDY[taxi_encode(TaxiState(0, 0, IN_TAXI, 1))] == SOUTH
    assert Q.q[taxi_encode(TaxiState(0, 0, IN_TAXI, 1)), EAST] == pytest.approx(
        Q.q[taxi_encode(TaxiState(0, 0, IN_TAXI, 1)), SOUTH], abs=1e-9)


def test_value_iteration_solves_random_mdp_to_fixed_point():
    m = random_small_mdp(5, 2, 3)
    q = value_iteration(m).q
    backup = m.rewards + m.gamma * m.transitions @ q.max(axis=1)
    np.testing.assert_allclose(q, backup, atol=1e-9)


def test_value_iteration_cap_raises():
    with pytest.raises(NumericError):
        value_iteration(random_small_mdp(5, 2, 3), max_iter=2)


def test_full_coverage_facts():
    assert len(FULL.trajectories) == 400
    assert FULL.num_pairs == 4478
    assert len(FULL.covered_states()) == 404
    visited = np.unique(FULL.states)
    np.testing.assert_array_equal(visited, np.flatnonzero(~MDP.terminal))


def test_pairs_never_cross_trajectory_boundaries():
    succ = MDP.successor_table()
    lab = label_from_dynamics(MDP, FULL.states, FULL.next_states)
    assert np.all(lab >= 0)
    np.testing.assert_array_equal(succ[FULL.states, lab], FULL.next_states)
    np.testing.assert_array_equal(lab, GREEDY[FULL.states])


def test_epsilon_corruption_rate_concentrates():
    ro = rollout_expert(MDP, GREEDY, "budget", 0.1, 11, pair_budget=10_000)
    flags = np.concatenate(ro.corrupted)
    assert len(flags) == 10_000
    assert abs(flags.mean() - 0.1) < 0.01
    acts = np.concatenate(ro.actions)
    s = ro.demo.states
    assert np.all(acts[flags] != GREEDY[s[flags]])
    assert np.all(acts[~flags] == GREEDY[s[~flags]])


def test_missing_state_count_is_ceiling_of_fraction():
    for eta in (0.0, 0.05, 0.2, 0.5, 1.0):
        assert len(select_missing_states(FULL, eta, 4)) == math.ceil(eta * 404 - 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
def test_missing_state_selection_is_nested(e1, e2, seed):
    lo, hi = sorted((e1, e2))
    small = set(select_missing_states(FULL, lo, seed).tolist())
    big = set(select_missing_states(FULL, hi, seed).tolist())
    assert small <= big


def test_removed_states_absent_from_every_pair():
    demo = inject_missing_states(FULL, 0.2, 7)
    gone = select_missing_states(FULL, 0.2, 7)
    assert not np.isin(demo.states, gone).any()
    assert not np.isin(demo.next_states, gone).any()
    assert demo.eta == 0.2
    assert demo.num_pairs < FULL.num_pairs


def test_remove_states_splits_at_gaps():
    d = DemoSet((np.array([1, 2, 3, 4, 5, 6]),), 10, 2)
    out = remove_states(d, np.array([3]))
    assert [t.tolist() for t in out.trajectories] == [[1, 2], [4, 5, 6]]
    np.testing.assert_array_equal(out.positions, [0, 0, 1])


def test_curriculum_restricts_and_saturates():
    cur = CurriculumState(k=2, interval=100)
    s, s2 = sample_pairs(FULL, cur, 2000, 0)
    early = set(zip(FULL.states[FULL.positions < 2].tolist(),
                    FULL.next_states[FULL.positions < 2].tolist()))
    assert set(zip(s.tolist(), s2.tolist())) <= early

    longest = max(len(t) for t in FULL.trajectories)
    a = sample_pairs(FULL, CurriculumState(k=longest), 500, np.random.default_rng(5))
    b = sample_pairs(FULL, None, 500, np.random.default_rng(5))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


@given(st.integers(1, 20), st.integers(1, 50), st.lists(st.integers(0, 200), max_size=20))
def test_curriculum_advance_counts_frames(k, interval, chunks):
    cur = CurriculumState(k, interval)
    for c in chunks:
        cur = advance_curriculum(cur, c)
    assert cur.k == k + sum(chunks) // interval


def test_curriculum_empty_sample_raises():
    d = DemoSet((), 5, 2)
    with pytest.raises(EmptySampleError):
        sample_pairs(d, None, 4, 0)


def test_rollout_mode_validation():
    with pytest.raises(DomainError):
        rollout_expert(MDP, GREEDY, "nope")
    with pytest.raises(DomainError):
        rollout_expert(MDP, GREEDY, "budget")
    with pytest.raises(DomainError):
        rollout_expert(MDP, GREEDY, "full", epsilon=1.5)


def test_demo_file_round_trip(tmp_path):
    demo = inject_missing_states(generate_demos(MDP, GREEDY, "full", 0.1, 3), 0.1, 3)
    path = tmp_path / "d.bin"
    write_demos(path, demo)
    back = read_demos(path)
    assert (back.num_states, back.num_actions, back.eta, back.epsilon, back.seed) == \
        (demo.num_states, demo.num_actions, demo.eta, demo.epsilon, demo.seed)
    assert back.policy_tag == demo.policy_tag
    assert len(back.trajectories) == len(demo.trajectories)
    for a, b in zip(back.trajectories, demo.trajectories):
        np.testing.assert_array_equal(a, b)


def test_demo_file_rejects_corruption(tmp_path):
    path = tmp_path / "d.bin"
    write_demos(path, FULL)
    raw = path.read_bytes()
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope" + raw[4:])
    with pytest.raises(DemoFormatError, match="not a demo-v1"):
        read_demos(bad)
    bad.write_bytes(raw[:-3])
    with pytest.raises(DemoFormatError):
        read_demos(bad)
    bad.write_bytes(raw + b"\0")
    with pytest.raises(DemoFormatError, match="trailing"):
        read_demos(bad)
