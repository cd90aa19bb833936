import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_rl.environments import (
    DROPOFF,
    EAST,
    IN_TAXI,
    LANDMARKS,
    NORTH,
    PICKUP,
    SOUTH,
    WEST,
    MdpEnv,
    TaxiEnv,
    TaxiState,
    VecEnv,
    random_small_mdp,
    taxi_decode,
    taxi_encode,
    taxi_is_terminal,
    taxi_legal_starts,
    taxi_mdp,
)
from hybrid_rl.numerics import DomainError

MDP = taxi_mdp()


def step_from(state: TaxiState, action: int):
    env = TaxiEnv(0)
    env.reset()
    env.state = taxi_encode(state)
    tr = env.step(action)
    return taxi_decode(tr.s_next), tr.r, tr.done


@given(st.integers(0, 499))
def test_encoding_round_trip(s):
    assert taxi_encode(taxi_decode(s)) == s


def test_encoding_rejects_out_of_range():
    with pytest.raises(DomainError):
        taxi_decode(500)
    with pytest.raises(DomainError):
        taxi_encode(TaxiState(5, 0, 0, 0))


def test_legal_start_count():
    starts = taxi_legal_starts()
    assert len(starts) == 25 * 4 * 3
    assert not any(taxi_is_terminal(s) for s in starts)


def test_resets_reach_every_legal_start():
    env = TaxiEnv(123)
    seen = {env.reset() for _ in range(10_000)}
    assert seen == set(taxi_legal_starts().tolist())


def test_walls_block_east_and_west_moves():
    # wall east of (0, 1): cannot go east from there, nor west from (0, 2)
    s, r, _ = step_from(TaxiState(0, 1, 0, 1), EAST)
    assert (s.row, s.col, r) == (0, 1, -1.0)
    s, _, _ = step_from(TaxiState(0, 2, 0, 1), WEST)
    assert (s.row, s.col) == (0, 2)
    s, _, _ = step_from(TaxiState(2, 1, 0, 1), EAST)
    assert (s.row, s.col) == (2, 2)


def test_grid_edges_clamp_moves():
    s, _, _ = step_from(TaxiState(0, 3, 0, 1), NORTH)
    assert (s.row, s.col) == (0, 3)
    s, _, _ = step_from(TaxiState(4, 1, 0, 1), SOUTH)
    assert (s.row, s.col) == (4, 1)


def test_pickup_and_dropoff_rewards():
    r0, c0 = LANDMARKS[2]
    s, r, done = step_from(TaxiState(r0, c0, 2, 0), PICKUP)
    assert (s.passenger, r, done) == (IN_TAXI, -1.0, False)
    s, r, _ = step_from(TaxiState(1, 1, 2, 0), PICKUP)
    assert (s.passenger, r) == (2, -10.0)
    s, r, done = step_from(TaxiState(*LANDMARKS[0], IN_TAXI, 0), DROPOFF)
    assert (s.passenger, r, done) == (0, 20.0, True)
    s, r, _ = step_from(TaxiState(2, 2, IN_TAXI, 0), DROPOFF)
    assert (s.passenger, r) == (IN_TAXI, -10.0)


def test_dropoff_at_wrong_landmark_leaves_passenger_there():
    st_ = TaxiState(*LANDMARKS[1], IN_TAXI, 0)
    s, r, done = step_from(st_, DROPOFF)
    assert (s.passenger, r, done) == (1, -1.0, False)


def test_mdp_rows_are_distributions_and_deterministic():
    np.testing.assert_allclose(MDP.transitions.sum(axis=2), 1.0)
    assert MDP.successor_table() is not None
    assert MDP.num_states == 500 and MDP.num_actions == 6
    assert MDP.terminal.sum() == 100


def test_step_errors():
    env = TaxiEnv(0)
    env.reset()
    with pytest.raises(DomainError):
        env.step(6)
    env.state = int(np.flatnonzero(MDP.terminal)[0])
    with pytest.raises(DomainError):
        env.step(0)


def test_step_cap_ends_episode():
    env = TaxiEnv(0)
    env.reset()
    dones = [env.step(NORTH).done for _ in range(200)]
    assert dones == [False] * 199 + [True]


@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**16))
def test_random_small_mdp_is_valid(S, A, seed):
    m = random_small_mdp(S, A, seed)
    np.testing.assert_allclose(m.transitions.sum(axis=2), 1.0, atol=1e-12)
    assert m.transitions.shape == (S, A, S)


def test_random_mdp_env_samples_transition_frequencies():
    m = random_small_mdp(3, 1, 5)
    env = MdpEnv(m, 9)
    counts = np.zeros(3)
    env.reset()
    env.state = 0
    for _ in range(20_000):
        env.state, env.t = 0, 0
        counts[env.step(0).s_next] += 1
    np.testing.assert_allclose(counts / counts.sum(), m.transitions[0, 0], atol=0.015)


def test_vec_env_auto_resets_and_records_returns():
    vec = VecEnv([TaxiEnv(i) for i in range(3)])
    for _ in range(200):
        vec.step(np.full(3, NORTH))
    assert vec.finished_returns == [-200.0] * 3
    assert all(s in set(taxi_legal_starts().tolist()) for s in vec.states)
