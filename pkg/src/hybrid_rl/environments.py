"""Finite MDPs: a generic tabular spec, the Taxi domain, and random oracle MDPs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numerics import DomainError

# Taxi layout (Dietterich 1998):
#   +---------+
#   |R: | : :G|
#   | : | : : |
#   | : : : : |
#   | | : | : |
#   |Y| : |B: |
#   +---------+
GRID = 5
LANDMARKS = ((0, 0), (0, 4), (4, 0), (4, 3))
IN_TAXI = 4
SOUTH, NORTH, EAST, WEST, PICKUP, DROPOFF = range(6)
ACTION_NAMES = ("south", "north", "east", "west", "pickup", "dropoff")
NUM_TAXI_STATES = 500
NUM_TAXI_ACTIONS = 6
TAXI_GAMMA = 0.99
TAXI_STEP_CAP = 200

# (row, col) pairs with a wall on their east side
_EAST_WALLS = {(0, 1), (1, 1), (3, 0), (4, 0), (3, 2), (4, 2)}


class TransitionTuple(NamedTuple):
    s: int
    a: int
    s_next: int
    r: float
    done: bool


@dataclass(frozen=True)
class MdpSpec:
    """Tabular MDP. ``transitions[s, a]`` is a distribution over next states."""

    transitions: np.ndarray  # (S, A, S)
    rewards: np.ndarray  # (S, A)
    gamma: float
    terminal: np.ndarray  # (S,) bool
    initial: np.ndarray  # (S,)
    max_steps: int

    def __post_init__(self):
        S, A, S2 = self.transitions.shape
        if S != S2 or self.rewards.shape != (S, A):
            raise DomainError("inconsistent MDP array shapes")
        if not np.allclose(self.transitions.sum(axis=2), 1.0, atol=1e-12, rtol=0):
            raise DomainError("transition rows must sum to 1")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not np.all(np.isfinite(self.rewards)):
            raise DomainError("rewards must be finite")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    def successor_table(self) -> np.ndarray | None:
        """Deterministic successor per (s, a), or None if any row is stochastic."""
        succ = self.transitions.argmax(axis=2)
        picked = np.take_along_axis(self.transitions, succ[..., None], axis=2)[..., 0]
        return succ if np.all(picked == 1.0) else None


@dataclass(frozen=True)
class TaxiState:
    row: int
    col: int
    passenger: int  # landmark index 0..3, or 4 when riding in the taxi
    destination: int  # landmark index 0..3


def taxi_encode(state: TaxiState) -> int:
    if not (0 <= state.row < GRID and 0 <= state.col < GRID):
        raise DomainError(f"taxi position out of range: {state}")
    if not 0 <= state.passenger <= IN_TAXI or not 0 <= state.destination < 4:
        raise DomainError(f"passenger/destination out of range: {state}")
    return ((state.row * GRID + state.col) * 5 + state.passenger) * 4 + state.destination


def taxi_decode(index: int) -> TaxiState:
    if not 0 <= index < NUM_TAXI_STATES:
        raise DomainError(f"taxi state index out of range: {index}")
    index, dest = divmod(index, 4)
    index, passenger = divmod(index, 5)
    row, col = divmod(index, GRID)
    return TaxiState(row, col, passenger, dest)


def taxi_is_terminal(index: int) -> bool:
    st = taxi_decode(index)
    return st.passenger == st.destination


def _taxi_transition(st: TaxiState, action: int) -> tuple[TaxiState, float]:
    row, col, passenger, dest = st.row, st.col, st.passenger, st.destination
    reward = -1.0
    if action == SOUTH:
        row = min(row + 1, GRID - 1)
    elif action == NORTH:
        row = max(row - 1, 0)
    elif action == EAST:
        if (row, col) not in _EAST_WALLS:
            col = min(col + 1, GRID - 1)
    elif action == WEST:
        if (row, col - 1) not in _EAST_WALLS:
            col = max(col - 1, 0)
    elif action == PICKUP:
        if passenger < IN_TAXI and (row, col) == LANDMARKS[passenger]:
            passenger = IN_TAXI
        else:
            reward = -10.0
    elif action == DROPOFF:
        if passenger == IN_TAXI and (row, col) == LANDMARKS[dest]:
            passenger = dest
            reward = 20.0
        elif passenger == IN_TAXI and (row, col) in LANDMARKS:
            passenger = LANDMARKS.index((row, col))
        else:
            reward = -10.0
    else:
        raise DomainError(f"action index out of range: {action}")
    return TaxiState(row, col, passenger, dest), reward


def taxi_legal_starts() -> np.ndarray:
    """The 300 start states: passenger waiting at a landmark other than the destination."""
    out = []
    for s in range(NUM_TAXI_STATES):
        st = taxi_decode(s)
        if st.passenger < IN_TAXI and st.passenger != st.destination:
            out.append(s)
    return np.array(out, dtype=np.int64)


def taxi_mdp() -> MdpSpec:
    S, A = NUM_TAXI_STATES, NUM_TAXI_ACTIONS
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    terminal = np.array([taxi_is_terminal(s) for s in range(S)])
    for s in range(S):
        st = taxi_decode(s)
        for a in range(A):
            if terminal[s]:
                P[s, a, s] = 1.0
                continue
            nxt, r = _taxi_transition(st, a)
            P[s, a, taxi_encode(nxt)] = 1.0
            R[s, a] = r
    initial = np.zeros(S)
    initial[taxi_legal_starts()] = 1.0 / 300
    return MdpSpec(P, R, TAXI_GAMMA, terminal, initial, TAXI_STEP_CAP)


def random_small_mdp(num_states: int, num_actions: int, rng_seed: int,
                     gamma: float = 0.9, max_steps: int = 100) -> MdpSpec:
    """Dense random MDP with no terminal states, for oracle-scale tests."""
    if num_states < 2 or num_actions < 1:
        raise DomainError("need at least 2 states and 1 action")
    rng = np.random.default_rng(rng_seed)
    raw = rng.uniform(size=(num_states, num_actions, num_states))
    P = raw / raw.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    terminal = np.zeros(num_states, dtype=bool)
    initial = np.full(num_states, 1.0 / num_states)
    return MdpSpec(P, R, gamma, terminal, initial, max_steps)


class MdpEnv:
    """Single episodic environment over an ``MdpSpec`` with its own RNG and step counter."""

    def __init__(self, mdp: MdpSpec, seed: int | np.random.SeedSequence = 0):
        self.mdp = mdp
        self.rng = np.random.default_rng(seed)
        self._succ = mdp.successor_table()
        self._cdf = None if self._succ is not None else np.cumsum(mdp.transitions, axis=2)
        self._init_cdf = np.cumsum(mdp.initial)
        self.state: int | None = None
        self.t = 0

    def reset(self) -> int:
        u = self.rng.random()
        s = int(np.searchsorted(self._init_cdf, u * self._init_cdf[-1], side="right"))
        self.state = min(s, self.mdp.num_states - 1)
        self.t = 0
        return self.state

    def step(self, action: int) -> TransitionTuple:
        s = self.state
        if s is None or self.mdp.terminal[s]:
            raise DomainError("step called on a terminal or unreset environment")
        if not 0 <= action < self.mdp.num_actions:
            raise DomainError(f"action index out of range: {action}")
        if self._succ is not None:
            s_next = int(self._succ[s, action])
        else:
            cdf = self._cdf[s, action]
            s_next = min(int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right")),
                         self.mdp.num_states - 1)
        r = float(self.mdp.rewards[s, action])
        self.t += 1
        done = bool(self.mdp.terminal[s_next]) or self.t >= self.mdp.max_steps
        self.state = s_next
        return TransitionTuple(s, action, s_next, r, done)


class TaxiEnv(MdpEnv):
    _shared: MdpSpec | None = None

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if TaxiEnv._shared is None:
            TaxiEnv._shared = taxi_mdp()
        super().__init__(TaxiEnv._shared, seed)


class VecEnv:
    """Lockstep batch of independent environments that auto-reset on episode end.

    Completed-episode undiscounted returns are appended to ``finished_returns``.
    """

    def __init__(self, envs: list[MdpEnv]):
        self.envs = envs
        self.states = np.array([e.reset() for e in envs], dtype=np.int64)
        self._running = np.zeros(len(envs))
        self.finished_returns: list[float] = []

    def __len__(self) -> int:
        return len(self.envs)

    def step(self, actions: np.ndarray) -> list[TransitionTuple]:
        out = []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            tr = env.step(int(a))
            out.append(tr)
            self._running[i] += tr.r
            if tr.done:
                self.finished_returns.append(float(self._running[i]))
                self._running[i] = 0.0
                self.states[i] = env.reset()
            else:
                self.states[i] = tr.s_next
        return out
