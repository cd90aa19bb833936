"""Expert synthesis and state-only demonstrations.

The expert is the greedy policy of value iteration. Demonstrations keep only
states; action labels exist solely on ``ExpertRollout`` for audits and the
imitation-learning baseline.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .environments import MdpSpec
from .numerics import DomainError, NumericError

DEMO_MAGIC = b"demo-v1\n"
_HEADER = struct.Struct("<IIddqI")


class CoverageError(RuntimeError):
    pass


class EmptySampleError(RuntimeError):
    pass


class DemoFormatError(ValueError):
    pass


@dataclass
class QTable:
    q: np.ndarray  # (S, A)
    residual: float
    iterations: int

    @property
    def values(self) -> np.ndarray:
        return self.q.max(axis=1)

    @property
    def greedy(self) -> np.ndarray:
        # argmax returns the first maximiser, i.e. the lowest action index
        return self.q.argmax(axis=1)


def value_iteration(mdp: MdpSpec, tol: float = 1e-10, max_iter: int = 100_000) -> QTable:
    """Bellman optimality iteration; terminal states are absorbing with value 0."""
    P, R, gamma = mdp.transitions, mdp.rewards, mdp.gamma
    live = (~mdp.terminal).astype(np.float64)
    q = np.zeros_like(R)
    for it in range(1, max_iter + 1):
        v = q.max(axis=1) * live
        q_new = (R + gamma * P @ v) * live[:, None]
        residual = float(np.max(np.abs(q_new - q)))
        q = q_new
        if residual < tol:
            return QTable(q, residual, it)
    raise NumericError(f"value iteration did not converge in {max_iter} iterations "
                       f"(residual {residual:.3e})")


def episode_return(mdp: MdpSpec, policy: np.ndarray, start: int) -> float:
    """Undiscounted return of a deterministic policy on a deterministic MDP."""
    succ = mdp.successor_table()
    if succ is None:
        raise DomainError("episode_return needs deterministic transitions")
    s, total = start, 0.0
    for _ in range(mdp.max_steps):
        a = policy[s]
        total += mdp.rewards[s, a]
        s = succ[s, a]
        if mdp.terminal[s]:
            break
    return float(total)


def optimal_mean_return(mdp: MdpSpec, starts: np.ndarray | None = None) -> float:
    """Mean undiscounted episode return of the optimal greedy policy over start states."""
    greedy = value_iteration(mdp).greedy
    if starts is None:
        starts = np.flatnonzero(mdp.initial > 0)
    return float(np.mean([episode_return(mdp, greedy, s) for s in starts]))


@dataclass(frozen=True)
class DemoSet:
    """State-only expert trajectories; pairs never span two trajectories."""

    trajectories: tuple[np.ndarray, ...]
    num_states: int
    num_actions: int
    eta: float = 0.0
    epsilon: float = 0.0
    seed: int = 0
    policy_tag: str = "value-iteration"

    @cached_property
    def _pair_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.trajectories:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, empty
        s = np.concatenate([t[:-1] for t in self.trajectories]).astype(np.int64)
        s2 = np.concatenate([t[1:] for t in self.trajectories]).astype(np.int64)
        pos = np.concatenate([np.arange(len(t) - 1) for t in self.trajectories]).astype(np.int64)
        return s, s2, pos

    @property
    def states(self) -> np.ndarray:
        return self._pair_arrays[0]

    @property
    def next_states(self) -> np.ndarray:
        return self._pair_arrays[1]

    @property
    def positions(self) -> np.ndarray:
        """Index of each pair within its trajectory (0 for the first pair)."""
        return self._pair_arrays[2]

    @property
    def num_pairs(self) -> int:
        return len(self.states)

    def covered_states(self) -> np.ndarray:
        return np.union1d(self.states, self.next_states)


@dataclass
class ExpertRollout:
    demo: DemoSet
    actions: tuple[np.ndarray, ...]  # per trajectory, one per pair
    corrupted: tuple[np.ndarray, ...]  # True where a non-greedy action was forced

    def labeled_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.demo.states, self.demo.next_states, np.concatenate(self.actions)


def rollout_expert(mdp: MdpSpec, policy: np.ndarray, coverage_mode: str = "full",
                   epsilon: float = 0.0, seed: int = 0, pair_budget: int | None = None,
                   tag: str = "value-iteration") -> ExpertRollout:
    """Roll out the expert, forcing a random non-greedy action with probability ``epsilon``.

    ``coverage_mode="full"`` runs one episode from every non-terminal state,
    so every state the expert can occupy appears in some pair. ``"budget"``
    samples starts from the MDP's initial distribution until ``pair_budget``
    pairs exist.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise DomainError(f"epsilon must lie in [0, 1], got {epsilon}")
    rng = np.random.default_rng(seed)
    S, A = mdp.num_states, mdp.num_actions
    cdf = np.cumsum(mdp.transitions, axis=2)

    def run(start, limit):
        states, acts, bad = [start], [], []
        s = start
        for _ in range(limit):
            a = int(policy[s])
            flip = A > 1 and rng.random() < epsilon
            if flip:
                a = int(rng.integers(A - 1))
                a += a >= policy[s]
            c = cdf[s, a]
            s = min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), S - 1)
            states.append(s)
            acts.append(a)
            bad.append(flip)
            if mdp.terminal[s]:
                break
        return (np.array(states, dtype=np.int64), np.array(acts, dtype=np.int64),
                np.array(bad, dtype=bool))

    runs = []
    if coverage_mode == "full":
        for start in np.flatnonzero(~mdp.terminal):
            runs.append(run(int(start), mdp.max_steps))
        expected = set(np.flatnonzero(~mdp.terminal).tolist())
        seen = set()
        for states, _, _ in runs:
            seen.update(states[:-1].tolist())
        missing = expected - seen
        if missing:
            raise CoverageError(f"{len(missing)} states never visited: {sorted(missing)[:10]}")
    elif coverage_mode == "budget":
        if not pair_budget or pair_budget <= 0:
            raise DomainError("budget coverage needs a positive pair_budget")
        init_cdf = np.cumsum(mdp.initial)
        total = 0
        while total < pair_budget:
            start = int(np.searchsorted(init_cdf, rng.random() * init_cdf[-1], side="right"))
            states, acts, bad = run(min(start, S - 1), min(mdp.max_steps, pair_budget - total))
            runs.append((states, acts, bad))
            total += len(acts)
    else:
        raise DomainError(f"unknown coverage mode {coverage_mode!r}")

    runs = [r for r in runs if len(r[1]) > 0]
    demo = DemoSet(tuple(r[0] for r in runs), S, A, 0.0, float(epsilon), int(seed), tag)
    return ExpertRollout(demo, tuple(r[1] for r in runs), tuple(r[2] for r in runs))


def generate_demos(mdp: MdpSpec, policy: np.ndarray, coverage_mode: str = "full",
                   epsilon: float = 0.0, seed: int = 0,
                   pair_budget: int | None = None) -> DemoSet:
    return rollout_expert(mdp, policy, coverage_mode, epsilon, seed, pair_budget).demo


def select_missing_states(demo: DemoSet, eta: float, seed: int) -> np.ndarray:
    """Pick ``ceil(eta * |covered|)`` covered states.

    Selections for one seed are nested: a larger ``eta`` extends the
    selection made by a smaller one.
    """
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"eta must lie in [0, 1], got {eta}")
    covered = demo.covered_states()
    k = math.ceil(eta * len(covered) - 1e-9)
    order = np.random.default_rng(seed).permutation(covered)
    return np.sort(order[:k])


def remove_states(demo: DemoSet, states: np.ndarray) -> DemoSet:
    """Drop every pair touching ``states``, splitting trajectories at each gap."""
    drop = np.zeros(demo.num_states, dtype=bool)
    drop[np.asarray(states, dtype=np.int64)] = True
    pieces = []
    for traj in demo.trajectories:
        keep = ~drop[traj]
        # contiguous runs of kept states
        edges = np.flatnonzero(np.diff(np.concatenate([[0], keep.astype(np.int8), [0]])))
        for lo, hi in zip(edges[::2], edges[1::2]):
            if hi - lo >= 2:
                pieces.append(traj[lo:hi].copy())
    return replace(demo, trajectories=tuple(pieces))


def inject_missing_states(demo: DemoSet, eta: float, seed: int) -> DemoSet:
    missing = select_missing_states(demo, eta, seed)
    return replace(remove_states(demo, missing), eta=float(eta))


@dataclass
class CurriculumState:
    k: int = 10
    interval: int = 8000
    growth: int = 1
    carry: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.k < 1 or self.interval < 1 or self.growth < 0:
            raise DomainError("curriculum needs k >= 1, interval >= 1, growth >= 0")


def advance_curriculum(cur: CurriculumState, frames_elapsed: int) -> CurriculumState:
    total = cur.carry + int(frames_elapsed)
    steps, carry = divmod(total, cur.interval)
    return CurriculumState(cur.k + cur.growth * steps, cur.interval, cur.growth, carry)


def sample_pairs(demo: DemoSet, cur: CurriculumState | None, batch_size: int,
                 rng: int | np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Uniform draw (with replacement) over eligible pairs.

    With a curriculum only pairs among the first ``cur.k`` of their
    trajectory are eligible.
    """
    rng = np.random.default_rng(rng)
    if cur is None:
        eligible = None
        n = demo.num_pairs
    else:
        eligible = np.flatnonzero(demo.positions < cur.k)
        n = len(eligible)
    if n == 0:
        raise EmptySampleError("no eligible demonstration pairs")
    idx = rng.integers(n, size=batch_size)
    if eligible is not None:
        idx = eligible[idx]
    return demo.states[idx], demo.next_states[idx]


def label_from_dynamics(mdp: MdpSpec, s: np.ndarray, s_next: np.ndarray) -> np.ndarray:
    """Recover actions of a deterministic MDP by matching successors.

    Lowest matching action index wins; -1 marks a pair no action explains.
    """
    succ = mdp.successor_table()
    if succ is None:
        raise DomainError("label recovery needs deterministic transitions")
    s = np.asarray(s, dtype=np.int64)
    match = succ[s] == np.asarray(s_next, dtype=np.int64)[:, None]
    return np.where(match.any(axis=1), match.argmax(axis=1), -1)


def write_demos(path: str | Path, demo: DemoSet) -> None:
    tag = demo.policy_tag.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DEMO_MAGIC)
        fh.write(_HEADER.pack(demo.num_states, demo.num_actions, demo.eta, demo.epsilon,
                              demo.seed, len(demo.trajectories)))
        fh.write(struct.pack("<H", len(tag)) + tag)
        for traj in demo.trajectories:
            fh.write(struct.pack("<I", len(traj)))
            fh.write(np.asarray(traj, dtype="<u2").tobytes())


def read_demos(path: str | Path) -> DemoSet:
    data = Path(path).read_bytes()
    if not data.startswith(DEMO_MAGIC):
        raise DemoFormatError(f"{path}: not a demo-v1 file")
    off = len(DEMO_MAGIC)
    try:
        S, A, eta, eps, seed, n_traj = _HEADER.unpack_from(data, off)
        off += _HEADER.size
        (tag_len,) = struct.unpack_from("<H", data, off)
        off += 2
        tag = data[off:off + tag_len].decode("utf-8")
        off += tag_len
        trajs = []
        for _ in range(n_traj):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            traj = np.frombuffer(data, dtype="<u2", count=n, offset=off).astype(np.int64)
            off += 2 * n
            if n < 2 or traj.max() >= S:
                raise DemoFormatError(f"{path}: malformed trajectory")
            trajs.append(traj)
    except DemoFormatError:
        raise
    except (struct.error, ValueError) as exc:
        raise DemoFormatError(f"{path}: truncated file") from exc
    if off != len(data):
        raise DemoFormatError(f"{path}: {len(data) - off} trailing bytes")
    return DemoSet(tuple(trajs), S, A, eta, eps, seed, tag)
