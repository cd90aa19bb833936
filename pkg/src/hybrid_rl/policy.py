"""Tabular actor-critic with an optional behavioural-cloning term.

The actor and critic are separate linear maps of a one-hot state. One
optimiser step combines the n-step advantage actor-critic loss with
``bc_coef`` times the negative log-likelihood of inferred expert actions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    DomainError,
    NumericError,
    ParamStore,
    RMSProp,
    glorot_uniform,
    load_arrays,
    log_softmax,
    save_arrays,
    softmax,
)

PV_FORMAT = "pv-v1"


@dataclass
class HybridConfig:
    entropy_coef: float = 0.01
    bc_coef: float = 1.0
    value_coef: float = 0.5
    n_steps: int = 2
    gamma: float = 0.99
    bc_warmup: int = 2000
    demo_batch: int = 32
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if min(self.entropy_coef, self.bc_coef, self.value_coef, self.bc_warmup,
               self.demo_batch, self.max_grad_norm) < 0:
            raise DomainError("hybrid coefficients must be nonnegative")
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise DomainError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass
class RolloutFragment:
    """``n`` synchronous steps from ``w`` workers.

    ``states`` is (n+1, w); the last row holds the bootstrap states.
    ``dones[t]`` marks that the transition out of ``states[t]`` ended an
    episode, in which case ``states[t+1]`` already belongs to a new one.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray

    def __post_init__(self):
        n = self.actions.shape[0]
        if self.states.shape[0] != n + 1 or self.rewards.shape != self.actions.shape \
                or self.dones.shape != self.actions.shape:
            raise DomainError("inconsistent fragment shapes")
        if not np.all(np.isfinite(self.rewards)):
            raise NumericError("non-finite reward in fragment")


class PolicyValueNet:
    def __init__(self, num_states: int, num_actions: int,
                 seed: int | np.random.Generator = 0, zero_init: bool = False,
                 train_actor_bias: bool = False):
        rng = np.random.default_rng(seed)
        self.num_states, self.num_actions = num_states, num_actions
        # A trained action bias is shared by every state, so penalties met in a
        # handful of states suppress that action everywhere (on Taxi it shuts
        # off pickup before the passenger is ever carried). Off by default.
        self.train_actor_bias = train_actor_bias
        st = self.store = ParamStore()
        st.add("actor_W", np.zeros((num_actions, num_states)) if zero_init
               else glorot_uniform(rng, (num_actions, num_states)))
        st.add("actor_b", np.zeros(num_actions))
        st.add("critic_w", np.zeros(num_states))
        st.add("critic_b", np.zeros(1))

    @property
    def trainable(self) -> list[str]:
        return [n for n in self.store if n != "actor_b" or self.train_actor_bias]

    def logits(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.int64)
        return self.store["actor_W"][:, s].T + self.store["actor_b"]

    def policy_probs(self, s) -> np.ndarray:
        return softmax(self.logits(s))

    def value(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.int64)
        return self.store["critic_w"][s] + self.store["critic_b"][0]

    def act(self, s, rng: np.random.Generator) -> np.ndarray:
        """Sample actions by inverse CDF, one uniform draw per state."""
        p = self.policy_probs(np.atleast_1d(s))
        u = rng.random(p.shape[0])[:, None]
        a = (np.cumsum(p, axis=1) < u).sum(axis=1)
        return np.minimum(a, self.num_actions - 1)

    def greedy(self) -> np.ndarray:
        return np.argmax(self.logits(np.arange(self.num_states)), axis=1)

    def save(self, path) -> None:
        arrays = dict(self.store.params)
        arrays["config"] = np.array([self.num_states, self.num_actions])
        save_arrays(path, PV_FORMAT, arrays)

    @classmethod
    def load(cls, path) -> "PolicyValueNet":
        arrays = load_arrays(path, PV_FORMAT)
        S, A = (int(x) for x in arrays.pop("config"))
        net = cls(S, A, zero_init=True)
        net.store.load_state_dict(arrays)
        return net


def entropy(probs: np.ndarray) -> np.ndarray:
    return -(probs * np.log(np.clip(probs, 1e-300, None))).sum(axis=-1)


def n_step_returns(frag: RolloutFragment, net: PolicyValueNet, gamma: float) -> np.ndarray:
    """Discounted returns bootstrapped from the value of the fragment's last states.

    The bootstrap is cut to zero at every episode end, so a step ending an
    episode contributes only its realised reward.
    """
    n = frag.actions.shape[0]
    ret = net.value(frag.states[n]).astype(np.float64)
    out = np.zeros(frag.rewards.shape)
    live = 1.0 - frag.dones.astype(np.float64)
    for t in range(n - 1, -1, -1):
        ret = frag.rewards[t] + gamma * ret * live[t]
        out[t] = ret
    return out


def n_step_advantage(frag: RolloutFragment, net: PolicyValueNet, gamma: float) -> np.ndarray:
    return n_step_returns(frag, net, gamma) - net.value(frag.states[:-1])


@dataclass
class A2CBatch:
    states: np.ndarray
    actions: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray


def prepare_batch(frag: RolloutFragment, net: PolicyValueNet, gamma: float) -> A2CBatch:
    """Flatten a fragment and freeze its returns and advantages at the current parameters."""
    returns = n_step_returns(frag, net, gamma)
    states = frag.states[:-1]
    adv = returns - net.value(states)
    return A2CBatch(states.reshape(-1), frag.actions.reshape(-1), returns.reshape(-1),
                    adv.reshape(-1))


def a2c_loss(net: PolicyValueNet, batch: A2CBatch, entropy_coef: float,
             value_coef: float = 0.5) -> dict[str, float]:
    """Accumulate gradients of ``-A log pi(a|s) - alpha H + c (R - V(s))^2``.

    The advantage in the actor term is the frozen ``batch.advantages``; the
    critic regresses onto the frozen ``batch.returns``.
    """
    s, a = batch.states, batch.actions
    B = len(s)
    rows = np.arange(B)
    g = net.store.grads

    logp = log_softmax(net.logits(s))
    p = np.exp(logp)
    ent = entropy(p)
    adv = batch.advantages
    gz = p.copy()
    gz[rows, a] -= 1.0
    gz *= adv[:, None]
    # d(-H)/dz = p (log p + H)
    gz += entropy_coef * p * (logp + ent[:, None])
    gz /= B
    np.add.at(g["actor_W"].T, s, gz)
    g["actor_b"] += gz.sum(axis=0)

    err = batch.returns - net.value(s)
    gv = -2.0 * value_coef * err / B
    np.add.at(g["critic_w"], s, gv)
    g["critic_b"] += gv.sum()

    policy_loss = float(-(adv * logp[rows, a]).mean())
    value_loss = float((err ** 2).mean())
    mean_ent = float(ent.mean())
    total = policy_loss - entropy_coef * mean_ent + value_coef * value_loss
    if not np.isfinite(total):
        raise NumericError(f"non-finite actor-critic objective {total}")
    return {"policy_loss": policy_loss, "value_loss": value_loss, "entropy": mean_ent,
            "objective": total}


def bc_loss(net: PolicyValueNet, states, actions, coef: float = 1.0) -> float:
    """Accumulate gradients of ``-coef * mean log pi(a_hat | s_hat)``; returns the mean NLL."""
    s = np.asarray(states, dtype=np.int64)
    a = np.asarray(actions, dtype=np.int64)
    B = len(s)
    rows = np.arange(B)
    logp = log_softmax(net.logits(s))
    gz = np.exp(logp)
    gz[rows, a] -= 1.0
    gz *= coef / B
    np.add.at(net.store.grads["actor_W"].T, s, gz)
    net.store.grads["actor_b"] += gz.sum(axis=0)
    return float(-logp[rows, a].mean())


def hybrid_update(net: PolicyValueNet, opt: RMSProp, frag: RolloutFragment | None,
                  demo_states, demo_actions, cfg: HybridConfig,
                  bc_active: bool = True, use_rl: bool = True) -> dict[str, float]:
    """One optimiser step on the actor-critic loss plus the cloning term.

    The cloning term is skipped outright when inactive, when ``bc_coef`` is
    zero, or when no demonstration pairs were supplied, so those cases
    reproduce plain actor-critic updates exactly.
    """
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "bc_loss": 0.0}
    net.store.zero_grad()
    if use_rl and frag is not None:
        batch = prepare_batch(frag, net, cfg.gamma)
        stats.update(a2c_loss(net, batch, cfg.entropy_coef, cfg.value_coef))
    n_demo = 0 if demo_states is None else len(demo_states)
    if bc_active and cfg.bc_coef > 0 and n_demo > 0:
        stats["bc_loss"] = bc_loss(net, demo_states, demo_actions, cfg.bc_coef)
    if not net.train_actor_bias:
        net.store.grads["actor_b"].fill(0.0)
    if cfg.max_grad_norm > 0:
        net.store.clip_grad_norm(cfg.max_grad_norm)
    opt.step(net.store, net.trainable)
    return stats
