"""Central-difference audit of every hand-written gradient in the package.

Each check builds a small randomly initialised model, draws a random batch
and compares analytic gradients against ``numerics.grad_check``. Batch
states are drawn so that ReLU and L1 kinks are hit with probability zero.
"""
from __future__ import annotations

import numpy as np

from .dynamics import DualDynamicsModel, MlpInferenceModel
from .numerics import grad_check
from .policy import A2CBatch, PolicyValueNet, a2c_loss, bc_loss

GRAD_TOLERANCE = 1e-4


def _batch(rng, S, A, B):
    s = rng.integers(0, S, B)
    s2 = (s + rng.integers(1, S, B)) % S
    return s, rng.integers(0, A, B), s2


def check_dual(seed: int = 0, forward_term: bool = False, detach: bool = False,
               S: int = 24, A: int = 6, d: int = 8, rank: int = 2, B: int = 16) -> float:
    rng = np.random.default_rng(seed)
    m = DualDynamicsModel(S, A, d, d, rank, seed=rng, detach_targets=detach,
                          l1_weight=float(rng.uniform(0.1, 1.0)))
    s, a, s2 = _batch(rng, S, A, B)
    targets = m.l1_targets(s, a, s2) if detach else None
    loss = m.dual_model_loss if forward_term else m.act_loss
    return grad_check(lambda _: loss(s, a, s2, targets), m.store, rng=rng)


def check_mlp(seed: int = 0, S: int = 24, A: int = 6, d: int = 8, B: int = 16) -> float:
    rng = np.random.default_rng(seed)
    m = MlpInferenceModel(S, A, d, d, seed=rng)
    s, a, s2 = _batch(rng, S, A, B)
    return grad_check(lambda _: m.train_loss(s, a, s2), m.store, rng=rng)


def _random_a2c_batch(rng, S, A, B):
    return A2CBatch(rng.integers(0, S, B), rng.integers(0, A, B),
                    rng.normal(0, 3, B), rng.normal(0, 2, B))


def _randomised_net(rng, S, A):
    net = PolicyValueNet(S, A, seed=rng, train_actor_bias=True)
    net.store["critic_w"][:] = rng.normal(0, 1, S)
    net.store["actor_b"][:] = rng.normal(0, 0.5, A)
    return net


def check_actor(seed: int = 0, S: int = 12, A: int = 6, B: int = 32,
                entropy_coef: float = 0.05) -> float:
    """Frozen-advantage policy-gradient term plus entropy bonus (critic term off)."""
    rng = np.random.default_rng(seed)
    net = _randomised_net(rng, S, A)
    batch = _random_a2c_batch(rng, S, A, B)
    return grad_check(lambda _: a2c_loss(net, batch, entropy_coef, 0.0)["objective"],
                      net.store, rng=rng)


def check_critic(seed: int = 0, S: int = 12, A: int = 6, B: int = 32) -> float:
    """Squared-advantage critic term alone (advantages zeroed, no entropy)."""
    rng = np.random.default_rng(seed)
    net = _randomised_net(rng, S, A)
    b = _random_a2c_batch(rng, S, A, B)
    batch = A2CBatch(b.states, b.actions, b.returns, np.zeros(B))
    return grad_check(lambda _: a2c_loss(net, batch, 0.0, 0.5)["objective"], net.store, rng=rng)


def check_bc(seed: int = 0, S: int = 12, A: int = 6, B: int = 32) -> float:
    rng = np.random.default_rng(seed)
    net = _randomised_net(rng, S, A)
    s, a = rng.integers(0, S, B), rng.integers(0, A, B)
    return grad_check(lambda _: 0.7 * bc_loss(net, s, a, 0.7), net.store, rng=rng)


def gradient_suite(seed: int = 0) -> dict[str, float]:
    """Worst relative error per differentiable objective."""
    return {
        "act_loss": check_dual(seed, forward_term=False),
        "act_loss_detached": check_dual(seed, forward_term=False, detach=True),
        "dual_model_loss": check_dual(seed, forward_term=True),
        "actor_entropy": check_actor(seed),
        "critic": check_critic(seed),
        "behaviour_cloning": check_bc(seed),
        "mlp_loss": check_mlp(seed),
    }
