"""Action-inference models trained on the agent's own (s, a, s') experience.

``CountTensor`` is the exact tabular estimator. ``DualDynamicsModel`` is the
rank-R factorised tensor model whose shared factors predict both the action
embedding from a state difference and the state difference from an action.
``MlpInferenceModel`` is the parameter-matched nonlinear baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environments import TransitionTuple
from .numerics import (
    DomainError,
    NumericError,
    ParamStore,
    RMSProp,
    ShapeError,
    glorot_uniform,
    load_arrays,
    log_softmax,
    save_arrays,
    softmax,
)

DDM_FORMAT = "ddm-v1"
MLP_FORMAT = "mlp-v1"


class UnseenPairError(KeyError):
    pass


class CountTensor:
    """Dense ``c(s, a, s')`` counts of observed transitions."""

    def __init__(self, num_states: int, num_actions: int):
        self.counts = np.zeros((num_states, num_actions, num_states), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def record(self, t: TransitionTuple) -> None:
        S, A, _ = self.counts.shape
        if not (0 <= t.s < S and 0 <= t.a < A and 0 <= t.s_next < S):
            raise DomainError(f"transition out of range: {t}")
        self.counts[t.s, t.a, t.s_next] += 1

    def infer(self, s: int, s_next: int) -> np.ndarray:
        """Maximum-likelihood ``P(a | s, s')`` from the ``c(s, :, s')`` fibre."""
        h = self.counts[s, :, s_next]
        mass = h.sum()
        if mass == 0:
            raise UnseenPairError((s, s_next))
        return h / mass

    def forward(self, s: int, a: int) -> np.ndarray:
        h = self.counts[s, a, :]
        mass = h.sum()
        if mass == 0:
            raise UnseenPairError((s, a))
        return h / mass


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int = 50_000):
        self.capacity = capacity
        self.s = np.zeros(capacity, dtype=np.int64)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.s_next = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.cursor = 0
        self.seen = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, s_next) -> None:
        for x, y, z in zip(np.atleast_1d(s), np.atleast_1d(a), np.atleast_1d(s_next)):
            i = self.cursor
            self.s[i], self.a[i], self.s_next[i] = x, y, z
            self.cursor = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)
            self.seen += 1

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("sampling from an empty replay buffer")
        idx = rng.integers(self.size, size=batch_size)
        return self.s[idx], self.a[idx], self.s_next[idx]


class InferenceModel:
    """Common surface of the learned inverse-dynamics models."""

    store: ParamStore
    num_actions: int

    def infer_action_probs(self, s, s_next) -> np.ndarray:
        raise NotImplementedError

    def infer_action(self, s, s_next) -> np.ndarray:
        """Greedy action; ``argmax`` already breaks ties toward the lowest index."""
        return np.argmax(self.infer_action_probs(s, s_next), axis=-1)

    def train_loss(self, s, a, s_next) -> float:
        """Loss used for online training; accumulates gradients into ``store``."""
        raise NotImplementedError

    @property
    def trainable(self) -> list[str]:
        return list(self.store)

    def accuracy(self, s, a, s_next) -> float:
        return float(np.mean(self.infer_action(s, s_next) == np.asarray(a)))


class DualDynamicsModel(InferenceModel):
    """Rank-R dual tensor model over one-hot states.

    Parameters (shapes use ``S`` states, ``A`` actions):

    ``state_embed`` (S, d_s)   row s is h_s
    ``delta_embed`` (d, d_s)   h_ds = delta_embed @ (h_s' - h_s)
    ``action_embed`` (A, d)    row a is h_a
    ``M`` (d_s, R, d), ``N`` (d, R, d)   shared factors, ``M[:, r, :]`` is M_r
    ``W_a`` (A, d), ``b_a`` (A,)         inverse head
    ``W_next`` (S, d), ``W_skip`` (d, d_s), ``b_next`` (S,)   forward head
    """

    def __init__(self, num_states: int, num_actions: int, state_dim: int = 128,
                 dim: int = 128, rank: int = 2, seed: int | np.random.Generator = 0,
                 zero_heads: bool = False, detach_targets: bool = True,
                 l1_weight: float = 1.0):
        if rank < 1:
            raise DomainError(f"rank must be >= 1, got {rank}")
        rng = np.random.default_rng(seed)
        self.num_states, self.num_actions = num_states, num_actions
        self.state_dim, self.dim, self.rank = state_dim, dim, rank
        self.detach_targets, self.l1_weight = detach_targets, l1_weight
        st = self.store = ParamStore()
        # glorot_uniform takes (fan_out, fan_in)
        st.add("state_embed", glorot_uniform(rng, (state_dim, num_states)).T)
        st.add("delta_embed", glorot_uniform(rng, (dim, state_dim)))
        st.add("action_embed", glorot_uniform(rng, (dim, num_actions)).T)
        st.add("M", np.stack([glorot_uniform(rng, (dim, state_dim)).T for _ in range(rank)], axis=1))
        st.add("N", np.stack([glorot_uniform(rng, (dim, dim)).T for _ in range(rank)], axis=1))
        if zero_heads:
            W_a, W_next = np.zeros((num_actions, dim)), np.zeros((num_states, dim))
        else:
            W_a = glorot_uniform(rng, (num_actions, dim))
            W_next = glorot_uniform(rng, (num_states, dim))
        st.add("W_a", W_a)
        st.add("b_a", np.zeros(num_actions))
        st.add("W_next", W_next)
        st.add("W_skip", glorot_uniform(rng, (dim, state_dim)))
        st.add("b_next", np.zeros(num_states))

    @property
    def core_param_count(self) -> int:
        return self.store.num_params(["M", "N"])

    # -- embeddings and the shared bilinear map --------------------------------

    def embed_state(self, s) -> np.ndarray:
        return self.store["state_embed"][np.asarray(s, dtype=np.int64)]

    def embed_delta(self, h_s, h_next) -> np.ndarray:
        return (np.asarray(h_next) - np.asarray(h_s)) @ self.store["delta_embed"].T

    def embed_action(self, a) -> np.ndarray:
        return self.store["action_embed"][np.asarray(a, dtype=np.int64)]

    def _bilinear(self, h_s, h_x) -> np.ndarray:
        h_s, h_x = np.asarray(h_s, dtype=np.float64), np.asarray(h_x, dtype=np.float64)
        if h_s.shape[-1] != self.state_dim or h_x.shape[-1] != self.dim:
            raise ShapeError(f"expected trailing dims ({self.state_dim}, {self.dim}), "
                             f"got {h_s.shape} and {h_x.shape}")
        return self._rank_sum(self._factor(h_s, "M") * self._factor(h_x, "N"))

    def _factor(self, h, name) -> np.ndarray:
        # (..., R * d): all R products h @ X_r side by side
        X = self.store[name]
        return h @ X.reshape(X.shape[0], -1)

    def _rank_sum(self, prod) -> np.ndarray:
        return prod.reshape(*prod.shape[:-1], self.rank, self.dim).sum(axis=-2)

    def predict_action_embedding(self, h_s, h_delta) -> np.ndarray:
        return self._bilinear(h_s, h_delta)

    def predict_delta_embedding(self, h_s, h_a) -> np.ndarray:
        return self._bilinear(h_s, h_a)

    def reconstruct_tensor(self) -> np.ndarray:
        """Full core tensor with ``T[:, k, :] = sum_r M_r[:, k] (x) N_r[:, k]``.

        Axes are (state, action-or-delta, delta-or-action); the two trailing
        modes are interchangeable because the factors are shared.
        """
        M, N = self.store["M"], self.store["N"]
        return np.einsum("irk,jrk->ikj", M, N)

    # -- heads -----------------------------------------------------------------

    def action_logits(self, s, s_next) -> np.ndarray:
        h_s = self.embed_state(s)
        h_d = self.embed_delta(h_s, self.embed_state(s_next))
        return self.predict_action_embedding(h_s, h_d) @ self.store["W_a"].T + self.store["b_a"]

    def infer_action_probs(self, s, s_next) -> np.ndarray:
        return softmax(self.action_logits(s, s_next))

    def forward_next_state_probs(self, s, a) -> np.ndarray:
        h_s = self.embed_state(s)
        z = self.predict_delta_embedding(h_s, self.embed_action(a)) + h_s @ self.store["W_skip"].T
        return softmax(z @ self.store["W_next"].T + self.store["b_next"])

    # -- losses ----------------------------------------------------------------

    def act_loss(self, s, a, s_next, targets=None) -> float:
        return self._loss(s, a, s_next, False, targets)

    def dual_model_loss(self, s, a, s_next, targets=None) -> float:
        return self._loss(s, a, s_next, True, targets)

    def train_loss(self, s, a, s_next) -> float:
        return self._loss(s, a, s_next, False, None)

    @property
    def trainable(self) -> list[str]:
        """Parameters reached by the action-inference loss (forward head excluded)."""
        return [n for n in self.store if n not in ("W_next", "W_skip", "b_next")]

    def l1_targets(self, s, a, s_next) -> tuple[np.ndarray, np.ndarray]:
        """Current ``(h_a, h_ds)`` for a batch, usable as frozen consistency targets."""
        h_s = self.embed_state(s)
        return self.embed_action(a), self.embed_delta(h_s, self.embed_state(s_next))

    def _loss(self, s, a, s_next, forward_term: bool, targets) -> float:
        """Batch-mean loss; gradients are accumulated into ``self.store.grads``.

        ``targets`` replaces the live ``(h_a, h_ds)`` on the target side of
        both L1 terms with constants, so no gradient reaches them there.
        """
        s = np.atleast_1d(np.asarray(s, dtype=np.int64))
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        s_next = np.atleast_1d(np.asarray(s_next, dtype=np.int64))
        B = len(s)
        if B == 0:
            raise ValueError("empty batch")
        p, g = self.store.params, self.store.grads
        rows = np.arange(B)

        h_s = p["state_embed"][s]
        h_n = p["state_embed"][s_next]
        diff = h_n - h_s
        h_d = diff @ p["delta_embed"].T
        h_a = p["action_embed"][a]
        R, d = self.rank, self.dim
        M2 = p["M"].reshape(self.state_dim, R * d)
        N2 = p["N"].reshape(d, R * d)
        U = h_s @ M2  # (B, R*d)
        V = h_d @ N2
        EN = p["action_embed"] @ N2  # (A, R*d), shared by every sample with the same action
        W = EN[a]
        ha_hat = self._rank_sum(U * V)
        hd_hat = self._rank_sum(U * W)

        logp = log_softmax(ha_hat @ p["W_a"].T + p["b_a"])
        nll_i = -logp[rows, a]
        if targets is None and self.detach_targets:
            targets = (h_a, h_d)
        t_a, t_d = (h_a, h_d) if targets is None else targets
        err_a = t_a - ha_hat
        err_d = t_d - hd_hat
        lw = self.l1_weight
        per_sample = nll_i + lw * (np.abs(err_a).sum(axis=1) + np.abs(err_d).sum(axis=1))

        if forward_term:
            z = hd_hat + h_s @ p["W_skip"].T
            logq = log_softmax(z @ p["W_next"].T + p["b_next"])
            per_sample = per_sample - logq[rows, s_next]
        loss = float(per_sample.mean())
        if not np.isfinite(loss):
            raise NumericError(f"non-finite dual-model loss {loss}")

        inv = 1.0 / B
        g_logit = np.exp(logp)
        g_logit[rows, a] -= 1.0
        g_logit *= inv
        g["W_a"] += g_logit.T @ ha_hat
        g["b_a"] += g_logit.sum(axis=0)
        sa = np.sign(err_a) * (lw * inv)
        sd = np.sign(err_d) * (lw * inv)
        g_ha_hat = g_logit @ p["W_a"] - sa
        g_hd_hat = -sd
        if targets is None:
            g_ha = sa.copy()
            g_hd = sd.copy()
        else:
            g_ha = np.zeros_like(h_a)
            g_hd = np.zeros_like(h_d)
        g_hs = np.zeros_like(h_s)

        if forward_term:
            g_f = np.exp(logq)
            g_f[rows, s_next] -= 1.0
            g_f *= inv
            g["W_next"] += g_f.T @ z
            g["b_next"] += g_f.sum(axis=0)
            g_z = g_f @ p["W_next"]
            g_hd_hat = g_hd_hat + g_z
            g["W_skip"] += g_z.T @ h_s
            g_hs += g_z @ p["W_skip"]

        g_ha_rep = np.tile(g_ha_hat, (1, R))
        g_hd_rep = np.tile(g_hd_hat, (1, R))
        g_U = g_ha_rep * V + g_hd_rep * W
        g_V = g_ha_rep * U
        g_W = g_hd_rep * U
        g["M"] += (h_s.T @ g_U).reshape(p["M"].shape)
        onehot_a = np.zeros((B, self.num_actions))
        onehot_a[rows, a] = 1.0
        g_W_by_action = onehot_a.T @ g_W
        g["N"] += (h_d.T @ g_V + p["action_embed"].T @ g_W_by_action).reshape(p["N"].shape)
        g_hs += g_U @ M2.T
        g_hd += g_V @ N2.T
        g_E = g_W_by_action @ N2.T

        g["delta_embed"] += g_hd.T @ diff
        g_diff = g_hd @ p["delta_embed"]
        np.add.at(g["state_embed"], s_next, g_diff)
        np.add.at(g["state_embed"], s, g_hs - g_diff)
        np.add.at(g["action_embed"], a, g_ha)
        g["action_embed"] += g_E
        return loss

    def save(self, path) -> None:
        arrays = dict(self.store.params)
        arrays["config"] = np.array([self.num_states, self.num_actions, self.state_dim,
                                     self.dim, self.rank])
        save_arrays(path, DDM_FORMAT, arrays)

    @classmethod
    def load(cls, path) -> "DualDynamicsModel":
        arrays = load_arrays(path, DDM_FORMAT)
        S, A, ds, d, R = (int(x) for x in arrays.pop("config"))
        model = cls(S, A, ds, d, R)
        model.store.load_state_dict(arrays)
        return model


class MlpInferenceModel(InferenceModel):
    """Concatenated pair embedding -> two ReLU layers -> linear action head.

    The head is a 128x128 projection followed by the ``A``-way output layer,
    which brings the non-embedding weight count to 256*128 + 2*128*128.
    """

    def __init__(self, num_states: int, num_actions: int, embed_dim: int = 128,
                 hidden: int = 128, seed: int | np.random.Generator = 0,
                 zero_head: bool = False):
        rng = np.random.default_rng(seed)
        self.num_states, self.num_actions = num_states, num_actions
        self.embed_dim, self.hidden = embed_dim, hidden
        st = self.store = ParamStore()
        st.add("state_embed", glorot_uniform(rng, (embed_dim, num_states)).T)
        st.add("W1", glorot_uniform(rng, (hidden, 2 * embed_dim)))
        st.add("b1", np.zeros(hidden))
        st.add("W2", glorot_uniform(rng, (hidden, hidden)))
        st.add("b2", np.zeros(hidden))
        st.add("W3", glorot_uniform(rng, (hidden, hidden)))
        st.add("b3", np.zeros(hidden))
        st.add("W_a", np.zeros((num_actions, hidden)) if zero_head
               else glorot_uniform(rng, (num_actions, hidden)))
        st.add("b_a", np.zeros(num_actions))

    @property
    def core_param_count(self) -> int:
        return self.store.num_params(["W1", "W2", "W3"])

    def _forward(self, s, s_next):
        p = self.store.params
        x = np.concatenate([p["state_embed"][s], p["state_embed"][s_next]], axis=-1)
        z1 = x @ p["W1"].T + p["b1"]
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ p["W2"].T + p["b2"]
        a2 = np.maximum(z2, 0.0)
        z3 = a2 @ p["W3"].T + p["b3"]
        logits = z3 @ p["W_a"].T + p["b_a"]
        return x, z1, a1, z2, a2, z3, logits

    def infer_action_probs(self, s, s_next) -> np.ndarray:
        s = np.asarray(s, dtype=np.int64)
        s_next = np.asarray(s_next, dtype=np.int64)
        return softmax(self._forward(s, s_next)[-1])

    def train_loss(self, s, a, s_next) -> float:
        """Mean cross-entropy of the true action; accumulates gradients."""
        s = np.atleast_1d(np.asarray(s, dtype=np.int64))
        a = np.atleast_1d(np.asarray(a, dtype=np.int64))
        s_next = np.atleast_1d(np.asarray(s_next, dtype=np.int64))
        B = len(s)
        if B == 0:
            raise ValueError("empty batch")
        p, g = self.store.params, self.store.grads
        rows = np.arange(B)
        x, z1, a1, z2, a2, z3, logits = self._forward(s, s_next)
        logp = log_softmax(logits)
        loss = float(-logp[rows, a].mean())
        if not np.isfinite(loss):
            raise NumericError(f"non-finite MLP loss {loss}")

        d = np.exp(logp)
        d[rows, a] -= 1.0
        d /= B
        g["W_a"] += d.T @ z3
        g["b_a"] += d.sum(axis=0)
        d = d @ p["W_a"]
        g["W3"] += d.T @ a2
        g["b3"] += d.sum(axis=0)
        d = (d @ p["W3"]) * (z2 > 0)
        g["W2"] += d.T @ a1
        g["b2"] += d.sum(axis=0)
        d = (d @ p["W2"]) * (z1 > 0)
        g["W1"] += d.T @ x
        g["b1"] += d.sum(axis=0)
        d = d @ p["W1"]
        e = self.embed_dim
        np.add.at(g["state_embed"], s, d[:, :e])
        np.add.at(g["state_embed"], s_next, d[:, e:])
        return loss

    def save(self, path) -> None:
        arrays = dict(self.store.params)
        arrays["config"] = np.array([self.num_states, self.num_actions, self.embed_dim,
                                     self.hidden])
        save_arrays(path, MLP_FORMAT, arrays)

    @classmethod
    def load(cls, path) -> "MlpInferenceModel":
        arrays = load_arrays(path, MLP_FORMAT)
        S, A, e, h = (int(x) for x in arrays.pop("config"))
        model = cls(S, A, e, h)
        model.store.load_state_dict(arrays)
        return model


@dataclass
class ModelTrainer:
    """Online trainer: replay buffer plus an optimizer over one inference model."""

    model: InferenceModel
    optimizer: RMSProp
    buffer: ReplayBuffer
    batch_size: int = 64

    def observe(self, s, a, s_next) -> None:
        self.buffer.add(s, a, s_next)

    def update(self, rng: np.random.Generator) -> float:
        s, a, s_next = self.buffer.sample(self.batch_size, rng)
        loss = self.model.train_loss(s, a, s_next)
        self.optimizer.step(self.model.store, self.model.trainable)
        return loss
