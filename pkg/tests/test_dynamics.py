from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_rl.checks import GRAD_TOLERANCE, check_dual, check_mlp
from hybrid_rl.dynamics import (
    CountTensor,
    DualDynamicsModel,
    MlpInferenceModel,
    ModelTrainer,
    ReplayBuffer,
    UnseenPairError,
)
from hybrid_rl.environments import MdpEnv, TransitionTuple, random_small_mdp
from hybrid_rl.numerics import RMSProp, ShapeError, load_arrays, mode_m_product


def _random_log(n=10_000, seed=0):
    mdp = random_small_mdp(5, 2, seed)
    env = MdpEnv(mdp, seed)
    rng = np.random.default_rng(seed + 1)
    env.reset()
    log = []
    for _ in range(n):
        tr = env.step(int(rng.integers(2)))
        log.append(tr)
        if tr.done:
            env.reset()
    return log


def test_tabular_inference_equals_empirical_frequencies():
    log = _random_log()
    ct = CountTensor(5, 2)
    for tr in log:
        ct.record(tr)
    assert ct.total == 10_000
    joint = Counter((t.s, t.a, t.s_next) for t in log)
    pair = Counter((t.s, t.s_next) for t in log)
    worst = 0.0
    for (s, s2), n in pair.items():
        got = ct.infer(s, s2)
        for a in range(2):
            exact = Fraction(joint[(s, a, s2)], n)
            worst = max(worst, abs(float(exact) - got[a]))
    assert worst <= 1e-12


def test_tabular_forward_and_unseen_pair():
    ct = CountTensor(3, 2)
    ct.record(TransitionTuple(0, 1, 2, 0.0, False))
    ct.record(TransitionTuple(0, 1, 1, 0.0, False))
    np.testing.assert_array_equal(ct.forward(0, 1), [0, 0.5, 0.5])
    with pytest.raises(UnseenPairError):
        ct.infer(2, 2)
    with pytest.raises(UnseenPairError):
        ct.forward(1, 0)


def test_core_parameter_count_and_compression_ratio():
    m = DualDynamicsModel(500, 6, 128, 128, 2, seed=0)
    assert m.core_param_count == 2 * (128 * 128) * 2 == 65_536
    assert m.core_param_count / (500 * 6 * 500) == pytest.approx(0.04369, abs=1e-5)
    mlp = MlpInferenceModel(500, 6, 128, 128, seed=0)
    assert mlp.core_param_count == m.core_param_count


def test_low_rank_scores_equal_full_tensor_mode_products():
    rng = np.random.default_rng(3)
    m = DualDynamicsModel(7, 3, 5, 4, 3, seed=rng)
    T = m.reconstruct_tensor()
    assert T.shape == (5, 4, 4)
    for _ in range(5):
        h_s, h_x = rng.normal(size=5), rng.normal(size=4)
        # contract the state mode, then the second mode, leaving the predicted embedding
        full = mode_m_product(mode_m_product(T, h_s, 1), h_x, 2)
        np.testing.assert_allclose(m.predict_action_embedding(h_s, h_x), full, atol=1e-10)
        np.testing.assert_allclose(m.predict_delta_embedding(h_s, h_x), full, atol=1e-10)


def test_reconstruction_of_a_constructed_random_tensor():
    rng = np.random.default_rng(8)
    R, ds, d = 2, 4, 3
    A = rng.normal(size=(R, ds, d))
    B = rng.normal(size=(R, d, d))
    target = np.zeros((ds, d, d))
    for r in range(R):
        for k in range(d):
            target[:, k, :] += np.outer(A[r, :, k], B[r, :, k])
    m = DualDynamicsModel(6, 2, ds, d, R, seed=0)
    m.store["M"][...] = A.transpose(1, 0, 2)
    m.store["N"][...] = B.transpose(1, 0, 2)
    np.testing.assert_allclose(m.reconstruct_tensor(), target, atol=1e-12)
    h_s, h_x = rng.normal(size=ds), rng.normal(size=d)
    np.testing.assert_allclose(m.predict_action_embedding(h_s, h_x),
                               np.einsum("i,ikj,j->k", h_s, target, h_x), atol=1e-10)


def test_bilinear_rejects_wrong_widths():
    m = DualDynamicsModel(6, 2, 4, 3, 1, seed=0)
    with pytest.raises(ShapeError):
        m.predict_action_embedding(np.zeros(3), np.zeros(3))


@pytest.mark.parametrize("forward_term", [False, True])
@pytest.mark.parametrize("detach", [False, True])
@pytest.mark.parametrize("seed", [0, 1])
def test_dual_gradients(forward_term, detach, seed):
    assert check_dual(seed, forward_term=forward_term, detach=detach) < GRAD_TOLERANCE


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mlp_gradients(seed):
    assert check_mlp(seed) < GRAD_TOLERANCE


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 3))
def test_dual_loss_exceeds_act_loss(seed, rank):
    rng = np.random.default_rng(seed)
    m = DualDynamicsModel(10, 3, 4, 4, rank, seed=rng)
    s, a, s2 = rng.integers(0, 10, 8), rng.integers(0, 3, 8), rng.integers(0, 10, 8)
    act = m.act_loss(s, a, s2)
    dual = m.dual_model_loss(s, a, s2)
    assert dual >= act
    probs = m.infer_action_probs(s, s2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_act_loss_vanishes_when_everything_agrees():
    m = DualDynamicsModel(4, 2, 3, 3, 1, seed=0, zero_heads=True)
    # zero embeddings make every predicted embedding zero, matching zero targets;
    # a huge bias on the true action saturates the likelihood
    for name in ("state_embed", "action_embed", "delta_embed"):
        m.store[name][...] = 0.0
    m.store["b_a"][:] = [800.0, 0.0]
    assert m.act_loss(np.array([0, 1]), np.array([0, 0]), np.array([2, 3])) == pytest.approx(0.0)


def test_model_learns_a_tiny_deterministic_inverse_problem():
    # the action is identified by the successor offset: s' = (s + a + 1) % S
    S, A = 12, 3
    rng = np.random.default_rng(0)
    m = DualDynamicsModel(S, A, 16, 16, 2, seed=1, l1_weight=1 / 16)
    trainer = ModelTrainer(m, RMSProp(lr=3e-3), ReplayBuffer(1000), 64)
    for _ in range(400):
        s = int(rng.integers(S))
        a = int(rng.integers(A))
        trainer.observe(s, a, (s + a + 1) % S)
    for _ in range(500):
        trainer.update(rng)
    s = np.repeat(np.arange(S), A)
    a = np.tile(np.arange(A), S)
    assert m.accuracy(s, a, (s + a + 1) % S) == 1.0


def test_replay_buffer_ring_and_uniform_sampling():
    buf = ReplayBuffer(5)
    for i in range(8):
        buf.add(i, 0, i + 1)
    assert len(buf) == 5 and buf.seen == 8
    assert sorted(buf.s.tolist()) == [3, 4, 5, 6, 7]
    s, _, s2 = buf.sample(5000, np.random.default_rng(0))
    np.testing.assert_array_equal(s2, s + 1)
    counts = np.bincount(s, minlength=8)[3:]
    assert counts.min() > 850
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(1, np.random.default_rng(0))


def test_checkpoint_round_trips(tmp_path):
    m = DualDynamicsModel(9, 3, 4, 5, 2, seed=2)
    m.save(tmp_path / "m.npz")
    back = DualDynamicsModel.load(tmp_path / "m.npz")
    for name in m.store:
        np.testing.assert_array_equal(back.store[name], m.store[name])
    assert str(np.load(tmp_path / "m.npz")["__format__"]) == "ddm-v1"
    mlp = MlpInferenceModel(9, 3, 4, 5, seed=2)
    mlp.save(tmp_path / "p.npz")
    back = MlpInferenceModel.load(tmp_path / "p.npz")
    s = np.arange(9)
    np.testing.assert_array_equal(back.infer_action_probs(s, s[::-1]),
                                  mlp.infer_action_probs(s, s[::-1]))
    with pytest.raises(ValueError):
        load_arrays(tmp_path / "p.npz", "ddm-v1")
