"""Training loop for every agent variant and the per-seed metrics stream.

Each update collects an ``n_steps`` fragment from all workers, feeds the
transitions to the inference model, trains it once, labels a batch of
expert pairs and takes one policy step. Every stochastic choice draws from a
named stream derived from the run seed.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import zlib
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .demos import (
    CurriculumState,
    DemoSet,
    advance_curriculum,
    generate_demos,
    inject_missing_states,
    label_from_dynamics,
    read_demos,
    rollout_expert,
    sample_pairs,
    value_iteration,
)
from .dynamics import DualDynamicsModel, MlpInferenceModel, ModelTrainer, ReplayBuffer
from .environments import MdpSpec, TaxiEnv, VecEnv, taxi_mdp
from .numerics import RMSProp
from .policy import PolicyValueNet, RolloutFragment, hybrid_update

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "avg_return", "episodes", "probe_accuracy", "policy_loss",
                 "value_loss", "entropy", "bc_loss", "model_loss")

# variant -> (uses RL gradient, uses cloning, inference model, true labels)
VARIANT_TABLE = {
    "ours": (True, True, "dual", False),
    "hybrid-mlp": (True, True, "mlp", False),
    "bc-dual": (False, True, "dual", False),
    "bc-mlp": (False, True, "mlp", False),
    "a2c": (True, False, "dual", False),
    "il": (False, True, "dual", True),
}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@lru_cache(maxsize=1)
def taxi_expert() -> tuple[MdpSpec, np.ndarray]:
    mdp = taxi_mdp()
    return mdp, value_iteration(mdp).greedy


def build_demos(cfg: ExperimentConfig) -> DemoSet:
    mdp, greedy = taxi_expert()
    if cfg.demo_path:
        return read_demos(cfg.demo_path)
    demo = generate_demos(mdp, greedy, "full", cfg.epsilon, cfg.demo_seed)
    if cfg.eta > 0:
        demo = inject_missing_states(demo, cfg.eta, cfg.demo_seed)
    return demo


@lru_cache(maxsize=4)
def probe_set(size: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Held-out labelled expert pairs (epsilon = 0) for measuring inference accuracy."""
    mdp, greedy = taxi_expert()
    s, s2, a = rollout_expert(mdp, greedy, "budget", 0.0, seed, pair_budget=size).labeled_pairs()
    return s, a, s2


def make_model(kind: str, cfg: ExperimentConfig, mdp: MdpSpec, rng: np.random.Generator):
    if kind == "dual":
        l1_weight = 1.0 if cfg.l1_reduction == "sum" else 1.0 / cfg.model_dim
        return DualDynamicsModel(mdp.num_states, mdp.num_actions, cfg.state_dim, cfg.model_dim,
                                 cfg.rank, seed=rng, detach_targets=not cfg.l1_target_grad,
                                 l1_weight=l1_weight)
    return MlpInferenceModel(mdp.num_states, mdp.num_actions, cfg.state_dim, cfg.model_dim,
                             seed=rng)


@dataclass
class MetricRow:
    step: int
    avg_return: float
    episodes: int
    probe_accuracy: float
    policy_loss: float
    value_loss: float
    entropy: float
    bc_loss: float
    model_loss: float


@dataclass
class RunResult:
    rows: list[MetricRow]
    policy: PolicyValueNet
    model: DualDynamicsModel | MlpInferenceModel


def run_single(cfg: ExperimentConfig, seed: int, demo: DemoSet | None = None) -> list[MetricRow]:
    return train(cfg, seed, demo).rows


def train(cfg: ExperimentConfig, seed: int, demo: DemoSet | None = None) -> RunResult:
    """One seeded run of the interact / fit model / label / update loop."""
    use_rl, use_bc, model_kind, true_labels = VARIANT_TABLE[cfg.variant]
    hcfg = cfg.hybrid()
    mdp, _ = taxi_expert()
    if use_bc and demo is None:
        demo = build_demos(cfg)

    vec = VecEnv([TaxiEnv(np.random.SeedSequence([seed, zlib.crc32(b"env"), i]))
                  for i in range(cfg.num_workers)])
    net = PolicyValueNet(mdp.num_states, mdp.num_actions, seed=stream(seed, "policy-init"),
                         train_actor_bias=cfg.train_actor_bias)
    opt = RMSProp(lr=cfg.policy_lr)
    model = make_model(model_kind, cfg, mdp, stream(seed, "model-init"))
    trainer = ModelTrainer(model, RMSProp(lr=cfg.model_lr), ReplayBuffer(cfg.replay_capacity),
                           cfg.model_batch)
    act_rng = stream(seed, "act")
    replay_rng = stream(seed, "replay")
    demo_rng = stream(seed, "demo")
    cur = CurriculumState(cfg.curriculum_k, cfg.curriculum_interval) if cfg.curriculum else None
    probe_s, probe_a, probe_s2 = probe_set(cfg.probe_size, cfg.probe_seed)

    window: deque[float] = deque(maxlen=cfg.return_window)
    n_seen_returns = 0
    rows: list[MetricRow] = []
    acc = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "bc_loss": 0.0,
           "model_loss": 0.0}
    n_acc = 0

    def emit(step):
        nonlocal n_acc
        avg = float(np.mean(window)) if window else math.nan
        k = max(n_acc, 1)
        rows.append(MetricRow(step, avg, n_seen_returns, model.accuracy(probe_s, probe_a, probe_s2),
                              *(acc[f] / k for f in ("policy_loss", "value_loss", "entropy",
                                                     "bc_loss", "model_loss"))))
        for f in acc:
            acc[f] = 0.0
        n_acc = 0

    steps = 0
    next_log = 0
    n, W = hcfg.n_steps, cfg.num_workers
    while steps < cfg.total_steps:
        if steps >= next_log:
            emit(next_log)
            next_log += cfg.log_interval
        states = np.zeros((n + 1, W), dtype=np.int64)
        actions = np.zeros((n, W), dtype=np.int64)
        rewards = np.zeros((n, W))
        dones = np.zeros((n, W), dtype=bool)
        for t in range(n):
            states[t] = vec.states
            actions[t] = net.act(vec.states, act_rng)
            for i, tr in enumerate(vec.step(actions[t])):
                rewards[t, i] = tr.r
                dones[t, i] = tr.done
                trainer.observe(tr.s, tr.a, tr.s_next)
        states[n] = vec.states
        steps += n * W
        if cur is not None:
            cur = advance_curriculum(cur, n * W)

        new = vec.finished_returns[n_seen_returns:]
        window.extend(new)
        n_seen_returns += len(new)

        for _ in range(cfg.model_updates):
            acc["model_loss"] += trainer.update(replay_rng) / cfg.model_updates

        bc_active = use_bc and trainer.buffer.seen >= hcfg.bc_warmup and hcfg.bc_coef > 0
        demo_s = demo_a = None
        if bc_active:
            demo_s, demo_s2 = sample_pairs(demo, cur, hcfg.demo_batch, demo_rng)
            if true_labels:
                demo_a = label_from_dynamics(mdp, demo_s, demo_s2)
                keep = demo_a >= 0
                demo_s, demo_a = demo_s[keep], demo_a[keep]
            else:
                demo_a = model.infer_action(demo_s, demo_s2)
        frag = RolloutFragment(states, actions, rewards, dones)
        stats = hybrid_update(net, opt, frag, demo_s, demo_a, hcfg, bc_active=bc_active,
                              use_rl=use_rl)
        for f in ("policy_loss", "value_loss", "entropy", "bc_loss"):
            acc[f] += stats[f]
        n_acc += 1

    while next_log <= cfg.total_steps:
        emit(next_log)
        next_log += cfg.log_interval
    return RunResult(rows, net, model)


def format_metrics(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([r.step, f"{r.avg_return:.6f}", r.episodes, f"{r.probe_accuracy:.6f}",
                    f"{r.policy_loss:.6f}", f"{r.value_loss:.6f}", f"{r.entropy:.6f}",
                    f"{r.bc_loss:.6f}", f"{r.model_loss:.6f}"])
    return buf.getvalue()


def read_metrics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_FIELDS:
            raise ValueError(f"{path}: unexpected metrics header {reader.fieldnames}")
        cols: dict[str, list[float]] = {f: [] for f in METRIC_FIELDS}
        for row in reader:
            for f in METRIC_FIELDS:
                cols[f].append(float(row[f]))
    return {f: np.array(v) for f, v in cols.items()}


def metrics_path(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / f"{run_tag(cfg)}_seed{seed}.csv"


def run_tag(cfg: ExperimentConfig) -> str:
    return f"{cfg.variant}_r{cfg.rank}_eta{cfg.eta:g}_eps{cfg.epsilon:g}_bc{cfg.bc_coef:g}"


def run_experiment(cfg: ExperimentConfig, checkpoints: bool = False) -> list[Path]:
    """Run every configured seed and write one metrics CSV per seed.

    With ``checkpoints`` the final policy (pv-v1) and inference model are
    saved next to each CSV.
    """
    use_bc = VARIANT_TABLE[cfg.variant][1]
    if use_bc and cfg.demo_path and not Path(cfg.demo_path).exists():
        raise ConfigError(f"demo file {cfg.demo_path} not found")
    demo = build_demos(cfg) if use_bc else None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for seed in cfg.seeds:
        result = train(cfg, seed, demo)
        rows = result.rows
        path = metrics_path(cfg, seed)
        path.write_text(format_metrics(rows), encoding="utf-8")
        if checkpoints:
            result.policy.save(path.with_suffix(".policy.npz"))
            result.model.save(path.with_suffix(".model.npz"))
        log.info("wrote %s (final avg return %.3f)", path, rows[-1].avg_return)
        paths.append(path)
    return paths
