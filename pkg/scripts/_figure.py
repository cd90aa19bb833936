"""Shared driver for the figure scripts: run arms (skipping finished seeds), aggregate, plot."""
import argparse
import logging
from pathlib import Path

from hybrid_rl.analysis import aggregate, emit_plot, format_curve
from hybrid_rl.config import ExperimentConfig
from hybrid_rl.experiment import metrics_path, run_experiment


def parse_args(doc: str) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=doc)
    ap.add_argument("--seeds", type=int, default=16, help="number of seeds (from 0)")
    ap.add_argument("--steps", type=int, default=80_000, help="total environment steps")
    ap.add_argument("--runs", type=Path, default=Path("runs"))
    ap.add_argument("--out", type=Path, default=Path("figures"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    return args


def run_arms(args, arms: dict[str, dict], column: str = "avg_return"):
    curves = []
    for label, overrides in arms.items():
        cfg = ExperimentConfig(seeds=list(range(args.seeds)), total_steps=args.steps,
                               out_dir=str(args.runs), **overrides)
        todo = [s for s in cfg.seeds if not metrics_path(cfg, s).exists()]
        if todo:
            run_experiment(cfg.replace(seeds=todo))
        curves.append(aggregate([metrics_path(cfg, s) for s in cfg.seeds], column, label))
    return curves


def save(args, name: str, curves, **plot_kw) -> None:
    args.out.mkdir(parents=True, exist_ok=True)
    for c in curves:
        (args.out / f"{name}_{c.label}.csv").write_text(format_curve(c), encoding="utf-8")
    path = emit_plot(curves, args.out / f"{name}.svg", **plot_kw)
    for c in curves:
        print(f"{name} {c.label:<14} final {c.mean[-1]:8.2f} +- {c.std[-1]:.2f}")
    print(f"wrote {path}")
