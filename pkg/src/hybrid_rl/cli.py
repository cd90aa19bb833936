"""Command-line entry point: ``python -m hybrid_rl <command> ...``.

Configuration precedence is dataclass defaults < ``--config`` file <
``HRL_*`` environment variables < explicit flags (``--set key=value`` and the
named flags).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import AggregationError, PlotUsageError, aggregate, emit_plot, format_curve, read_curve
from .checks import GRAD_TOLERANCE, gradient_suite
from .config import VARIANTS, ConfigError, coerce, load_config
from .demos import DemoFormatError, episode_return, optimal_mean_return, value_iteration, write_demos
from .environments import taxi_legal_starts
from .experiment import build_demos, run_experiment, taxi_expert
from .policy import PolicyValueNet

log = logging.getLogger("hybrid_rl")

USAGE_ERRORS = (ConfigError, AggregationError, PlotUsageError, DemoFormatError,
                FileNotFoundError)


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", help="run seed, or a comma-separated list of seeds")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--rank", type=int)
    p.add_argument("--eta", type=float, help="missing-state ratio of the demonstrations")
    p.add_argument("--epsilon", type=float, help="non-optimal action ratio of the demonstrations")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (repeatable)")


def _load(args, seed_field: str = "seeds"):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip().replace("-", "_")
        overrides[key] = coerce(key, raw)
    for key in ("variant", "rank", "eta", "epsilon"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if args.seed is not None:
        seeds = coerce("seeds", args.seed)
        overrides[seed_field] = seeds if seed_field == "seeds" else seeds[0]
    return load_config(args.config, overrides)


def cmd_demo_gen(args) -> int:
    cfg = _load(args, seed_field="demo_seed")
    cfg = cfg.replace(demo_path=None)
    demo = build_demos(cfg)
    write_demos(args.out, demo)
    print(f"wrote {args.out}: {len(demo.trajectories)} trajectories, {demo.num_pairs} pairs, "
          f"{len(demo.covered_states())} covered states (eta={cfg.eta:g}, epsilon={cfg.epsilon:g})")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    paths = run_experiment(cfg, checkpoints=args.checkpoint)
    for p in paths:
        print(p)
    return 0


def cmd_aggregate(args) -> int:
    curve = aggregate(args.files, args.column, args.label or "")
    text = format_curve(curve)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({curve.runs} runs, {len(curve.steps)} steps)")
    else:
        sys.stdout.write(text)
    return 0


def cmd_plot(args) -> int:
    labels = args.label or []
    if labels and len(labels) != len(args.curves):
        raise PlotUsageError("give one --label per curve file, or none")
    curves = [read_curve(p, labels[i] if labels else None) for i, p in enumerate(args.curves)]
    emit_plot(curves, args.out, title=args.title or "", ylabel=args.ylabel)
    print(f"wrote {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    seed = int(args.seed) if args.seed is not None else 0
    worst = gradient_suite(seed)
    ok = True
    for name, err in worst.items():
        passed = err < args.tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:<20} max rel. error {err:.3e}")
    return 0 if ok else 1


def cmd_oracle_eval(args) -> int:
    mdp, greedy = taxi_expert()
    q = value_iteration(mdp)
    opt = optimal_mean_return(mdp)
    print(f"value iteration: {q.iterations} sweeps, residual {q.residual:.2e}")
    print(f"optimal mean return over {len(taxi_legal_starts())} legal starts: {opt:.6f}")
    if args.policy:
        net = PolicyValueNet.load(args.policy)
        g = net.greedy()
        ret = float(np.mean([episode_return(mdp, g, s) for s in taxi_legal_starts()]))
        agree = float(np.mean(g[taxi_legal_starts()] == greedy[taxi_legal_starts()]))
        print(f"greedy policy from {args.policy}: mean return {ret:.6f} "
              f"({ret / opt:.1%} of optimal), start-state agreement with expert {agree:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-rl", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-gen", help="write a state-only demonstration file (demo-v1)")
    _config_flags(p)
    p.add_argument("--out", default="demos.bin")
    p.set_defaults(func=cmd_demo_gen)

    p = sub.add_parser("train", help="run a variant over its seeds, one metrics CSV per seed")
    _config_flags(p)
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--checkpoint", action="store_true",
                   help="also save the final policy and inference model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("aggregate", help="mean and sample std across metric files")
    p.add_argument("files", nargs="+")
    p.add_argument("--column", default="avg_return")
    p.add_argument("--label")
    p.add_argument("--out")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("plot", help="render aggregated curves to SVG")
    p.add_argument("curves", nargs="+", help="files written by 'aggregate'")
    p.add_argument("--label", action="append")
    p.add_argument("--title")
    p.add_argument("--ylabel", default="average return")
    p.add_argument("--out", default="curves.svg")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("grad-check", help="central-difference check of every gradient")
    p.add_argument("--seed")
    p.add_argument("--tol", type=float, default=GRAD_TOLERANCE)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("oracle-eval", help="value-iteration optimum, optionally vs a policy")
    p.add_argument("--policy", help="pv-v1 checkpoint to evaluate greedily")
    p.set_defaults(func=cmd_oracle_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
