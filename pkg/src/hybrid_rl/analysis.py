"""Across-seed aggregation of metric files and learning-curve rendering."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .experiment import read_metrics


class AggregationError(ValueError):
    pass


class PlotUsageError(ValueError):
    pass


@dataclass(frozen=True)
class Curve:
    label: str
    steps: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    runs: int


def aggregate_columns(steps: Sequence[np.ndarray], values: Sequence[np.ndarray],
                      label: str = "") -> Curve:
    """Per-step mean and sample (ddof=1) standard deviation across runs."""
    if len(values) < 2:
        raise AggregationError(f"need at least 2 runs to aggregate, got {len(values)}")
    ref = np.asarray(steps[0])
    for i, st in enumerate(steps[1:], 1):
        st = np.asarray(st)
        if st.shape != ref.shape or not np.array_equal(st, ref):
            raise AggregationError(f"run {i} logs different steps from run 0")
    stack = np.vstack([np.asarray(v, dtype=np.float64) for v in values])
    if stack.shape[1] != ref.shape[0]:
        raise AggregationError("value columns and step columns differ in length")
    return Curve(label, ref.copy(), stack.mean(axis=0), stack.std(axis=0, ddof=1), stack.shape[0])


def aggregate(paths: Sequence[str | Path], column: str = "avg_return", label: str = "") -> Curve:
    tables = [read_metrics(p) for p in paths]
    for p, t in zip(paths, tables):
        if column not in t:
            raise AggregationError(f"{p}: no column {column!r}")
    return aggregate_columns([t["step"] for t in tables], [t[column] for t in tables], label)


def format_curve(curve: Curve) -> str:
    lines = ["step,mean,std,runs"]
    for s, m, d in zip(curve.steps, curve.mean, curve.std):
        lines.append(f"{int(s)},{m:.6f},{d:.6f},{curve.runs}")
    return "\n".join(lines) + "\n"


def read_curve(path: str | Path, label: str | None = None) -> Curve:
    rows = np.genfromtxt(path, delimiter=",", names=True)
    rows = np.atleast_1d(rows)
    runs = int(rows["runs"][0]) if len(rows) else 0
    return Curve(label if label is not None else Path(path).stem, rows["step"].astype(np.int64),
                 rows["mean"], rows["std"], runs)


def emit_plot(curves: Sequence[Curve], path: str | Path, title: str = "",
              ylabel: str = "average return", xlabel: str = "environment steps") -> Path:
    """Write an SVG of mean curves with shaded +-1 std bands.

    Output is byte-stable for fixed input: the SVG hash salt and the
    embedded date are pinned.
    """
    if not curves:
        raise PlotUsageError("no curves to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "hybrid-rl", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for c in curves:
            x = np.asarray(c.steps, dtype=np.float64)
            (line,) = ax.plot(x, c.mean, label=c.label, linewidth=1.5)
            ax.fill_between(x, c.mean - c.std, c.mean + c.std, color=line.get_color(),
                            alpha=0.2, linewidth=0)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        out = Path(path)
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
