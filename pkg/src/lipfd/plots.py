"""Figure rendering for scenario bundles.

Renders residual traces and windowed evaluations (with threshold lines)
to PNG files next to the CSV output.  Figures carry no timestamp or
software metadata so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .residuals import EvaluationTrace, ResidualTrace, ThresholdSet

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Software": None}}


def _downsample(n_rows: int, max_points: int = 4000) -> slice:
    step = max(1, n_rows // max_points)
    return slice(None, None, step)


def plot_residual(trace: ResidualTrace, path, title: str | None = None) -> None:
    t = trace.grid.times()
    sl = _downsample(t.shape[0])
    fig, axes = plt.subplots(trace.r, 1, sharex=True, figsize=(7, 2.2 * trace.r))
    axes = np.atleast_1d(axes)
    for c, ax in enumerate(axes):
        ax.plot(t[sl], trace.values[sl, c], lw=0.7)
        ax.set_ylabel(f"r{c+1}")
        ax.grid(True, alpha=0.3)
    axes[-1].set_xlabel("time [s]")
    axes[0].set_title(title or f"{trace.kind} residual")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def plot_evaluation(evaluation: EvaluationTrace, thresholds: ThresholdSet | None,
                    path, title: str | None = None) -> None:
    t = evaluation.grid.times()[:evaluation.J.shape[0]]
    sl = _downsample(t.shape[0])
    r = evaluation.r
    fig, axes = plt.subplots(r, 1, sharex=True, figsize=(7, 2.2 * r))
    axes = np.atleast_1d(axes)
    for c, ax in enumerate(axes):
        ax.plot(t[sl], evaluation.J[sl, c], lw=0.8, label=f"J{c+1}")
        if thresholds is not None:
            ax.axhline(thresholds.J_th[c], color="tab:red", ls="--", lw=0.8,
                       label=f"Jth{c+1}")
        positive = evaluation.J[sl, c][evaluation.J[sl, c] > 0]
        if positive.size and positive.max() / max(positive.min(), 1e-300) > 1e3:
            ax.set_yscale("log")
        ax.set_ylabel(f"J{c+1}")
        ax.grid(True, alpha=0.3)
        ax.legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("time [s]")
    axes[0].set_title(title or "residual evaluation")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
