"""Figures rendered next to the CSV/JSON artifacts when ``--plots`` is given."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .policy import StepReport  # noqa: E402
from .testbed import RunTrace  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}

ACTION_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red")


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def _level_labels(k: int, offset: int) -> list[str]:
    return [f"P{i + offset}" for i in range(k)]


def plot_losses(run: RunTrace, path: Path, level_offset: int = 0) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        it = np.arange(1, run.losses.shape[0] + 1)
        for lvl, label in enumerate(_level_labels(run.num_levels, level_offset)):
            ax.semilogy(it, np.maximum(run.losses[:, lvl], np.finfo(float).tiny), lw=1, label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("per-level loss")
        ax.set_title(f"{run.problem_name}, mode={run.config.mode.value}")
        ax.legend(ncol=run.num_levels, frameon=False)
        return _save(fig, path)


def plot_weights(reports: Sequence[StepReport], path: Path, level_offset: int = 0) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 2.6))
        w = np.array([r.weights for r in reports]).T
        im = ax.imshow(w, aspect="auto", interpolation="nearest", cmap="viridis", vmin=1.0)
        ax.set_yticks(range(w.shape[0]), _level_labels(w.shape[0], level_offset))
        ax.set_xlabel("interval t")
        fig.colorbar(im, ax=ax, label="weight")
        return _save(fig, path)


def plot_probabilities(reports: Sequence[StepReport], path: Path) -> Path:
    """Action probability trajectory, one line per action."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.0))
        t = [r.t for r in reports]
        p = np.array([r.probabilities for r in reports])
        for k in range(p.shape[1]):
            ax.plot(t, p[:, k], color=ACTION_COLORS[k], lw=1.2, label=f"p{k}")
        ax.set_xlabel("interval t")
        ax.set_ylabel("probability")
        ax.set_ylim(0, 1)
        ax.legend(ncol=4, frameon=False)
        return _save(fig, path)


def plot_ablation(rows: Sequence[dict], path: Path) -> Path:
    ok = [r for r in rows if r["status"] == "ok"]
    groups = list(dict.fromkeys(r["group"] for r in ok)) or [""]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(groups), figsize=(3.2 * len(groups), 3.0), squeeze=False)
        for ax, group in zip(axes[0], groups):
            cells = [r for r in ok if r["group"] == group]
            ax.bar(range(len(cells)), [float(r["final_total_loss"]) for r in cells], color="0.4")
            ax.set_xticks(range(len(cells)), [r["cell"] for r in cells], rotation=45, ha="right")
            ax.set_title(group or "ablation")
            ax.set_ylabel("final total loss")
        return _save(fig, path)


def plot_run(run: RunTrace, out: Path, level_offset: int = 0) -> list[Path]:
    paths = [plot_losses(run, out / "losses.png", level_offset)]
    if run.reports:
        paths.append(plot_weights(run.reports, out / "weights.png", level_offset))
        paths.append(plot_probabilities(run.reports, out / "probabilities.png"))
    return paths


def plot_replay(reports: Sequence[StepReport], out: Path, level_offset: int = 0) -> list[Path]:
    return [
        plot_weights(reports, out / "weights.png", level_offset),
        plot_probabilities(reports, out / "probabilities.png"),
    ]
