"""Figures for experiment, verify and accountant reports.

Everything renders with the Agg backend to a file; nothing is shown.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PARAMS = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.dpi": 150,
    "savefig.bbox": "tight",
}
COLORS = ("#08589e", "#e6550d", "#31a354", "#756bb1", "#636363")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_experiment(reports: Sequence, path) -> Path:
    """Per-repetition parity gap before and after post-processing, and accuracy.

    ``reports`` are ExperimentReport instances or their dicts.
    """
    reports = [r if isinstance(r, dict) else r.to_dict() for r in reports]
    with plt.rc_context(PARAMS):
        fig, (ax_gap, ax_acc) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        for k, rep in enumerate(reports):
            reps = rep["repetitions"]
            c = COLORS[k % len(COLORS)]
            name = f'{rep["config"]["dataset"]} eps={rep["composed_budget"]["epsilon"]:g}'
            pre = [r["pre_gap"] for r in reps]
            post = [r["sp_gap"] for r in reps]
            ax_gap.scatter(pre, post, color=c, label=name)
            ax_acc.scatter([r["base_accuracy"] for r in reps], [r["accuracy"] for r in reps], color=c, label=name)
        lim = max([0.05] + [r["pre_gap"] for rep in reports for r in rep["repetitions"]]) * 1.05
        ax_gap.plot([0, lim], [0, lim], color="0.6", ls="--", lw=0.8)
        ax_gap.set_xlabel(r"decoupled gap $|\bar\alpha-\bar\beta|$")
        ax_gap.set_ylabel("post-processed SP gap (test)")
        ax_acc.set_xlabel("decoupled accuracy")
        ax_acc.set_ylabel("post-processed accuracy")
        ax_gap.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_verify(reports: Sequence, path) -> Path:
    """Empirical statistic relative to its bound, one bar per suite."""
    rows = [r if isinstance(r, dict) else r.to_dict() for r in reports]
    names = [r["suite"] for r in rows]
    ratio = []
    for r in rows:
        bound = r["bound"] + r["slack"]
        ratio.append(r["statistic"] / bound if bound > 0 else float(r["statistic"] == 0))
    with plt.rc_context(PARAMS):
        fig, ax = plt.subplots(figsize=(6.0, 0.35 * len(rows) + 1.0))
        y = np.arange(len(rows))
        ax.barh(y, ratio, color=[COLORS[0] if r["passed"] else COLORS[1] for r in rows])
        ax.axvline(1.0, color="0.3", ls="--", lw=0.8)
        ax.set_yticks(y, names)
        ax.invert_yaxis()
        ax.set_xlabel("statistic / (bound + slack)")
        fig.tight_layout()
        return _save(fig, path)


def plot_accountant(rows: Sequence[dict], path) -> Path:
    """Epsilon against noise multiplier for each accountant and delta."""
    accountants = sorted({k[4:] for r in rows for k in r if k.startswith("eps_")})
    deltas = sorted({r["delta"] for r in rows})
    with plt.rc_context(PARAMS):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        styles = ("-", "--", ":", "-.")
        for i, name in enumerate(accountants):
            for j, delta in enumerate(deltas):
                sub = sorted((r["sigma"], r[f"eps_{name}"]) for r in rows if r["delta"] == delta)
                xs, ys = zip(*sub)
                ax.plot(xs, ys, marker="o", color=COLORS[i % len(COLORS)], ls=styles[j % len(styles)],
                        label=f"{name}, delta={delta:g}")
        ax.set_xlabel(r"noise multiplier $\sigma$")
        ax.set_ylabel(r"$\varepsilon$")
        ax.set_yscale("log")
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
