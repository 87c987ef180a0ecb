"""Figure rendering for CLI reports.

Every report path of the command-line front end can write a figure next to
its delimited output: log-Bayes-factor boxplots for studies, curve plots for
prior sweeps, a heatmap for the writer distance matrix and a contour plot
for rendered loops. Plotting stays out of the library modules; this is the
only module that imports matplotlib, with the Agg backend so headless runs
work.
"""

from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .contour import PolarContour
from .experiments import StudyReport


def study_boxplot(report: StudyReport, path: str) -> None:
    """Boxplot of per-case log BF grouped by (model, scope)."""
    grouped: dict[str, list[float]] = defaultdict(list)
    for case in report.cases:
        if not case.failed and math.isfinite(case.log_bf):
            grouped[f"{case.model_id}/{case.scope}"].append(case.log_bf)
    labels = sorted(grouped)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(labels) + 1.5), 4.0))
    if labels:
        ax.boxplot([grouped[k] for k in labels], tick_labels=labels)
    ax.axhline(0.0, color="crimson", lw=0.8, ls="--")
    ax.set_ylabel("log BF")
    ax.set_title(f"{report.kind} comparisons")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def subsample_boxplot(report: StudyReport, path: str) -> None:
    """Per-case spread of log BF across background subsamples, with the
    full-background reference marked."""
    cases = report.subsample
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(cases) + 1.5), 4.0))
    if cases:
        data = [list(c.log_bfs) for c in cases]
        labels = [f"{'-'.join(str(w) for w in c.writers)}\n{c.model_id}"
                  for c in cases]
        ax.boxplot(data, tick_labels=labels)
        for i, c in enumerate(cases, start=1):
            if math.isfinite(c.reference_log_bf):
                ax.plot(i, c.reference_log_bf, marker="*", color="black", ms=9)
    ax.axhline(0.0, color="crimson", lw=0.8, ls="--")
    ax.set_ylabel("log BF")
    ax.set_title("background subsampling sensitivity (star = full background)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_curve(report: StudyReport, path: str) -> None:
    """Mean log BF against the swept prior parameter, one line per model."""
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for model, curve in sorted(report.curves.items()):
        if model == "slopes" or not isinstance(curve, dict):
            continue
        xs = sorted(curve)
        ax.plot(xs, [curve[x] for x in xs], marker="o", label=model)
    ax.axhline(0.0, color="crimson", lw=0.8, ls="--")
    ax.set_xlabel(report.kind.replace("sweep-", ""))
    ax.set_ylabel("mean log BF")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def distance_heatmap(matrix: np.ndarray, writers, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    im = ax.imshow(matrix, cmap="viridis")
    ax.set_xticks(range(len(writers)), [str(w) for w in writers])
    ax.set_yticks(range(len(writers)), [str(w) for w in writers])
    ax.set_xlabel("writer")
    ax.set_ylabel("writer")
    fig.colorbar(im, ax=ax, label="mean Mahalanobis distance (sqrt)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def contour_figure(pc: PolarContour, path: str) -> None:
    x = pc.r * np.cos(pc.phi)
    y = pc.r * np.sin(pc.phi)
    x = np.append(x, x[0])
    y = np.append(y, y[0])
    fig, ax = plt.subplots(figsize=(4.0, 4.0))
    ax.plot(x, y, lw=1.2)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
