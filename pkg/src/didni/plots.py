"""Figure rendering for the report path.

Each analysis command can drop a PNG/PDF next to its delimited output:
event-study estimates for `fit`, the threshold p-value curve for `ni-curve`
and `compare`, power curves for the calculators, and per-model summaries for
simulation grids. Everything renders through the Agg backend so headless
runs work.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .compare import EffectSummary, NiCurve
from .simlab import ScenarioResult


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_event_study(
    summary: EffectSummary, t0: int, path: str | Path, title: str = "Event study"
) -> None:
    """Per-period effect estimates with 95% bars and the average band."""
    times = sorted(summary.per_period)
    est = np.array([summary.per_period[t][0] for t in times])
    se = np.array([summary.per_period[t][1] for t in times])
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.errorbar(times, est, yerr=1.96 * se, fmt="o", capsize=3, color="#1f5fa8")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.axvline(t0 - 0.5, color="gray", linestyle=":", linewidth=1.2)
    ax.axhspan(
        summary.average - 1.96 * summary.average_se,
        summary.average + 1.96 * summary.average_se,
        color="#1f5fa8",
        alpha=0.12,
        label=f"average {summary.average:.3g}",
    )
    ax.set_xlabel("time index")
    ax.set_ylabel("treatment effect")
    ax.set_title(title)
    ax.legend(loc="best")
    _save(fig, path)


def plot_ni_curve(curve: NiCurve, path: str | Path, title: str = "Non-inferiority curve") -> None:
    """P-value against the candidate threshold, with the crossing marked."""
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(curve.deltas, curve.p_values, color="#1f5fa8")
    ax.axhline(curve.alpha, color="black", linestyle="--", linewidth=0.9)
    ax.axvline(
        curve.crossing_delta,
        color="#c23b22",
        linestyle=":",
        label=f"crossing {curve.crossing_delta:.3g}",
    )
    ax.set_xlabel("threshold (delta)")
    ax.set_ylabel("p-value for H0: difference >= delta")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend(loc="best")
    _save(fig, path)


def plot_power_curve(
    x: Sequence[float],
    power: Sequence[float],
    path: str | Path,
    xlabel: str,
    title: str = "Power",
) -> None:
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(x, power, color="#1f5fa8")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("power")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    _save(fig, path)


def plot_scenario_metric(
    results: Sequence[ScenarioResult],
    metric: str,
    path: str | Path,
) -> None:
    """One line per scenario across the fitted models (power/bias/mse/...)."""
    fig, ax = plt.subplots(figsize=(9, 5.5))
    for result in results:
        models = list(result.models)
        values = [getattr(result.models[m], metric) for m in models]
        ax.plot(models, values, marker="o", alpha=0.55, label=result.config.label())
    ax.set_xlabel("trend-difference model")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_title(f"{metric.replace('_', ' ')} by model")
    if len(results) <= 12:
        ax.legend(fontsize=7, loc="best")
    _save(fig, path)
