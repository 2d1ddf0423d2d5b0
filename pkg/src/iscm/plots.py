"""Figure rendering for the command-line workflow.

Figures are written next to the delimited output as PNG files. Every plot
is fully determined by the run's inputs; no timestamps or environment
details are drawn.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .inference import PlaceboResult
from .panel import PanelDataset
from .scm import ScmFit
from .solver import EffectSeries

__all__ = [
    "save_trend_figure",
    "save_gap_figure",
    "save_effect_figure",
    "save_ratio_figure",
    "save_outcome_figure",
]

_FIGSIZE = (8.0, 5.0)


def _x(panel: PanelDataset):
    try:
        return [float(t) for t in panel.periods]
    except (TypeError, ValueError):
        return list(range(len(panel.periods)))


def _cut_line(ax, panel: PanelDataset, x):
    ax.axvline(x[len(panel.pre_indices) - 1], color="grey", linestyle=":", linewidth=1)


def save_trend_figure(path, panel: PanelDataset, fits: dict[str, ScmFit]) -> None:
    """Actual outcome path of one unit against one or more synthetic paths."""
    target = next(iter(fits.values())).target
    x = _x(panel)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(x, panel.outcome_row(target), color="black", linewidth=2, label=target)
    for label, fit in fits.items():
        ax.plot(x, fit.synthetic_path, linewidth=1.5, linestyle="--", label=label)
    _cut_line(ax, panel, x)
    ax.set_xlabel("period")
    ax.set_ylabel("outcome")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_gap_figure(path, panel: PanelDataset, fit: ScmFit) -> None:
    """Observed-minus-synthetic gap over all periods for one fit."""
    x = _x(panel)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.axhline(0.0, color="grey", linewidth=1)
    ax.plot(x, fit.gaps(panel), color="black", linewidth=1.5)
    _cut_line(ax, panel, x)
    ax.set_xlabel("period")
    ax.set_ylabel(f"gap for {fit.target}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_effect_figure(
    path, panel: PanelDataset, unit: str, series: dict[str, EffectSeries]
) -> None:
    """Post-period effect series (naive / corrected / restricted) for one unit."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.axhline(0.0, color="grey", linewidth=1)
    for label, s in series.items():
        if s is None:
            continue
        try:
            x = [float(t) for t in s.periods]
        except (TypeError, ValueError):
            x = list(range(len(s.periods)))
        ax.plot(x, s.values, marker="o", markersize=3, linewidth=1.5, label=label)
    ax.set_xlabel("period")
    ax.set_ylabel(f"estimated effect on {unit}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_ratio_figure(path, result: PlaceboResult) -> None:
    """Horizontal bar chart of post/pre RMSPE ratios, target highlighted."""
    ordered = sorted(result.records, key=lambda r: r.rank, reverse=True)
    units = [r.unit for r in ordered]
    ratios = [r.ratio for r in ordered]
    colors = ["firebrick" if r.unit == result.target else "steelblue" for r in ordered]
    fig, ax = plt.subplots(figsize=(8.0, 0.4 * len(units) + 1.5))
    ax.barh(np.arange(len(units)), ratios, color=colors)
    ax.set_yticks(np.arange(len(units)))
    ax.set_yticklabels(units)
    ax.set_xlabel("post/pre RMSPE ratio")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_outcome_figure(path, panel: PanelDataset, highlight: str | None = None) -> None:
    """All unit outcome paths, optionally highlighting one unit."""
    x = _x(panel)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for i, unit in enumerate(panel.units):
        if unit == highlight:
            ax.plot(x, panel.outcomes[i], color="black", linewidth=2, label=unit)
        else:
            ax.plot(x, panel.outcomes[i], color="steelblue", linewidth=0.8, alpha=0.6)
    _cut_line(ax, panel, x)
    ax.set_xlabel("period")
    ax.set_ylabel("outcome")
    if highlight:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
