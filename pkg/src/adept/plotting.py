"""Bar charts for tallies and comparisons.

Uses the object-oriented matplotlib API with the Agg canvas so nothing
depends on a display or on pyplot's global state.
"""
from __future__ import annotations

import os
from collections.abc import Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .analysis import ComparisonReport
from .config import PolicyOption
from .records import Tally


def _save(fig: Figure, path: str | os.PathLike) -> None:
    FigureCanvasAgg(fig)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=120, metadata={"Software": None})


def _tick_labels(options: Sequence[PolicyOption], abstentions: bool) -> list[str]:
    labels = [f"Option {o.id}" for o in options]
    return labels + ["Abstained"] if abstentions else labels


def plot_tally(
    tally: Tally,
    options: Sequence[PolicyOption],
    path: str | os.PathLike,
    title: str = "Final vote tally",
) -> None:
    """One bar per option (plus abstentions when present); the majority bar is shaded."""
    show_abstain = tally.abstentions > 0
    values = [tally.counts.get(o.id, 0) for o in options]
    colours = ["tab:green" if o.id == tally.majority_option else "tab:blue" for o in options]
    if show_abstain:
        values.append(tally.abstentions)
        colours.append("tab:gray")
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot()
    bars = ax.bar(_tick_labels(options, show_abstain), values, color=colours)
    ax.bar_label(bars)
    ax.set_ylabel("Votes")
    ax.set_ylim(0, max(tally.panel_size, 1) + 0.5)
    ax.set_title(title)
    _save(fig, path)


def plot_comparison(report: ComparisonReport, path: str | os.PathLike) -> None:
    """Grouped bars: both debates' votes per option."""
    show_abstain = bool(report.tally_a.abstentions or report.tally_b.abstentions)
    labels = _tick_labels(report.options, show_abstain)
    a = [report.tally_a.counts.get(o.id, 0) for o in report.options]
    b = [report.tally_b.counts.get(o.id, 0) for o in report.options]
    if show_abstain:
        a.append(report.tally_a.abstentions)
        b.append(report.tally_b.abstentions)
    xs = range(len(labels))
    width = 0.38
    fig = Figure(figsize=(7.2, 4.2))
    ax = fig.add_subplot()
    bars_a = ax.bar([x - width / 2 for x in xs], a, width, label=report.label_a)
    bars_b = ax.bar([x + width / 2 for x in xs], b, width, label=report.label_b)
    ax.bar_label(bars_a)
    ax.bar_label(bars_b)
    ax.set_xticks(list(xs), labels)
    ax.set_ylabel("Votes")
    top = max(report.tally_a.panel_size, report.tally_b.panel_size, 1)
    ax.set_ylim(0, top + 0.5)
    ax.set_title(report.summary_line)
    ax.legend()
    _save(fig, path)
