"""Figure rendering for the report path.

Only the `report` CLI subcommand imports this; the evaluation module itself
emits data only.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import GroupKey, group_label


def plot_success_rates(
    sr_by_group: dict[GroupKey, dict], path: str | Path, title: str = "Success rate by length group"
) -> None:
    groups = sorted(sr_by_group)
    labels = [group_label(g) for g in groups]
    values = [sr_by_group[g]["sr"] if sr_by_group[g]["sr"] is not None else 0.0 for g in groups]
    missing = [sr_by_group[g]["sr"] is None for g in groups]
    fig, ax = plt.subplots(figsize=(1.2 * max(4, len(groups)), 3.2))
    bars = ax.bar(labels, values, color="#4878d0")
    for bar, empty in zip(bars, missing):
        if empty:
            bar.set_color("#cccccc")
            bar.set_hatch("//")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("SR")
    ax.set_xlabel("shortest-path length group")
    ax.set_title(title)
    for bar, value, empty in zip(bars, values, missing):
        ax.text(
            bar.get_x() + bar.get_width() / 2,
            bar.get_height() + 0.02,
            "no data" if empty else f"{value:.2f}",
            ha="center",
            fontsize=8,
        )
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_error_distribution(
    errors_by_group: dict[GroupKey, dict], path: str | Path, title: str = "Error classes by length group"
) -> None:
    groups = sorted(errors_by_group)
    labels = [group_label(g) for g in groups]
    classes = [c for c in next(iter(errors_by_group.values()))["error_share"]]
    colors = {"NonShortest": "#ee854a", "NotReached": "#d65f5f", "InvalidMove": "#956cb4", "Malformed": "#8c8c8c"}
    fig, ax = plt.subplots(figsize=(1.2 * max(4, len(groups)), 3.2))
    bottoms = [0.0] * len(groups)
    for cls in classes:
        shares = [errors_by_group[g]["error_share"][cls] or 0.0 for g in groups]
        ax.bar(labels, shares, bottom=bottoms, label=cls, color=colors.get(cls))
        bottoms = [b + s for b, s in zip(bottoms, shares)]
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("share of errors")
    ax.set_xlabel("shortest-path length group")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_decomposition(stats_by_group: dict[GroupKey, dict], path: str | Path) -> None:
    groups = sorted(stats_by_group)
    labels = [group_label(g) for g in groups]
    series = [
        ("p_long", "P(long)"),
        ("p_both", "P(both halves)"),
        ("p_long_given_both", "P(long | both halves)"),
    ]
    fig, ax = plt.subplots(figsize=(1.5 * max(4, len(groups)), 3.2))
    width = 0.25
    for k, (key, label) in enumerate(series):
        xs = [i + (k - 1) * width for i in range(len(groups))]
        ys = [stats_by_group[g][key] or 0.0 for g in groups]
        ax.bar(xs, ys, width=width, label=label)
    ax.set_xticks(range(len(groups)))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("probability")
    ax.set_title("Long-path success vs. subpath composition")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
