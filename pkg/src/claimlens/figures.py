"""Matplotlib figure rendering for the CLI report paths.

The analytics and evaluation engines emit delimited data only; this module
turns those tables into PNG files written alongside them. Uses the Agg
backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import AnalyticsRow, ViewpointRow  # noqa: E402


def render_per_viewpoint_f1(rows: Sequence[ViewpointRow], path: Path, title: str = "") -> Path:
    """Grouped bar chart of per-viewpoint F1 under both averaging modes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = [r.viewpoint_id for r in rows]
    macro = [r.macro_two_class.f1 * 100 for r in rows]
    positive = [r.positive_class.f1 * 100 for r in rows]
    x = range(len(ids))
    width = 0.38
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar([i - width / 2 for i in x], macro, width, label="macro-two-class")
    ax.bar([i + width / 2 for i in x], positive, width, label="positive-class")
    ax.set_xticks(list(x))
    ax.set_xticklabels([str(i) for i in ids])
    ax.set_xlabel("viewpoint")
    ax.set_ylabel("F1 (%)")
    ax.set_ylim(0, 100)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_distribution(
    rows: Sequence[AnalyticsRow],
    dimension: str,
    path: Path,
    viewpoint_titles: Mapping[int, str] | None = None,
) -> Path:
    """Stacked share-per-viewpoint bars, one bar per dimension value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = sorted({r.dimension_value for r in rows})
    viewpoint_ids = sorted({r.viewpoint_id for r in rows})
    share = {(r.dimension_value, r.viewpoint_id): r.share for r in rows}
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(values)), 4.5))
    bottoms = [0.0] * len(values)
    for vid in viewpoint_ids:
        heights = [share.get((v, vid), 0.0) for v in values]
        label = (viewpoint_titles or {}).get(vid, f"viewpoint {vid}")
        ax.bar(values, heights, bottom=bottoms, label=label)
        bottoms = [b + h for b, h in zip(bottoms, heights)]
    ax.set_ylabel("share of positive instances")
    ax.set_xlabel(dimension)
    ax.set_ylim(0, 1)
    ax.legend(fontsize="small", ncol=2)
    fig.autofmt_xdate(rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
