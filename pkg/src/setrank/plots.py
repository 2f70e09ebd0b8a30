"""Figures for simulation summaries (rows produced by ``simulate.aggregate``)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_inferences_vs_c(summary: Sequence[dict], path: str | Path) -> Path | None:
    """Mean oracle calls against set size, one line per sorting method."""
    series: dict[str, list[tuple[int, float, float]]] = defaultdict(list)
    for row in summary:
        if row.get("c") is None or row["noise_p"] != 0 or row["init"] != "asis":
            continue
        series[row["method"]].append((row["c"], row["inferences_mean"], row["inferences_std"]))
    if not series:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method, points in sorted(series.items()):
            points.sort()
            xs, ys, es = zip(*points)
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=2, label=method)
        ax.set_xlabel("documents compared per call (c)")
        ax.set_ylabel("oracle calls per query")
        ax.legend()
        return _save(fig, Path(path))


def plot_recall_by_init(summary: Sequence[dict], path: str | Path) -> Path | None:
    """Top-k recall per method, grouped by initial ordering."""
    inits = sorted({row["init"] for row in summary})
    labels = []
    table: dict[str, dict[str, float]] = {}
    for row in summary:
        label = row["method"] if row.get("c") in (None, 2) else f"{row['method']} c={row['c']}"
        if row["noise_p"]:
            label += f" p={row['noise_p']:g}"
        if label not in table:
            labels.append(label)
            table[label] = {}
        table[label][row["init"]] = row["recall_mean"]
    if not labels:
        return None
    width = 0.8 / max(1, len(inits))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.9 * len(labels) + 2), 3.6))
        for j, init in enumerate(inits):
            xs = [i + j * width for i in range(len(labels))]
            ax.bar(xs, [table[l].get(init, 0.0) for l in labels], width, label=init)
        ax.set_xticks([i + width * (len(inits) - 1) / 2 for i in range(len(labels))])
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("top-k recall")
        ax.legend(title="initial order")
        return _save(fig, Path(path))


def plot_tradeoff(summary: Sequence[dict], path: str | Path) -> Path | None:
    """Recall against mean calls; each point annotated with its c (or r)."""
    points = [row for row in summary if row["init"] == "asis"]
    if not points:
        return None
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        by_method: dict[str, list[dict]] = defaultdict(list)
        for row in points:
            by_method[row["method"]].append(row)
        for method, rows in sorted(by_method.items()):
            xs = [r["inferences_mean"] for r in rows]
            ys = [r["recall_mean"] for r in rows]
            ax.scatter(xs, ys, label=method, s=18)
            for r, x, y in zip(rows, xs, ys):
                tag = r["c"] if r.get("c") is not None else r["r"]
                ax.annotate(str(tag), (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
        ax.set_xscale("log")
        ax.set_xlabel("oracle calls per query")
        ax.set_ylabel("top-k recall")
        ax.legend()
        return _save(fig, Path(path))
