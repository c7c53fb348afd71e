"""Figures rendered next to the CSV reports.

All functions take plain sequences (so they work from report files as well
as live results) and write a PNG. The Agg backend is forced and PNG software
metadata is dropped so identical inputs give identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_PNG_META = {"Software": None}
_DPI = 100


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, metadata=_PNG_META)
    plt.close(fig)
    return path


def hourly_settlement(hours: Sequence[int], cleared_mw: Sequence[float],
                      energy_cost: Sequence[float], credit: Sequence[float],
                      score: Sequence[float], path) -> Path:
    """Cleared capacity and money flows per hour, with the performance score underneath."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 5.5), sharex=True,
                                   gridspec_kw={"height_ratios": [2, 1]})
    ax1.bar(hours, cleared_mw, color="0.8", label="cleared capacity (MW)")
    ax1.set_ylabel("MW")
    ax1b = ax1.twinx()
    ax1b.plot(hours, energy_cost, "C3-", marker=".", label="energy cost ($)")
    ax1b.plot(hours, credit, "C0-", marker=".", label="regulation credit ($)")
    ax1b.set_ylabel("$")
    handles = ax1.get_legend_handles_labels()
    more = ax1b.get_legend_handles_labels()
    ax1.legend(handles[0] + more[0], handles[1] + more[1], loc="upper left", fontsize=8)
    ax2.plot(hours, score, "k-", marker=".")
    ax2.set_ylim(-0.05, 1.05)
    ax2.set_ylabel("score")
    ax2.set_xlabel("hour")
    fig.tight_layout()
    return _save(fig, path)


def soc_histogram(buckets: Sequence[tuple[float, float | None, int]], path) -> Path:
    """Bar chart of departure SoC deviation counts; ``buckets`` are (lower, upper, count)."""
    labels = []
    for lo, hi, _ in buckets:
        labels.append(f">={lo:g}" if hi is None else f"[{lo:g},{hi:g})")
    counts = [n for _, _, n in buckets]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(counts)), counts, color="C0")
    ax.set_xticks(range(len(counts)), labels)
    ax.set_xlabel("SoC deviation at departure (%)")
    ax.set_ylabel("EVs")
    for i, n in enumerate(counts):
        ax.annotate(str(n), (i, n), ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def sweep_curves(param: str, values: Sequence[float], net_cost: Sequence[float],
                 revenue: Sequence[float], score: Sequence[float], path) -> Path:
    """Net cost, revenue and mean score against the swept parameter (failed points are NaN)."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax1.plot(values, net_cost, "C3-o", label="net cost ($)")
    ax1.plot(values, revenue, "C0-s", label="revenue ($)")
    ax1.legend(fontsize=8)
    ax1.set_ylabel("$")
    ax2.plot(values, score, "k-o")
    ax2.set_ylabel("mean score")
    ax2.set_xlabel(param)
    if param == "penalty" and len(values) and min(values) > 0:
        ax2.set_xscale("log")
    fig.tight_layout()
    return _save(fig, path)
