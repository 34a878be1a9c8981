"""Figures written next to the report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_COLORS = {"genuine_bug": "#c0392b", "fp_environmental": "#7f8c8d", "fp_allowed": "#2980b9",
           "fp_semantic_equivalent": "#27ae60"}


def plot_verdicts(report: dict, path: str | Path) -> None:
    """Bar chart of divergence counts per verdict class."""
    counts = report["divergences"]["by_verdict"]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = list(counts)
    bars = ax.bar(names, [counts[n] for n in names], color=[_COLORS.get(n, "#555") for n in names])
    ax.bar_label(bars)
    ax.set_ylabel("divergences")
    ax.set_title("Divergences by verdict")
    ax.tick_params(axis="x", labelrotation=15)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_fdr(report: dict, path: str | Path) -> None:
    """FDR with and without filtering when labels exist, else genuine findings per method."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    metrics = report.get("metrics")
    if metrics:
        labels = ["without filter", "with filter"]
        values = [metrics["without_filter"]["fdr_percent"], metrics["with_filter"]["fdr_percent"]]
        bars = ax.bar(labels, [v or 0 for v in values], color=["#7f8c8d", "#27ae60"])
        ax.bar_label(bars, labels=["n/a" if v is None else f"{v:.2f}%" for v in values])
        ax.set_ylim(0, 100)
        ax.set_ylabel("false discovery rate (%)")
        ax.set_title("False discovery rate")
    else:
        per_method: dict[str, int] = {}
        for f in report["findings"]:
            per_method[f["method"]] = per_method.get(f["method"], 0) + 1
        names = sorted(per_method) or ["(none)"]
        bars = ax.barh(names, [per_method.get(n, 0) for n in names], color="#c0392b")
        ax.bar_label(bars)
        ax.set_xlabel("deduplicated genuine findings")
        ax.set_title("Genuine findings per method")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
