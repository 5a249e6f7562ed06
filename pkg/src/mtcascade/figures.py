"""Matplotlib rendering for replay reports and threshold sweeps.

Figures are written next to the delimited output by the CLI report and
sweep paths. Rendering is headless (Agg) and deterministic.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalharness import ReplayReport, SweepPoint


def save_report_figure(reports: Sequence[ReplayReport], path) -> None:
    """Grouped bars of mean quality per policy, LLM usage as point markers."""
    labels = sorted({label for r in reports for label in r.groups}) or ["all"]
    policies = [r.policy for r in reports]

    fig, (ax_quality, ax_usage) = plt.subplots(
        2, 1, figsize=(max(6.0, 1.8 * len(labels) * max(1, len(policies)) / 2), 6.4), sharex=True
    )
    x = np.arange(len(labels))
    width = 0.8 / max(len(policies), 1)

    for index, report in enumerate(reports):
        if report.groups:
            quality = [report.groups[l].mean_quality if l in report.groups else np.nan for l in labels]
            usage = [report.groups[l].llm_p * 100 if l in report.groups else np.nan for l in labels]
        else:
            quality = [report.mean_quality]
            usage = [report.llm_p * 100]
        offset = (index - (len(policies) - 1) / 2) * width
        ax_quality.bar(x + offset, quality, width=width, label=report.policy)
        ax_usage.plot(x + offset, usage, marker="o", linestyle="", label=report.policy)

    ax_quality.set_ylabel("mean quality")
    ax_usage.set_ylabel("LLM usage (%)")
    ax_usage.set_ylim(-5, 105)
    ax_usage.set_xticks(x)
    ax_usage.set_xticklabels(labels, rotation=20, ha="right")
    ax_quality.legend(fontsize=8)
    ax_quality.set_title("routing policies: quality and LLM usage")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(points: Sequence[SweepPoint], path, policy: str = "") -> None:
    """Quality-versus-usage frontier traced by the control parameter."""
    ordered = sorted(points, key=lambda p: p.llm_p)
    usage = [p.llm_p * 100 for p in ordered]
    quality = [p.mean_quality for p in ordered]

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(usage, quality, marker="o", color="tab:blue")
    for point in ordered:
        ax.annotate(
            f"{point.control:.3g}",
            (point.llm_p * 100, point.mean_quality),
            textcoords="offset points",
            xytext=(4, 4),
            fontsize=7,
        )
    ax.set_xlabel("LLM usage (%)")
    ax.set_ylabel("mean quality")
    title = "quality vs. LLM usage"
    if policy:
        title += f" ({policy} control sweep)"
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
