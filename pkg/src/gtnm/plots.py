"""Report figures rendered to PNG files next to the delimited outputs.

Uses the non-interactive backend; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .corpus import OverlapReport  # noqa: E402


def overlap_figure(report: OverlapReport, path: str | Path) -> Path:
    """Grouped bars: share of targets with any / all subtokens present,
    per context level."""
    levels = list(report.levels)
    any_pct = [report.levels[l].pct_any or 0.0 for l in levels]
    all_pct = [report.levels[l].pct_all or 0.0 for l in levels]
    xs = range(len(levels))
    fig, ax = plt.subplots(figsize=(7.5, 4.2))
    width = 0.38
    ax.bar([x - width / 2 for x in xs], any_pct, width, label="any subtoken")
    ax.bar([x + width / 2 for x in xs], all_pct, width, label="all subtokens")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([l.replace("_", "\n") for l in levels])
    ax.set_ylabel("% of method names")
    ax.set_ylim(0, 100)
    ax.set_title(f"Name subtoken overlap with context ({report.n} methods)")
    ax.legend()
    for x, v in zip(xs, any_pct):
        ax.text(x - width / 2, v + 1, f"{v:.0f}", ha="center", fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def training_figure(history: Sequence[dict], path: str | Path) -> Path:
    """Loss curves plus validation exact match over epochs."""
    if not history:
        raise ValueError("no history rows to plot")
    epochs = [row["epoch"] for row in history]
    train = [row["train_loss"] for row in history]
    valid = [row.get("valid_loss") for row in history]
    em = [row.get("valid_em") for row in history]
    has_valid = any(v is not None for v in valid)
    has_em = any(v is not None for v in em)
    ncols = 2 if has_em else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.5 * ncols, 4.0), squeeze=False)
    ax = axes[0][0]
    ax.plot(epochs, train, label="train")
    if has_valid:
        ax.plot(epochs, valid, label="valid")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Cross-entropy")
    ax.legend()
    if has_em:
        ax2 = axes[0][1]
        ax2.plot(epochs, em, color="tab:green")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("exact match")
        ax2.set_ylim(-0.02, 1.02)
        ax2.set_title("Validation exact match")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def eval_figure(rows: Sequence[dict], path: str | Path) -> Path:
    """Confidence-versus-F1 scatter and exact match by target length.

    Each row needs pcs, f1, em, and the target subtoken count.
    """
    if not rows:
        raise ValueError("no evaluation rows to plot")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.2))
    ax1.scatter([r["pcs"] for r in rows], [r["f1"] for r in rows],
                s=14, alpha=0.6, edgecolors="none")
    ax1.set_xlabel("confidence (top-two margin)")
    ax1.set_ylabel("subtoken F1")
    ax1.set_xlim(-0.02, 1.02)
    ax1.set_ylim(-0.02, 1.02)
    ax1.set_title("Confidence vs F1")

    by_len: dict[int, list[float]] = {}
    for r in rows:
        by_len.setdefault(len(r["target"]), []).append(float(r["em"]))
    lens = sorted(by_len)
    ems = [sum(by_len[l]) / len(by_len[l]) for l in lens]
    counts = [len(by_len[l]) for l in lens]
    ax2.bar([str(l) for l in lens], ems, color="tab:blue")
    for i, (v, c) in enumerate(zip(ems, counts)):
        ax2.text(i, v + 0.02, f"n={c}", ha="center", fontsize=8)
    ax2.set_xlabel("target length (subtokens)")
    ax2.set_ylabel("exact match")
    ax2.set_ylim(0, 1.1)
    ax2.set_title("Exact match by name length")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
