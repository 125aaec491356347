"""Delimited outputs and matplotlib figures written next to them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_history_csv(history, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "split", "value"])
        for epoch, split, value in history:
            w.writerow([epoch, split, f"{value:.10g}"])
    return path


def write_residuals_csv(pairs, predictions, path) -> Path:
    path = Path(path)
    ids = [s.id for s in pairs.corpus]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id_a", "id_b", "edit_distance", "predicted", "residual"])
        for a, b, ed, p in zip(pairs.a, pairs.b, pairs.ed, predictions):
            w.writerow([ids[a], ids[b], int(ed), f"{p:.6f}", f"{ed - p:.6f}"])
    return path


def write_ranks_csv(queries, ranks, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["query_id", "rank"])
        for q, r in zip(queries, ranks):
            w.writerow([q.id, int(r)])
    return path


def plot_history(history, path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for split in dict.fromkeys(h[1] for h in history):
        pts = [(e, v) for e, s, v in history if s == split]
        ax.plot([p[0] for p in pts], [p[1] for p in pts], label=split)
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_edit_distance_scatter(ed, predictions, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(ed, predictions, s=6, alpha=0.5)
    hi = float(max(np.max(ed), np.max(predictions), 1))
    ax.plot([0, hi], [0, hi], color="grey", lw=1, ls="--")
    ax.set_xlabel("edit distance")
    ax.set_ylabel("predicted")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_rank_histogram(ranks, n_refs: int, path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(ranks, bins=np.arange(1, n_refs + 2) - 0.5)
    ax.set_xlabel("rank of true closest reference")
    ax.set_ylabel("queries")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
