"""Static SVG plots: training loss, duality-gap history, ablation bars.

Output is byte-reproducible (fixed hash salt, no date metadata). Data
artists carry SVG ids: ``series`` for point series, ``bar<i>`` for bars.
"""

from __future__ import annotations

import csv
import json
import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PLOT_KINDS = ("loss", "gap", "ablation")


class PlotInputError(ValueError):
    pass


def _read_rows(path) -> list:
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise PlotInputError(f"{path}: empty input")
    if path.suffix == ".jsonl":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        rows = list(csv.DictReader(text.splitlines()))
    if not rows:
        raise PlotInputError(f"{path}: no data rows")
    return rows


def _column(rows, *names):
    for name in names:
        if name in rows[0]:
            return [float(r[name]) for r in rows]
    raise PlotInputError(f"missing column; expected one of {', '.join(names)}")


def _save(fig, out) -> None:
    matplotlib.rcParams["svg.hashsalt"] = "diffnpo"
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_loss(rows, out) -> int:
    steps = _column(rows, "step")
    loss = _column(rows, "loss")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(steps, loss, marker=".", lw=1, gid="series")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    fig.tight_layout()
    _save(fig, out)
    return len(loss)


def plot_gap(rows, out) -> int:
    gap = _column(rows, "gap")
    it = _column(rows, "iteration") if "iteration" in rows[0] else list(range(len(gap)))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.semilogy(it, [max(g, 1e-300) for g in gap], marker="o", lw=1, gid="series")
    ax.set_xlabel("iteration")
    ax.set_ylabel("duality gap")
    fig.tight_layout()
    _save(fig, out)
    return len(gap)


def plot_ablation(rows, out) -> int:
    """One bar per gamma at the median win rate; individual seeds as dots."""
    by = {}
    for r in rows:
        by.setdefault(float(r["gamma"]), []).append(float(r["winrate"]))
    gammas = sorted(by)
    meds = [statistics.median(by[g]) for g in gammas]
    labels = [f"{g:.3g}" for g in gammas]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    bars = ax.bar(range(len(gammas)), meds, color="#7a9cc6")
    for i, patch in enumerate(bars):
        patch.set_gid(f"bar{i}")
    for i, g in enumerate(gammas):
        ax.plot([i] * len(by[g]), by[g], "k.", ms=3)
    ax.axhline(0.5, color="grey", lw=0.8, ls="--")
    ax.set_xticks(range(len(gammas)), labels)
    ax.set_xlabel("gamma")
    ax.set_ylabel("win rate vs reference")
    fig.tight_layout()
    _save(fig, out)
    return len(gammas)


def plot(kind: str, src, out) -> int:
    """Render ``src`` (CSV or JSONL) as ``kind``; returns the number of plotted points or bars."""
    if kind not in PLOT_KINDS:
        raise PlotInputError(f"unknown plot kind {kind!r}; choose from {', '.join(PLOT_KINDS)}")
    rows = _read_rows(src)
    return {"loss": plot_loss, "gap": plot_gap, "ablation": plot_ablation}[kind](rows, out)
