"""Figure rendering for the report paths; every figure sits next to its CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_METHOD_COLORS = {
    "random": "#9e9e9e",
    "jordan": "#8c564b",
    "betweenness": "#7f7f7f",
    "sme": "#2ca02c",
    "mcmf": "#ff7f0e",
    "gnn": "#d62728",
    "gnn_da": "#e377c2",
}


def _color(method: str) -> str:
    return _METHOD_COLORS.get(method, "#1f77b4")


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def benchmark_figure(path: Path, methods, aggregated) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    xs = range(len(methods))
    vals = [aggregated[m].top_k_accuracy for m in methods]
    cis = [aggregated[m].ci_top_k or 0.0 for m in methods]
    ax.bar(xs, vals, yerr=cis, capsize=3,
           color=[_color(m) for m in methods])
    ax.set_xticks(list(xs))
    ax.set_xticklabels(methods, rotation=20)
    ax.set_ylabel(f"top-{aggregated[methods[0]].k} accuracy")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def size_breakdown_figure(path: Path, labels, methods, size_rows) -> None:
    by_key = {(r[1], r[2]): (r[3], r[5]) for r in size_rows}
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True,
                                  height_ratios=[3, 1])
    width = 0.8 / max(len(methods), 1)
    for j, m in enumerate(methods):
        xs = [i + j * width for i in range(len(labels))]
        vals = [by_key.get((m, lab), (float("nan"), 0))[0] for lab in labels]
        ax.bar(xs, vals, width=width, label=m, color=_color(m))
    counts = [by_key.get((methods[0], lab), (0, 0))[1] for lab in labels]
    ax2.bar(range(len(labels)), counts, color="#888888")
    ax.set_ylabel("top-k accuracy")
    ax.legend(fontsize=8, ncol=3)
    ax2.set_ylabel("outbreaks")
    ax2.set_xticks(range(len(labels)))
    ax2.set_xticklabels(labels)
    ax2.set_xlabel("outbreak size (fraction of nodes)")
    _save(fig, path)


def detectability_figure(path: Path, t_values, results_by_t) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax2 = ax.twinx()
    xs = range(len(t_values))
    i_frac = [results_by_t[t]["i_fraction"] for t in t_values]
    r_frac = [results_by_t[t]["r_fraction"] for t in t_values]
    ax2.bar(xs, i_frac, width=0.6, color="#fdd0a2", label="infectious")
    ax2.bar(xs, r_frac, width=0.6, bottom=i_frac, color="#c6dbef", label="recovered")
    for series in ("gnn", "random"):
        ax.plot(xs, [results_by_t[t][series] for t in t_values], marker="o",
                color=_color(series), label=series, zorder=3)
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"{t:.3g}" for t in t_values])
    ax.set_xlabel("observation time")
    ax.set_ylabel("top-k accuracy")
    ax2.set_ylabel("mean state fraction")
    ax.set_ylim(0, 1.05)
    ax2.set_ylim(0, 1.05)
    ax.set_zorder(ax2.get_zorder() + 1)
    ax.patch.set_visible(False)
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, fontsize=8, loc="upper right")
    _save(fig, path)


def scaling_figure(path: Path, grid, methods, means) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.8))
    for m in methods:
        ax.plot(grid, [means[(n, m)] for n in grid], marker="o",
                color=_color(m), label=m)
    ax.set_xscale("log")
    ax.set_xlabel("simulations per source node")
    ax.set_ylabel("top-k accuracy")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def uncertain_t_figure(path: Path, methods, means) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.8))
    width = 0.35
    xs = range(len(methods))
    for k, condition in enumerate(("fixed", "uniform4x")):
        ax.bar([x + k * width for x in xs],
               [means[(condition, m)] for m in methods], width=width,
               label=condition,
               color="#4c72b0" if condition == "fixed" else "#dd8452")
    ax.set_xticks([x + width / 2 for x in xs])
    ax.set_xticklabels(methods, rotation=15)
    ax.set_ylabel("top-k accuracy")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    _save(fig, path)


def timing_figure(path: Path, timings: dict) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    names = sorted(timings)
    ax.barh(range(len(names)), [timings[n] for n in names], color="#4c72b0")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xscale("log")
    ax.set_xlabel("seconds (wall clock)")
    ax.grid(axis="x", alpha=0.3)
    _save(fig, path)


def learning_curves_figure(path: Path, curves_csv: Path) -> None:
    with open(curves_csv, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    ax.plot(epochs, [float(r["train_loss"]) for r in rows], label="train")
    ax.plot(epochs, [float(r["val_loss"]) for r in rows], label="validation")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    ax2.plot(epochs, [float(r["train_top1"]) for r in rows], label="train")
    ax2.plot(epochs, [float(r["val_top1"]) for r in rows], label="validation")
    ax2.set_ylabel("top-1 accuracy")
    ax2.set_xlabel("epoch")
    ax2.grid(alpha=0.3)
    _save(fig, path)
