"""Matplotlib rendering of run reports to image files.

All figures are written straight to disk (Agg backend, no display).  Figures
accompany the delimited artifacts; they are for inspection and are not part
of the byte-reproducibility contract.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def convergence_figure(records, path, blank_fitness: float | None = None) -> None:
    """Best/mean fitness per generation, with the mutation-rate schedule."""
    gens = [r["generation"] if isinstance(r, dict) else r.generation for r in records]
    best = [r["best_fitness"] if isinstance(r, dict) else r.best_fitness for r in records]
    mean = [r["mean_fitness"] if isinstance(r, dict) else r.mean_fitness for r in records]
    rate = [r["mutation_rate"] if isinstance(r, dict) else r.mutation_rate for r in records]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(gens, best, color="tab:blue", label="best fitness")
    ax.plot(gens, mean, color="tab:cyan", alpha=0.7, label="mean fitness")
    if blank_fitness is not None and blank_fitness > 0:
        ax.axhline(blank_fitness, color="gray", linestyle="--", label="blank mask")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness (counts / monitor counts)")
    ax.set_yscale("log")
    ax.legend(loc="lower right", fontsize=8)
    ax2 = ax.twinx()
    ax2.plot(gens, rate, color="tab:red", alpha=0.4)
    ax2.set_ylabel("mutation rate", color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def intensity_figure(maps: dict, path) -> None:
    """Side-by-side output-plane intensity maps (log color scale)."""
    n = len(maps)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 4))
    if n == 1:
        axes = [axes]
    floor = None
    for data in maps.values():
        positive = data[data > 0]
        if positive.size:
            low = float(positive.min())
            floor = low if floor is None else min(floor, low)
    floor = floor or 1e-30
    for ax, (label, data) in zip(axes, maps.items()):
        shown = np.maximum(data, floor)
        im = ax.imshow(shown, norm=matplotlib.colors.LogNorm(vmin=floor, vmax=shown.max()))
        ax.set_title(label, fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def keyrate_comparison_figure(report, path) -> None:
    """Computed vs reference secure key rate per table row."""
    entries = report.entries
    labels = [e.label for e in entries]
    computed = [e.result.rate for e in entries]
    reference = [e.reference_rate for e in entries]

    x = np.arange(len(entries))
    fig, ax = plt.subplots(figsize=(max(7, 0.55 * len(entries)), 4.5))
    ax.scatter(x, computed, marker="o", color="tab:blue", label="computed", zorder=3)
    ref_x = [i for i, r in enumerate(reference) if r is not None]
    ref_y = [r for r in reference if r is not None]
    ax.scatter(ref_x, ref_y, marker="x", color="tab:red", label="reference", zorder=3)
    positive = [v for v in computed + ref_y if v and v > 0]
    if positive:
        ax.set_yscale("log")
        ax.set_ylim(min(positive) * 0.3, max(positive) * 3)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("secure key rate (per pulse)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def skr_vs_loss_figure(points, path) -> None:
    """Secure key rate against total channel loss for a session sweep.

    ``points`` is a list of dicts with keys total_loss_db and rate.
    """
    loss = [p["total_loss_db"] for p in points]
    rate = [p["rate"] for p in points]
    fig, ax = plt.subplots(figsize=(6, 4.2))
    positive = [(l, r) for l, r in zip(loss, rate) if r > 0]
    zero = [(l, r) for l, r in zip(loss, rate) if r <= 0]
    if positive:
        ax.semilogy([p[0] for p in positive], [p[1] for p in positive], "o-", color="tab:blue")
    if zero:
        bottom = min((p[1] for p in positive), default=1e-9) * 0.3
        ax.plot([p[0] for p in zero], [bottom] * len(zero), "v", color="tab:gray", label="no key")
        ax.legend(fontsize=8)
    ax.set_xlabel("total loss (dB)")
    ax.set_ylabel("secure key rate (per pulse)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
