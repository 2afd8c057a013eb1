"""Figure rendering for the report path: every CSV the CLI writes gets a
matplotlib PNG next to it."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_sparsity_report(report, path: str):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(["near-zero fraction", "mass concentration"],
           [report.near_zero_fraction, report.mass_concentration],
           color=["tab:blue", "tab:orange"])
    ax.set_ylim(0, 1)
    ax.set_title(f"weight sparsity ({report.matrix}, "
                 f"tau={report.threshold:g}, q={report.quantile:g})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ics_trace(rows, path: str):
    """rows: (step, layer, view, sparsity, mean_abs)."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    keys = sorted({(r[1], r[2]) for r in rows})
    for layer, view in keys:
        series = [(r[0], r[3], r[4]) for r in rows
                  if r[1] == layer and r[2] == view]
        steps = [s for s, _, _ in series]
        ax1.plot(steps, [sp for _, sp, _ in series],
                 label=f"{layer}/v{view}")
        ax2.plot(steps, [ma for _, _, ma in series],
                 label=f"{layer}/v{view}")
    ax1.set_xlabel("step")
    ax1.set_ylabel("activation sparsity")
    ax2.set_xlabel("step")
    ax2.set_ylabel("mean |activation|")
    ax1.legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_view_similarity(sim: np.ndarray, path: str):
    fig, ax = plt.subplots(figsize=(4, 3.4))
    im = ax.imshow(sim, vmin=-1, vmax=1, cmap="coolwarm")
    fig.colorbar(im, ax=ax)
    ax.set_title("pairwise view cosine similarity")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep(result, path: str):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    xs = [r["value"] for r in result.rows]
    ax1.plot(xs, [r["val_auc"] for r in result.rows], marker="o")
    ax1.set_xlabel(result.axis)
    ax1.set_ylabel("val AUC")
    ax2.plot(xs, [r["sparsity"] for r in result.rows], marker="o",
             color="tab:orange")
    ax2.set_xlabel(result.axis)
    ax2.set_ylabel("sparsity")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation(result, path: str):
    fig, ax = plt.subplots(figsize=(6, 3.2))
    names = [r["variant"] for r in result.rows]
    deltas = [r["delta_auc"] for r in result.rows]
    ax.bar(names, deltas, color="tab:blue")
    ax.axhline(0, color="k", lw=0.8)
    ax.set_ylabel("delta AUC vs full SSR-D")
    ax.tick_params(axis="x", labelrotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics_history(history, path: str):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    epochs = [h["epoch"] for h in history]
    ax1.plot(epochs, [h["train_loss"] for h in history], marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax2.plot(epochs, [h["val_auc"] for h in history], marker="o",
             color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("val AUC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
