"""Figures for runs, sweeps and profiles, written as PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss_curves(records: dict, path) -> Path:
    """records: label -> RunRecord."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rec in records.items():
        ax.plot(rec.losses(), label=label, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def plot_grad_scales(record, path) -> Path:
    """Largest and smallest per-layer Scale(G) at each step."""
    steps = [s["step"] for s in record.steps]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(steps, [s["g_scale_max"] for s in record.steps], label="max over layers")
    ax.semilogy(steps, [s["g_scale_min"] for s in record.steps], label="min over layers")
    ax.set_xlabel("step")
    ax.set_ylabel("Scale(G)")
    ax.legend()
    return _save(fig, path)


def plot_ku_curve(summary: list[dict], path) -> Path:
    rows = sorted(summary, key=lambda r: r["k_U"])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar([r["k_U"] for r in rows], [r["mean_miou"] for r in rows],
                yerr=[r["std_miou"] for r in rows], marker="o", capsize=3)
    ax.set_xlabel("k_U")
    ax.set_ylabel("mIoU")
    return _save(fig, path)


def plot_bars(summary: list[dict], label_keys, path, title: str = "") -> Path:
    labels = ["\n".join(str(r[k]) for k in label_keys) for r in summary]
    fig, ax = plt.subplots(figsize=(1.6 * len(summary) + 1, 4))
    ax.bar(range(len(summary)), [r["mean_miou"] for r in summary],
           yerr=[r["std_miou"] for r in summary], capsize=3)
    ax.set_xticks(range(len(summary)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("mIoU")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_histogram(report: dict, path, title: str = "") -> Path:
    """Log-magnitude histogram from a profiling report."""
    edges = np.asarray(report["edges"])
    counts = np.asarray(report["counts"])
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge")
    ax.set_xscale("log")
    ax.set_xlabel("|value|")
    ax.set_ylabel("count")
    ax.set_title(title or f"k={report['k']}  {report['failure_mode']}  zeros={report['zeros']}")
    return _save(fig, path)
