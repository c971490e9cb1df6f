"""Matplotlib renderings of the run artifacts, written next to the CSVs.

The CSVs remain the canonical outputs; these are convenience views. Uses the
Agg backend so runs work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .curriculum import Phase

_PHASE_COLORS = {
    Phase.CLEAN_ONLY: "#2a9d8f",
    Phase.COMBINED: "#e9c46a",
    Phase.NOISY_ONLY: "#e76f51",
}


def save_quality_by_class_figure(counts, path, tau: float) -> None:
    """Grouped clean/noisy bars per ordinal class."""
    counts = np.asarray(counts)
    k = counts.shape[0]
    x = np.arange(k)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, counts[:, 0], width=0.4, label="clean", color="#2a9d8f")
    ax.bar(x + 0.2, counts[:, 1], width=0.4, label="noisy", color="#e76f51")
    ax.set_xticks(x)
    ax.set_xticklabels([str(c) for c in range(k)])
    ax.set_xlabel("class")
    ax.set_ylabel("samples")
    ax.set_title(f"Pseudo-label distribution per class (tau={tau})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_val_accuracy_figure(log, path) -> None:
    """Validation accuracy per epoch with phase transitions marked."""
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = [e.epoch for e in log]
    accs = [e.val_acc for e in log]
    ax.plot(epochs, accs, lw=1.2, color="#264653")
    for entry in log:
        if entry.transitioned:
            ax.axvline(entry.epoch, color="#aaaaaa", ls="--", lw=0.8)
    seen = []
    for entry in log:
        if entry.phase not in seen:
            seen.append(entry.phase)
    for phase in seen:
        xs = [e.epoch for e in log if e.phase == phase]
        ys = [e.val_acc for e in log if e.phase == phase]
        ax.scatter(xs, ys, s=12, color=_PHASE_COLORS.get(phase, "#264653"),
                   label=phase.value)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation accuracy")
    ax.set_title("Training phases")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_figure(cm, path) -> None:
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(cm, cmap="Blues")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="black" if cm[i, j] < cm.max() * 0.6 else "white", fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title("Test confusion matrix")
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_grid_qwk_figure(aggregates, path) -> None:
    """Mean test QWK with stddev whiskers per (protocol, augmentation)."""
    labels = [f"{a['protocol']}\n{a['augmentation']}" for a in aggregates]
    means = [a["metrics"]["qwk"] for a in aggregates]
    stds = [a["metrics_std"]["qwk"] for a in aggregates]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(labels), 4))
    ax.bar(np.arange(len(labels)), means, yerr=stds, capsize=4, color="#2a9d8f")
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("test QWK (mean over seeds)")
    ax.set_title("Protocol / augmentation grid")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
