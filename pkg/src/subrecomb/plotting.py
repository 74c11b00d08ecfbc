"""Figures for ablation results and training curves (written to files, never shown)."""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

VARIANT_LABELS = {"whole_head": "Whole Head", "h_stack": "H-Stack", "im_stack": "IM-Stack"}
TARGET_COLORS = {"global": "#4c72b0", "ica": "#dd8452", "mca": "#55a868"}

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "subrecomb",  # stable SVG ids
}


def row_label(variant, flags):
    name = VARIANT_LABELS.get(variant, variant)
    if flags in ("none", ""):
        return name
    return name + "".join(f" + {f}" for f in flags)


def _nan_to_zero(v):
    return 0.0 if v is None or (isinstance(v, float) and math.isnan(v)) else v


def plot_ablation_bars(aggregated, path, metric="auc"):
    """Grouped bars: one group per (variant, flags) row, one bar per target."""
    labels = [row_label(r["method"], r["flags"]) for r in aggregated]
    x = np.arange(len(labels))
    width = 0.26
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels) + 1.5), 3.2))
        for k, target in enumerate(("global", "ica", "mca")):
            vals = [_nan_to_zero(r[f"{target}_{metric}"]) for r in aggregated]
            ax.bar(x + (k - 1) * width, vals, width, label=target.upper() if target != "global" else "Global",
                   color=TARGET_COLORS[target])
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylim(0, 1.18)
        ax.set_yticks(np.linspace(0, 1, 6))
        ax.set_ylabel("class AUC" if metric == "auc" else "side accuracy")
        if metric == "auc":
            ax.axhline(0.5, color="0.6", lw=0.8, ls="--")
        ax.legend(frameon=False, ncol=3, loc="upper center")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_fold_scatter(rows, path):
    """Per-fold global AUC for every row, with the fold mean marked."""
    order = []
    for r in rows:
        key = (r["method"], r["flags"])
        if key not in order:
            order.append(key)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(order) + 1.5), 3.0))
        for i, key in enumerate(order):
            vals = np.array([r["global_auc"] for r in rows if (r["method"], r["flags"]) == key], float)
            vals = vals[~np.isnan(vals)]
            if vals.size:
                jitter = np.linspace(-0.15, 0.15, vals.size)
                ax.plot(i + jitter, vals, "o", ms=4, color="0.4")
                ax.plot([i - 0.25, i + 0.25], [vals.mean()] * 2, color="C3", lw=2)
        ax.set_xticks(range(len(order)))
        ax.set_xticklabels([row_label(*k) for k in order], rotation=30, ha="right")
        ax.set_ylim(0, 1.02)
        ax.set_ylabel("global class AUC (test folds)")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_histories(curves, path, title=None):
    """Training loss and validation global AUC per epoch; ``curves`` is [(label, history), ...]."""
    with plt.rc_context(RC):
        fig, (a, b) = plt.subplots(1, 2, figsize=(7, 2.8))
        for k, (label, history) in enumerate(curves):
            epochs = [h["epoch"] for h in history]
            a.plot(epochs, [h["train_loss"] for h in history], color=f"C{k}", lw=1, label=label)
            b.plot(epochs, [h["val_auc_global"] for h in history], color=f"C{k}", lw=1, label=label)
        a.set_xlabel("epoch")
        a.set_ylabel("train BCE")
        b.set_xlabel("epoch")
        b.set_ylabel("validation global AUC")
        b.set_ylim(0, 1.02)
        if len(curves) > 1:
            b.legend(frameon=False, fontsize=7)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path


def plot_volume_projection(arr, path, title=None):
    """Maximum-intensity projections of a (c, x, y, z) volume, one row per channel."""
    arr = np.asarray(arr)
    c = arr.shape[0]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(c, 3, figsize=(8, 2.6 * c), squeeze=False)
        for ch in range(c):
            for k, (axis, name) in enumerate(((2, "axial (x-y)"), (1, "coronal (x-z)"), (0, "sagittal (y-z)"))):
                ax = axes[ch, k]
                ax.imshow(arr[ch].max(axis=axis).T, origin="lower", cmap="gray_r", interpolation="nearest")
                ax.set_axis_off()
                if ch == 0:
                    ax.set_title(name)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return path
