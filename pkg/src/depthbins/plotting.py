"""Figure rendering for reports: confusion heat-maps, attention-gate
activation curves, colorized depth maps, and metric bar charts."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from depthbins.metrics import ConfusionMatrix

# near->far color conventions: indoor blue->red, outdoor yellow->purple
DOMAIN_CMAPS = {"indoor": "jet", "outdoor": "viridis_r"}


def save_confusion_heatmap(cm: ConfusionMatrix, path, title: str | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    n = cm.counts.shape[0]
    extent = (cm.label_lo - 0.5, cm.label_hi + 0.5, cm.label_hi + 0.5, cm.label_lo - 0.5)
    im = ax.imshow(cm.normalized, cmap="viridis", vmin=0.0, extent=extent)
    ax.set_xlabel("predicted label")
    ax.set_ylabel("true label")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_gate_plot(gate_sets: dict, path, block_names=None) -> None:
    """Line plot of per-channel gate activations.

    gate_sets maps an input id to its list of gate vectors ordered from
    the coarsest fusion block to the finest.
    """
    n_blocks = max(len(v) for v in gate_sets.values())
    if block_names is None:
        block_names = [f"fusion block {n_blocks - i} (stride /{2 ** (i + 2)})"
                       for i in range(n_blocks)][::-1]
    fig, axes = plt.subplots(n_blocks, 1, figsize=(7, 2.1 * n_blocks), sharex=False)
    if n_blocks == 1:
        axes = [axes]
    for b, ax in enumerate(axes):
        for input_id, gates in gate_sets.items():
            ax.plot(np.asarray(gates[b]).ravel(), label=input_id, linewidth=1.0)
        ax.set_ylabel("activation")
        ax.set_ylim(0, 1)
        ax.set_title(block_names[b], fontsize=9)
    axes[-1].set_xlabel("channel")
    axes[0].legend(fontsize=7, ncol=2, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def colorize_depth(depth: np.ndarray, domain: str, valid: np.ndarray | None = None,
                   vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Map a depth image to uint8 RGB with the domain's color convention."""
    cmap = plt.get_cmap(DOMAIN_CMAPS.get(domain, "viridis_r"))
    d = np.asarray(depth, dtype=np.float64)
    sel = valid if valid is not None else np.isfinite(d)
    lo = vmin if vmin is not None else (d[sel].min() if sel.any() else 0.0)
    hi = vmax if vmax is not None else (d[sel].max() if sel.any() else 1.0)
    normed = np.clip((d - lo) / max(hi - lo, 1e-12), 0, 1)
    rgb = (cmap(normed)[:, :, :3] * 255).round().astype(np.uint8)
    if valid is not None:
        rgb[~valid] = 0
    return rgb


def save_depth_png(depth: np.ndarray, path, domain: str,
                   valid: np.ndarray | None = None) -> None:
    from PIL import Image

    Image.fromarray(colorize_depth(depth, domain, valid)).save(path)


def save_metric_bars(values: dict, metric: str, path, title: str | None = None) -> None:
    """Grouped bar chart: values maps row name -> {group name -> number}."""
    rows = list(values)
    groups = sorted({g for row in values.values() for g in row})
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    x = np.arange(len(groups))
    for i, row in enumerate(rows):
        heights = [values[row].get(g, np.nan) for g in groups]
        ax.bar(x + i * width, heights, width, label=row)
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(groups)
    ax.set_ylabel(metric)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
