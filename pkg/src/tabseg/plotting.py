"""Figure style and the two report figures (metric bars, loss curves)."""

from __future__ import annotations

import io
from math import sqrt

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data import atomic_write_bytes  # noqa: E402

golden_mean = (sqrt(5.0) - 1.0) / 2.0
fig_width = 6.8
colors = ["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "font.size": 8,
    "font.family": "DejaVu Sans",
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 100,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
    "svg.hashsalt": "tabseg",
}


def new(nrows: int = 1, ncols: int = 1, scale: float = 1.0):
    with plt.rc_context(params):
        fig, ax = plt.subplots(nrows, ncols, squeeze=False,
                               figsize=(fig_width * scale, fig_width * golden_mean * scale))
    return fig, ax


def save(fig, path) -> None:
    # no Software/date metadata so reruns are byte-identical
    buf = io.BytesIO()
    with plt.rc_context(params):
        fig.savefig(buf, format="png", metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def metric_bars(summary: dict, projects: list[str], methods: list[str], tissues: list[str],
                metric: str, labels: dict, path) -> None:
    """Grouped bars of ``mean +/- sd`` per tissue and method, one panel per project."""
    with plt.rc_context(params):
        fig, axes = new(1, len(projects), scale=max(1.0, 0.6 * len(projects)))
        width = 0.8 / max(1, len(methods))
        x = np.arange(len(tissues))
        for ax, project in zip(axes[0], projects):
            for j, method in enumerate(methods):
                stats = [summary.get((project, method, t, metric)) for t in tissues]
                means = [s[0] if s and s[0] is not None else np.nan for s in stats]
                sds = [s[1] if s and s[1] is not None else 0.0 for s in stats]
                ax.bar(x + (j - (len(methods) - 1) / 2) * width, means, width, yerr=sds,
                       capsize=2, label=labels.get(method, method), color=colors[j % len(colors)])
            ax.set_xticks(x, tissues)
            ax.set_title(project)
            ax.set_ylabel(labels.get(metric, metric))
        axes[0][-1].legend(loc="lower right")
        fig.tight_layout()
        save(fig, path)


def loss_curves(histories: dict[str, list[dict]], labels: dict, path) -> None:
    with plt.rc_context(params):
        fig, axes = new()
        ax = axes[0][0]
        for j, (name, hist) in enumerate(histories.items()):
            epochs = [h["epoch"] for h in hist]
            c = colors[j % len(colors)]
            ax.plot(epochs, [h["train_loss"] for h in hist], color=c, ls="--",
                    label=f"{labels.get(name, name)} train")
            ax.plot(epochs, [h["val_loss"] for h in hist], color=c,
                    label=f"{labels.get(name, name)} val")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("masked MSE")
        ax.legend(ncol=2)
        fig.tight_layout()
        save(fig, path)
