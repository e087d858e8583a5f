"""Figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

# PNG metadata without the matplotlib version keeps reruns byte-identical across installs
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)


def plot_curves(curves: dict, path) -> None:
    """Unweighted batch HSIC per step (left axis) and validation Recall@50 (right axis)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        ax2 = ax.twinx()
        for k, (label, log) in enumerate(curves.items()):
            color = f"C{k}"
            ax.plot(log.steps, log.hsic, color=color, lw=0.8, alpha=0.8, label=f"HSIC {label}")
            pts = [(s, r) for s, r in zip(log.steps, log.recall50) if r is not None]
            if pts:
                xs, ys = zip(*pts)
                ax2.plot(xs, ys, color=color, ls="--", marker="o", ms=2.5, label=f"Recall@50 {label}")
        ax.set_xlabel("training step")
        ax.set_ylabel("HSIC (train batch)")
        ax2.set_ylabel("Recall@50 (valid)")
        lines = ax.get_legend_handles_labels()
        lines2 = ax2.get_legend_handles_labels()
        ax.legend(lines[0] + lines2[0], lines[1] + lines2[1], loc="lower right", frameon=False)
        _save(fig, path)


def plot_weight_histogram(edges: np.ndarray, counts: np.ndarray, path) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        total = max(int(np.sum(counts)), 1)
        ax.bar(edges[:-1], np.asarray(counts) / total, width=np.diff(edges), align="edge", edgecolor="k", lw=0.4)
        ax.set_xlim(edges[0], edges[-1])
        ax.set_xlabel("sample weight")
        ax.set_ylabel("fraction of samples")
        _save(fig, path)


def plot_metrics(reports, path) -> None:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.6), sharey=False)
        names = ("recall", "ndcg", "hr")
        width = 0.8 / max(len(reports), 1)
        for k, rep in enumerate(reports):
            ps = sorted(rep.recall)
            x = np.arange(len(ps)) + k * width
            for ax, name in zip(axes, names):
                ax.bar(x, [getattr(rep, name)[p] for p in ps], width=width, label=rep.split)
                ax.set_xticks(np.arange(len(ps)) + 0.4 - width / 2)
                ax.set_xticklabels([f"@{p}" for p in ps])
                ax.set_title(name.upper() if name == "hr" else name.capitalize() if name == "recall" else "NDCG")
        axes[0].legend(frameon=False)
        _save(fig, path)


def plot_ablation(rows, path) -> None:
    """Bar chart of mean Recall@20 per lambda for the in-distribution and shifted splits."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        lams = sorted({r["lam"] for r in rows})
        for k, split in enumerate(("valid", "test")):
            means = [np.mean([r[f"{split}_recall20"] for r in rows if r["lam"] == lam]) for lam in lams]
            ax.bar(np.arange(len(lams)) + 0.4 * k, means, width=0.4, label="in-dist valid" if split == "valid" else "OOD test")
        ax.set_xticks(np.arange(len(lams)) + 0.2)
        ax.set_xticklabels([f"$\\lambda$={lam:g}" for lam in lams])
        ax.set_ylabel("Recall@20")
        ax.legend(frameon=False)
        _save(fig, path)
