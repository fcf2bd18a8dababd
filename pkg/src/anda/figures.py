"""Figure rendering for experiment reports.

Renders the delimited reports to PNG files next to them: transfer-matrix
heatmaps, fool-count histograms, sampled-versus-final comparisons,
ablation sweeps, and training curves. Uses the non-interactive backend
so it works headless; figures are a presentation layer only and carry no
numbers the CSV/JSON files do not.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def transfer_heatmap(report, path, title="Attack success rate (%)"):
    """Annotated source-by-target heatmap; white-box cells starred."""
    values = 100.0 * report.asr
    fig, ax = plt.subplots(
        figsize=(1.6 + 1.1 * len(report.targets), 1.2 + 0.9 * len(report.sources))
    )
    image = ax.imshow(values, cmap="viridis", vmin=0.0, vmax=100.0)
    ax.set_xticks(range(len(report.targets)), report.targets, rotation=30, ha="right")
    ax.set_yticks(range(len(report.sources)), report.sources)
    ax.set_xlabel("target")
    ax.set_ylabel("source")
    ax.set_title(title)
    for i in range(len(report.sources)):
        for j in range(len(report.targets)):
            star = "*" if report.whitebox[i, j] else ""
            shade = "black" if values[i, j] > 55.0 else "white"
            ax.text(j, i, f"{values[i, j]:.1f}{star}", ha="center", va="center", color=shade)
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def fool_histogram_figure(histogram, path, title="Models fooled per adversary"):
    buckets = np.asarray(histogram.buckets)
    fig, ax = plt.subplots(figsize=(1.6 + 0.8 * len(buckets), 3.2))
    ax.bar(range(len(buckets)), buckets, color="#31688e")
    ax.set_xticks(range(len(buckets)))
    ax.set_xlabel("models fooled")
    ax.set_ylabel("adversaries")
    ax.set_title(title)
    for k, count in enumerate(buckets):
        ax.text(k, count, str(int(count)), ha="center", va="bottom")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def sampled_comparison_figure(rows, path, title="Final iterate vs sampled adversaries"):
    """Grouped bars per target: final-iterate, sampled, and conditioned rates."""
    targets = [row["target"] for row in rows]
    series = [
        ("final iterate", [100.0 * row["s1_asr"] for row in rows]),
        ("sampled", [100.0 * row["sampled_asr"] for row in rows]),
        (
            "sampled | final fools",
            [
                0.0 if row["conditioned_sampled_asr"] is None else 100.0 * row["conditioned_sampled_asr"]
                for row in rows
            ],
        ),
    ]
    x = np.arange(len(targets))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.8 + 1.3 * len(targets), 3.6))
    for k, (label, values) in enumerate(series):
        ax.bar(x + (k - 1) * width, values, width, label=label)
    ax.set_xticks(x, targets, rotation=30, ha="right")
    ax.set_ylabel("success rate (%)")
    ax.set_ylim(0.0, 105.0)
    ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def ablation_figure(rows, path, title=None):
    """One line per (source, target) pair across the sweep values."""
    pairs = []
    for row in rows:
        key = (row["source"], row["target"])
        if key not in pairs:
            pairs.append(key)
    values = []
    for row in rows:
        if row["value"] not in values:
            values.append(row["value"])
    positions = {value: k for k, value in enumerate(values)}
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for source, target in pairs:
        xs, ys = [], []
        for row in rows:
            if (row["source"], row["target"]) == (source, target):
                xs.append(positions[row["value"]])
                ys.append(100.0 * row["asr"])
        ax.plot(xs, ys, marker="o", label=f"{source}→{target}")
    ax.set_xticks(range(len(values)), [str(v) for v in values])
    axis_name = rows[0]["axis"] if rows else "value"
    ax.set_xlabel(axis_name)
    ax.set_ylabel("success rate (%)")
    ax.set_title(title or f"Sweep over {axis_name}")
    ax.legend(fontsize="x-small", ncols=2)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def training_curves(histories, path, title="Training"):
    """Loss and accuracy curves, one line per model."""
    fig, (loss_ax, acc_ax) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for name, history in histories:
        epochs = [row["epoch"] for row in history]
        loss_ax.plot(epochs, [row["mean_loss"] for row in history], label=name)
        acc_ax.plot(epochs, [100.0 * row["train_accuracy"] for row in history], label=name)
    loss_ax.set_xlabel("epoch")
    loss_ax.set_ylabel("mean loss")
    acc_ax.set_xlabel("epoch")
    acc_ax.set_ylabel("train accuracy (%)")
    loss_ax.legend(fontsize="small")
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
