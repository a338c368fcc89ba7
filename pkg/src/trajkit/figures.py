"""Matplotlib renderings of the report-path tables.

Each function takes the already-computed rows that back a delimited
output and writes a PNG next to it. Figures are presentation only; the
CSV/JSON artifacts stay the machine-readable interface.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_PNG_META = {"Software": "trajkit"}  # keep bytes independent of the environment


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_PNG_META)
    plt.close(fig)


def render_eval_report(per_scene, path):
    """Per-scene bars for each metric."""
    metrics = ["ade", "fde", "kde_nll", "amd", "amv"]
    fig, axes = plt.subplots(1, len(metrics), figsize=(3 * len(metrics), 3))
    scenes = [row["scene"] for row in per_scene]
    for ax, m in zip(axes, metrics):
        ax.bar(scenes, [row[m] for row in per_scene], color="tab:blue")
        ax.set_title(m.upper() if m != "kde_nll" else "KDE-NLL")
        ax.set_xlabel("scene")
    _save(fig, path)


def render_sensitivity(rows, path):
    """Metric deltas versus the applied sample shift."""
    shifts = [row["shift"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in [("d_ade", "o-"), ("d_amd", "s-"), ("d_amv", "^-"), ("d_kde_nll", "d-")]:
        ax.plot(shifts, [row[key] for row in rows], style, label=key[2:].upper())
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("shift applied to all samples (m)")
    ax.set_ylabel("metric change vs unshifted")
    ax.legend()
    ax.set_title("Metric sensitivity to distribution shift")
    _save(fig, path)


def render_kernel_study(rows, kernels, path):
    """Grouped bars: KDE-NLL per kernel for each mixture family."""
    fig, ax = plt.subplots(figsize=(8, 4))
    width = 0.8 / len(kernels)
    for i, kernel in enumerate(kernels):
        xs = [j + i * width for j in range(len(rows))]
        ax.bar(xs, [row[kernel] for row in rows], width, label=kernel)
    ax.set_xticks([j + 0.4 for j in range(len(rows))])
    ax.set_xticklabels([row["family"] for row in rows], rotation=20)
    ax.set_ylabel("KDE-NLL (nats)")
    ax.legend(fontsize=8)
    ax.set_title("Kernel choice changes the density score")
    _save(fig, path)


def render_convergence_study(rows, path):
    """Mixture-fit errors and distance stability versus sample count."""
    counts = [row["n_samples"] for row in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.loglog(counts, [row["mean_error"] for row in rows], "o-", label="mean error")
    ax1.loglog(counts, [row["cov_error"] for row in rows], "s-", label="cov error")
    ax1.set_xlabel("samples per fit")
    ax1.set_ylabel("error (m / m$^2$)")
    ax1.legend()
    ax2.semilogx(counts, [row["md"] for row in rows], "o-")
    ax2.set_xlabel("samples per fit")
    ax2.set_ylabel("distance of fixed test point")
    fig.suptitle("Mixture fit convergence with sample count")
    _save(fig, path)


def render_training_curve(epoch_losses, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(epoch_losses)), epoch_losses, "-")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean batch loss")
    ax.set_title("Training loss")
    _save(fig, path)
