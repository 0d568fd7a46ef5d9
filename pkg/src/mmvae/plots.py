"""Matplotlib figures written straight to files (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .tasks import BLOCK  # noqa: E402

V_LABELS = ("xL", "yL", "xR", "yR")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_loss(path, history):
    steps = [r["step"] for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, [r["total"] for r in history], label="total")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def plot_rollout(path, ro, title="rollout"):
    """Predicted vision means with +-2 sd bands against the true path."""
    k = np.arange(1, ro.horizon + 1)
    fig, axes = plt.subplots(2, 2, figsize=(8, 5), sharex=True)
    v = BLOCK["v"]
    for i, ax in enumerate(axes.flat):
        mean, sd = ro.means[:, v][:, i], np.sqrt(ro.variances[:, v][:, i])
        ax.plot(k, mean, label="predicted")
        ax.fill_between(k, mean - 2 * sd, mean + 2 * sd, alpha=0.25)
        if ro.truth is not None:
            ax.plot(k, ro.truth[:, v][:, i], "k--", label="true")
        ax.set_title(V_LABELS[i])
    axes[0, 0].legend(fontsize=8)
    fig.suptitle(title)
    return _save(fig, path)


def plot_tracking(path, reference, runs):
    """Left-camera image paths of the reference and each controller's run."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(reference[:, 0], reference[:, 1], "k--", label="reference")
    for name, tr in runs.items():
        ax.plot(tr.executed[:, 0], tr.executed[:, 1], label=f"{name} ({tr.mse:.3f}%)")
    ax.set_xlabel("xL (normalized)")
    ax.set_ylabel("yL (normalized)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_reconstruction(path, truth, outputs, dims, labels):
    """Reconstructed means (with +-2 sd) of selected sample columns per pattern."""
    n = len(dims)
    fig, axes = plt.subplots(n, 1, figsize=(7, 1.8 * n), sharex=True, squeeze=False)
    k = np.arange(len(truth))
    for ax, d, label in zip(axes[:, 0], dims, labels):
        ax.plot(k, truth[:, d], "k--", lw=1, label="true")
        for name, out in outputs.items():
            mean, sd = out.mean[:, d], np.sqrt(out.variance[:, d])
            ax.plot(k, mean, lw=1, label=name)
            ax.fill_between(k, mean - 2 * sd, mean + 2 * sd, alpha=0.2)
        ax.set_ylabel(label)
    axes[0, 0].legend(fontsize=7, ncol=len(outputs) + 1)
    axes[-1, 0].set_xlabel("row")
    return _save(fig, path)
