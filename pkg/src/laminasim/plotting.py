"""Deterministic SVG plots of joint trajectories and identification fits."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (7.0, 4.0)
MAX_POINTS = 4000  # per plotted line; the CSV output keeps every sample
_RC = {
    "svg.hashsalt": "laminasim",
    "svg.fonttype": "none",
    "path.simplify": False,
    "font.size": 9,
}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _stride(n: int) -> int:
    return max(1, -(-n // MAX_POINTS))


def _series_plot(path, t, columns, labels, ylabel, title) -> None:
    k = _stride(len(t))
    t, columns = np.asarray(t)[::k], np.asarray(columns)[::k]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for col, label in zip(np.asarray(columns).T, labels):
            ax.plot(t, col, lw=1.0, label=label)
        ax.set_xlabel("time (s)")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(True, lw=0.4, alpha=0.5)
        if len(labels):
            ax.legend(loc="upper right", fontsize=8, ncol=min(3, len(labels)))
        fig.tight_layout()
        _save(fig, path)


def plot_angles(traj, path) -> None:
    _series_plot(path, traj.t, traj.q, list(traj.joint_ids), "joint angle (rad)", "Joint angles")


def plot_velocities(traj, path) -> None:
    _series_plot(path, traj.t, traj.qdot, list(traj.joint_ids), "joint rate (rad/s)", "Joint angular velocities")


def plot_fit_overlay(path, t, measured, fitted, predicted=None) -> None:
    """Measured angle, smoothed series and (optionally) the identified model's free response."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        ax.plot(t, measured, ".", ms=1.5, color="0.55", label="measured")
        ax.plot(t, fitted, lw=1.0, label="series fit")
        if predicted is not None:
            ax.plot(t, predicted, "--", lw=1.0, label="identified model")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("joint angle (rad)")
        ax.set_title("Identification fit")
        ax.grid(True, lw=0.4, alpha=0.5)
        ax.legend(loc="upper right", fontsize=8)
        fig.tight_layout()
        _save(fig, path)
