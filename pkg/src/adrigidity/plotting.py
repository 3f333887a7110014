"""Figures rendered to files next to the CLI's delimited output."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    tmp = os.path.join(folder, ".tmp-" + os.path.basename(path))
    fig.savefig(tmp, dpi=120, format=os.path.splitext(path)[1].lstrip(".") or "png")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def plot_convergence(trajectory, path, labels=None, title=None):
    """Per-node position error against round on a log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if trajectory.errors is not None and len(trajectory.errors):
        rounds = np.arange(len(trajectory.errors))
        labels = labels or [str(i) for i in range(trajectory.errors.shape[1])]
        floor = np.finfo(float).tiny
        for m, lab in enumerate(labels):
            ax.semilogy(rounds, np.maximum(trajectory.errors[:, m], floor), label=f"node {lab}")
        ax.legend(fontsize="small")
    ax.set_xlabel("round")
    ax.set_ylabel("position error")
    ax.set_title(title or "distributed protocol convergence")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_trials(trajectories, path, title=None):
    """Total error of several noisy runs overlaid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, tr in enumerate(trajectories):
        err = tr.total_error()
        if err is not None and len(err):
            ax.semilogy(np.arange(len(err)), np.maximum(err, np.finfo(float).tiny), lw=0.8, label=f"trial {k}")
    ax.set_xlabel("round")
    ax.set_ylabel("total position error")
    ax.set_title(title or "noisy runs")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_noise_sweep(rows, path):
    """Actual error and its bound against sigma; rows are dicts from the noise sweep."""
    fig, ax = plt.subplots(figsize=(6, 4))
    sig = np.array([r["sigma"] for r in rows], dtype=float)
    err = np.array([r["actual_error"] for r in rows], dtype=float)
    bound = np.array([r["bound"] if r["applicable"] else np.nan for r in rows], dtype=float)
    pos = sig > 0
    if pos.any():
        ax.loglog(sig[pos], np.maximum(err[pos], np.finfo(float).tiny), "o", ms=3, label="actual error")
        ok = pos & np.isfinite(bound)
        if ok.any():
            ax.loglog(sig[ok], bound[ok], "x", ms=4, label="bound")
        ax.legend(fontsize="small")
    ax.set_xlabel("sigma")
    ax.set_ylabel("free-node position error")
    ax.set_title("noise sweep")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)
