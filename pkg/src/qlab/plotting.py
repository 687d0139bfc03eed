"""Figures for the experiment reports, rendered off-screen to PNG files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_sk(rows, path):
    mu = np.array([r["mu"] for r in rows])
    dev = np.array([r["mean_deviation"] for r in rows])
    se = np.array([r["stderr"] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(mu, dev, yerr=2 * se, marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("mass density mu")
    ax.set_ylabel("mean sup |u_mu - u|")
    _save(fig, path)


def plot_energy(times, energy, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(times, energy)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.set_yscale("log")
    _save(fig, path)


def plot_path(times, phi, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k in range(phi.shape[1]):
        ax.plot(times, phi[:, k], label=f"mode {k + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("coefficient")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_sweep(points, path):
    labels = [f"{p['scale']:g}/{'heat' if p['mu'] is None else p['mu']}" for p in points]
    gaps = [100 * p["gap"] for p in points]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(gaps)), gaps)
    ax.axhline(2, color="k", lw=0.8, ls="--")
    ax.axhline(-2, color="k", lw=0.8, ls="--")
    ax.set_xticks(range(len(gaps)), labels, rotation=60, fontsize=7)
    ax.set_ylabel("relative gap (%)")
    _save(fig, path)


def plot_exit(records, barrier, path):
    ok = [r for r in records if r.valid]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if ok:
        eps = np.array([r.eps for r in ok])
        est = np.array([r.log_estimate for r in ok])
        err = np.array([r.log_std_error for r in ok])
        ax.errorbar(eps, est, yerr=2 * err, marker="o", capsize=3, label="eps log E tau")
    ax.axhline(barrier, color="k", ls="--", lw=0.8, label="barrier")
    ax.set_xlabel("eps")
    ax.legend(fontsize=8)
    _save(fig, path)
