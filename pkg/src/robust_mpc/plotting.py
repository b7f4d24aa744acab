"""Figures written next to the CSV exports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLORS = {"S-MPC": "tab:blue", "R-MPC": "tab:red", "RS-MPC": "tab:green"}


def _figsize(width=6.0):
    golden = (math.sqrt(5) - 1.0) / 2.0
    return (width, width * golden)


def plot_outputs(results: dict, path, band: float = 0.05) -> None:
    """Load angle of every controller with the settling band around the reference."""
    fig, ax = plt.subplots(figsize=_figsize())
    r = None
    for label, res in results.items():
        ax.plot(res.t, res.y[:, 0], label=label, color=COLORS.get(label), lw=1.2)
        r = res.r[:, 0]
    if r is not None:
        t = next(iter(results.values())).t
        ax.plot(t, r, "k--", lw=0.8, label="reference")
        ax.fill_between(t, r * (1 - band), r * (1 + band), color="0.85", lw=0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("load angle [rad]")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_inputs(results: dict, path) -> None:
    fig, ax = plt.subplots(figsize=_figsize())
    for label, res in results.items():
        ax.step(res.t, res.u[:, 0], where="post", label=label, color=COLORS.get(label), lw=1.0)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("voltage [V]")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_boxplot(summary, path, title: str | None = None) -> None:
    labels = [c for c in summary.controllers if summary.samples(c).size]
    data = [summary.samples(c) for c in labels]
    fig, ax = plt.subplots(figsize=_figsize())
    if data:
        ax.boxplot(data, tick_labels=labels, medianprops={"color": "red"})
    ax.set_ylabel("MSE [rad$^2$]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
