"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def plot_pck(curves: dict, path, title: str | None = None) -> Path:
    """3-D PCK against threshold, one line per labelled curve."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 2.6))
        for label, curve in curves.items():
            ts = [t for t, _ in curve]
            ps = [p for _, p in curve]
            ax.plot(ts, ps, drawstyle="steps-post", label=label, lw=1.4)
        ax.set_xlabel("error threshold (mm)")
        ax.set_ylabel("3D PCK")
        ax.set_ylim(-0.02, 1.02)
        if title:
            ax.set_title(title)
        if len(curves) > 1:
            ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path


def plot_loss_history(history, path, keys=("loss_2d", "loss_z", "loss_dep", "gan_g", "gan_d")) -> Path:
    """Training curves from the list of per-step log records."""
    path = Path(path)
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        for key in keys:
            pts = [(r["step"], r[key]) for r in history if key in r and r[key] is not None]
            if pts:
                steps, vals = zip(*pts)
                ax.plot(steps, vals, label=key, lw=1.0)
        ax.set_xlabel("step")
        ax.set_yscale("symlog", linthresh=1e-3)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
    return path
