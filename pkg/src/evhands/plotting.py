"""PNG figures for training and evaluation reports (matplotlib, headless)."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import PckCurve  # noqa: E402


def plot_pck(path, curves: dict[str, PckCurve]) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, c in curves.items():
        ax.plot(c.thresholds, c.values, label=label)
    ax.set_xlabel("threshold (mm)")
    ax.set_ylabel("fraction of joints")
    ax.set_xlim(c.thresholds[0], c.thresholds[-1])
    ax.set_ylim(0, 1.01)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss_csv(csv_path, png_path) -> None:
    """Log-scale trace of every term in a long-format loss CSV."""
    series = defaultdict(lambda: ([], []))
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            xs, ys = series[row["term"]]
            xs.append(int(row["step"]))
            ys.append(float(row["value"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for term, (xs, ys) in sorted(series.items()):
        if any(y > 0 for y in ys):
            ax.plot(xs, [max(y, 1e-12) for y in ys], label=term, lw=1.5 if term == "total" else 0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("weighted loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)


def curve_from_csv(path) -> PckCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return PckCurve(np.array([float(r["threshold_mm"]) for r in rows]), np.array([float(r["value"]) for r in rows]))


def plot_eval_dir(out_dir) -> Path:
    out = Path(out_dir)
    curves = {"R-PCK": curve_from_csv(out / "r_pck.csv"), "RR-PCK": curve_from_csv(out / "rr_pck.csv")}
    png = out / "pck.png"
    plot_pck(png, curves)
    return png
