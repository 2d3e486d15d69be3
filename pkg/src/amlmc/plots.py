"""Log-log cost-versus-MSE plots from benchmark point files."""

from __future__ import annotations

import csv
import warnings

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

__all__ = ["read_points_csv", "emit_plot"]


def read_points_csv(path) -> dict:
    """Parse a points CSV into {method: (mse array, cost array)}.

    Expects columns method, grid, mse, cost (wall_time optional).  Raises a
    ValueError naming the offending line on malformed input.
    """
    series = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"method", "mse", "cost"} <= set(
                reader.fieldnames):
            raise ValueError(f"{path}: line 1: need columns method, mse, cost")
        for lineno, row in enumerate(reader, start=2):
            try:
                mse = float(row["mse"])
                cost = float(row["cost"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            series.setdefault(row["method"], []).append((mse, cost))
    return {m: (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
            for m, pts in series.items()}


def emit_plot(points_csv, out_path, title: str = "") -> None:
    """Render one SVG log-log scatter with per-method OLS fit lines."""
    series = read_points_csv(points_csv)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    markers = ["o", "s", "^", "d", "v", "*"]
    for i, (method, (mse, cost)) in enumerate(sorted(series.items())):
        keep = (mse > 0) & (cost > 0)
        if not np.any(keep):
            warnings.warn(f"series {method!r} has no positive points; omitted")
            continue
        mse, cost = mse[keep], cost[keep]
        lm, lc = np.log10(mse), np.log10(cost)
        color = f"C{i % 10}"
        ax.plot(lm, lc, markers[i % len(markers)], color=color, ls="none",
                label=method)
        if len(mse) >= 2:
            slope, intercept = np.polyfit(lm, lc, 1)
            grid = np.linspace(lm.min(), lm.max(), 50)
            ax.plot(grid, slope * grid + intercept, "-", color=color, lw=1,
                    label=f"{method} fit ({slope:.2f})")
    ax.set_xlabel(r"$\log_{10}$ MSE")
    ax.set_ylabel(r"$\log_{10}$ cost")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
