"""Static SVG figures, each built only from CSV files the runner wrote."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def training_curves(trace_paths, out_path):
    """Episode return and epsilon against environment steps, one line per seed."""
    fig, (ax_r, ax_e) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    for path in trace_paths:
        rows = _rows(path)
        ends = [r for r in rows if r["return"] != ""]
        ax_r.plot([int(r["step"]) for r in ends], [float(r["return"]) for r in ends],
                  lw=1, label=str(path).rsplit("trace_", 1)[-1].removesuffix(".csv"))
        ax_e.plot([int(r["step"]) for r in rows], [float(r["epsilon"]) for r in rows], lw=0.8)
    ax_r.set_ylabel("episode return")
    ax_e.set_ylabel("epsilon")
    ax_e.set_xlabel("environment step")
    ax_r.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def grid_plot(grid_csv, out_path, column="normalized", title=""):
    """Heatmap for 2-D grids, line plot when one axis has a single value."""
    rows = _rows(grid_csv)
    masses = sorted({float(r["mass_rel"]) for r in rows})
    frictions = sorted({float(r["friction_rel"]) for r in rows})
    vals = np.full((len(masses), len(frictions)), np.nan)
    for r in rows:
        vals[masses.index(float(r["mass_rel"])), frictions.index(float(r["friction_rel"]))] = float(r[column])
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    if len(masses) > 1 and len(frictions) > 1:
        im = ax.imshow(vals, origin="lower", cmap="viridis", aspect="auto",
                       extent=(frictions[0], frictions[-1], masses[0], masses[-1]))
        fig.colorbar(im, ax=ax, label=column)
        ax.set_xlabel("friction multiplier")
        ax.set_ylabel("mass multiplier")
    elif len(frictions) > 1:
        ax.plot(frictions, vals[0], marker="o")
        ax.set_xlabel("friction multiplier")
        ax.set_ylabel(column)
    else:
        ax.plot(masses, vals[:, 0], marker="o")
        ax.set_xlabel("mass multiplier")
        ax.set_ylabel(column)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
