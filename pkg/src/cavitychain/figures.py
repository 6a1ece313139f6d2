"""Figure rendering for the batch front-end.

Every plot lands as a PNG next to the delimited output.  Rendering is
headless (Agg) and styled once here so reports look the same everywhere.
PNG bytes are not covered by the determinism guarantee; the CSV and JSON
artifacts are the canonical record.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

DPI = 150
_FIGSIZE = (6.0, 3.6)


def _new_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=DPI)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    return fig, ax


def save_observable_figures(aggregate, directory: Path) -> list[Path]:
    """One per-cycle curve with instance error bars per observable."""
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (mean, se) in aggregate.items():
        cycles = np.arange(1, len(mean) + 1)
        fig, ax = _new_axes(name.replace("_", " "), "cycle", name)
        ax.errorbar(cycles, mean, yerr=se, marker="o", markersize=3,
                    capsize=2, linewidth=1)
        ax.set_xticks(cycles)
        path = directory / f"{name}.png"
        fig.savefig(path, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def save_distribution_figure(dist, directory: Path,
                             stem: str = "distribution") -> Path:
    """Output-probability bar chart over the qubit bitstrings."""
    directory.mkdir(parents=True, exist_ok=True)
    probs = np.asarray(dist.probs)
    width = (dist.L + 3) // 4
    fig, ax = _new_axes("output distribution", "bitstring (hex)",
                        "probability")
    ax.bar(np.arange(len(probs)), probs, width=0.9)
    shown = np.nonzero(probs > probs.max() / 50)[0] if probs.max() > 0 \
        else np.arange(0)
    ax.set_xticks(shown)
    ax.set_xticklabels([f"{k:0{width}x}" for k in shown], rotation=90,
                       fontsize=6)
    path = directory / f"{stem}.png"
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path
